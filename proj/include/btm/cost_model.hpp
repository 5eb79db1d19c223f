#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/model.hpp"
#include "btm/tmce.hpp"

namespace btm {

// Analytic encoder cost in multiply-accumulates. Per block and modality with
// N tokens and C channels: attention score+value products cost 2N²C, the
// q/k/v/o projections 4NC², and the 4x MLP another 8NC².
struct LayerCost {
    int layer = 0;  // 1-based block index
    int64_t search_tokens = 0;  // search tokens entering the block
    int64_t tokens = 0;         // per-modality total (both templates + search)
    int64_t attn_macs = 0;      // summed over the two modality streams
    int64_t proj_macs = 0;
};

struct CostReport {
    std::string strategy;
    std::vector<LayerCost> layers;
    int64_t total_macs = 0;
};

// Search tokens entering each of the depth blocks under a pruning strategy.
inline std::vector<int> token_schedule(const RunConfig& cfg, Elimination strategy) {
    std::vector<int> out;
    int ns = cfg.search_tokens();
    for (int l = 1; l <= cfg.depth; ++l) {
        out.push_back(ns);
        bool prunes = strategy != Elimination::None &&
                      std::find(cfg.prune_layers.begin(), cfg.prune_layers.end(), l) != cfg.prune_layers.end();
        if (prunes) ns = keep_count(ns, cfg.keep_ratio);
    }
    return out;
}

inline CostReport analytic_cost(const RunConfig& cfg, Elimination strategy) {
    CostReport r;
    r.strategy = elimination_name(strategy);
    const int64_t c = cfg.channels;
    const int64_t nz = cfg.template_tokens();
    std::vector<int> sched = token_schedule(cfg, strategy);
    for (int l = 1; l <= cfg.depth; ++l) {
        LayerCost lc;
        lc.layer = l;
        lc.search_tokens = sched[static_cast<size_t>(l - 1)];
        lc.tokens = 2 * nz + lc.search_tokens;
        lc.attn_macs = 2 * (2 * lc.tokens * lc.tokens * c);
        lc.proj_macs = 2 * (12 * lc.tokens * c * c);
        r.total_macs += lc.attn_macs + lc.proj_macs;
        r.layers.push_back(lc);
    }
    return r;
}

inline std::string cost_csv(const std::vector<CostReport>& reports) {
    std::string out = "strategy,layer,search_tokens,tokens,attn_macs,proj_macs\n";
    char buf[200];
    for (auto& r : reports) {
        for (auto& lc : r.layers) {
            std::snprintf(buf, sizeof buf, "%s,%d,%lld,%lld,%lld,%lld\n", r.strategy.c_str(), lc.layer,
                          static_cast<long long>(lc.search_tokens), static_cast<long long>(lc.tokens),
                          static_cast<long long>(lc.attn_macs), static_cast<long long>(lc.proj_macs));
            out += buf;
        }
        std::snprintf(buf, sizeof buf, "%s,total,,,,%lld\n", r.strategy.c_str(),
                      static_cast<long long>(r.total_macs));
        out += buf;
    }
    return out;
}

struct BenchResult {
    std::string strategy;
    double frames_per_sec = 0;
    double tokens_per_sec = 0;
};

// Wall-clock forward throughput on synthetic inputs. Tokens are counted at
// the model input (both modalities, both templates plus search), so the
// ratio between strategies reflects frames per second.
inline BenchResult bench_forward(const RunConfig& cfg, int repeats) {
    TrackModel model(cfg);
    CounterRng rng = CounterRng(cfg.seed).derive("bench");
    BackboneImages in;
    auto rand_image = [&](int size) {
        Tensor t = Tensor::zeros({size, size, 3});
        for (auto& v : t.mutable_values()) v = rng.uniform(-1.0, 1.0);
        return t;
    };
    in.z_static_rgb = rand_image(cfg.template_size);
    in.z_dynamic_rgb = rand_image(cfg.template_size);
    in.z_static_tir = rand_image(cfg.template_size);
    in.z_dynamic_tir = rand_image(cfg.template_size);
    in.x_rgb = rand_image(cfg.search_size);
    in.x_tir = rand_image(cfg.search_size);

    model.forward(in);  // warmup outside the timed region
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) model.forward(in);
    auto t1 = std::chrono::steady_clock::now();
    double sec = std::chrono::duration<double>(t1 - t0).count();

    BenchResult b;
    b.strategy = cfg.elimination_strategy;
    b.frames_per_sec = repeats / sec;
    double tokens_per_frame = 2.0 * (2 * cfg.template_tokens() + cfg.search_tokens());
    b.tokens_per_sec = b.frames_per_sec * tokens_per_frame;
    return b;
}

inline std::string bench_csv(const std::vector<BenchResult>& rows) {
    std::string out = "strategy,frames_per_sec,tokens_per_sec\n";
    char buf[160];
    for (auto& b : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.3f,%.1f\n", b.strategy.c_str(), b.frames_per_sec, b.tokens_per_sec);
        out += buf;
    }
    return out;
}

}  // namespace btm
