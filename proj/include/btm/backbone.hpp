#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "btm/config.hpp"
#include "btm/nn.hpp"
#include "btm/tdtb.hpp"
#include "btm/tmce.hpp"

namespace btm {

struct BackboneImages {
    Tensor z_static_rgb, z_dynamic_rgb;  // [T,T,3] in [-1,1]
    Tensor z_static_tir, z_dynamic_tir;
    Tensor x_rgb, x_tir;  // [S,S,3]
};

struct BackboneResult {
    Tensor feat_rgb, feat_tir;  // [G,G,C]; cells of eliminated tokens are zero
    ForwardStats stats;
};

// Two parallel per-modality encoder streams over the token sequence
// [static template | dynamic template | search]. The patch projection and
// positional tables are shared across modalities; block weights are not.
// After designated blocks, search tokens are scored from that block's
// attention and one shared keep-decision is applied to both streams;
// bridging layers exchange information between the streams.
class Backbone {
public:
    Backbone() = default;
    Backbone(const RunConfig& cfg, CounterRng& rng)
        : cfg_(cfg), embed_(cfg.patch_size, cfg.template_size, cfg.search_size, cfg.channels, rng) {
        rgb_.reserve(static_cast<size_t>(cfg.depth));
        tir_.reserve(static_cast<size_t>(cfg.depth));
        for (int i = 0; i < cfg.depth; ++i) rgb_.emplace_back(cfg.channels, cfg.heads, cfg.mlp_ratio, rng);
        for (int i = 0; i < cfg.depth; ++i) tir_.emplace_back(cfg.channels, cfg.heads, cfg.mlp_ratio, rng);
        if (cfg.tdtb_enabled) tdtb_ = Tdtb(cfg.channels, cfg.heads, cfg.mlp_ratio, rng);
    }

    BackboneResult forward(const BackboneImages& im) const {
        BackboneResult res;
        ForwardStats& stats = res.stats;
        int nz = embed_.num_template_tokens();
        int nx = embed_.num_search_tokens();

        Tensor t_rgb = concat_rows({embed_.embed(im.z_static_rgb, true), embed_.embed(im.z_dynamic_rgb, true),
                                    embed_.embed(im.x_rgb, false)});
        Tensor t_tir = concat_rows({embed_.embed(im.z_static_tir, true), embed_.embed(im.z_dynamic_tir, true),
                                    embed_.embed(im.x_tir, false)});

        TokenLayout lay{nz, nz, nx};
        std::vector<int> spatial(static_cast<size_t>(nx));
        std::iota(spatial.begin(), spatial.end(), 0);

        Elimination strategy = cfg_.strategy();

        for (int l = 1; l <= cfg_.depth; ++l) {
            stats.search_tokens_per_layer.push_back(lay.n_search);
            AttnResult ar_rgb = rgb_[static_cast<size_t>(l - 1)].apply(t_rgb);
            AttnResult ar_tir = tir_[static_cast<size_t>(l - 1)].apply(t_tir);
            t_rgb = ar_rgb.out;
            t_tir = ar_tir.out;
            stats.attn_blocks += 2;

            bool prune_here = strategy != Elimination::None &&
                              std::find(cfg_.prune_layers.begin(), cfg_.prune_layers.end(), l) != cfg_.prune_layers.end();
            if (prune_here) {
                auto rgb_s = corr_map(ar_rgb.maps, lay, false);
                auto rgb_d = corr_map(ar_rgb.maps, lay, true);
                auto tir_s = corr_map(ar_tir.maps, lay, false);
                auto tir_d = corr_map(ar_tir.maps, lay, true);
                auto scores = variant_score(strategy, cfg_.ce_source(), rgb_s, rgb_d, tir_s, tir_d);
                PruneDecision dec = prune(scores, cfg_.keep_ratio);

                int col0 = lay.n_static + lay.n_dynamic;
                std::vector<int> rows(static_cast<size_t>(col0 + dec.k));
                std::iota(rows.begin(), rows.begin() + col0, 0);
                for (int i = 0; i < dec.k; ++i) rows[static_cast<size_t>(col0 + i)] = col0 + dec.keep[static_cast<size_t>(i)];
                t_rgb = gather_rows(t_rgb, rows);
                t_tir = gather_rows(t_tir, rows);
                std::vector<int> kept_spatial(static_cast<size_t>(dec.k));
                for (int i = 0; i < dec.k; ++i) kept_spatial[static_cast<size_t>(i)] = spatial[static_cast<size_t>(dec.keep[static_cast<size_t>(i)])];
                spatial = std::move(kept_spatial);
                lay.n_search = dec.k;
                ++stats.prune_events;
            }

            bool bridge_here = tdtb_.has_value() &&
                               std::find(cfg_.tdtb_layers.begin(), cfg_.tdtb_layers.end(), l) != cfg_.tdtb_layers.end();
            if (bridge_here) {
                int col0 = lay.n_static + lay.n_dynamic;
                TdtbInput bin;
                bin.z_rgb_static = slice_rows(t_rgb, 0, lay.n_static);
                bin.z_rgb_dynamic = slice_rows(t_rgb, lay.n_static, lay.n_dynamic);
                bin.z_tir_static = slice_rows(t_tir, 0, lay.n_static);
                bin.z_tir_dynamic = slice_rows(t_tir, lay.n_static, lay.n_dynamic);
                bin.x_rgb = slice_rows(t_rgb, col0, lay.n_search);
                bin.x_tir = slice_rows(t_tir, col0, lay.n_search);
                TdtbOutput bout = tdtb_->forward(bin, &stats);
                t_rgb = concat_rows(bout.z_rgb, bout.x_rgb);
                t_tir = concat_rows(bout.z_tir, bout.x_tir);
            }
        }

        int col0 = lay.n_static + lay.n_dynamic;
        int g = cfg_.feature_grid();
        Tensor xr = slice_rows(t_rgb, col0, lay.n_search);
        Tensor xt = slice_rows(t_tir, col0, lay.n_search);
        res.feat_rgb = reshape(scatter_rows(xr, spatial, nx), {g, g, cfg_.channels});
        res.feat_tir = reshape(scatter_rows(xt, spatial, nx), {g, g, cfg_.channels});
        return res;
    }

    const PatchEmbed& embed() const { return embed_; }
    const Tdtb* tdtb() const { return tdtb_.has_value() ? &*tdtb_ : nullptr; }

    void collect(ParamList& out) const {
        embed_.collect("backbone.embed", true, out);
        for (size_t i = 0; i < rgb_.size(); ++i) rgb_[i].collect("backbone.rgb.blk" + std::to_string(i), true, out);
        for (size_t i = 0; i < tir_.size(); ++i) tir_[i].collect("backbone.tir.blk" + std::to_string(i), true, out);
        if (tdtb_.has_value()) tdtb_->collect("tdtb", out);
    }

private:
    RunConfig cfg_;
    PatchEmbed embed_;
    std::vector<EncoderBlock> rgb_, tir_;
    std::optional<Tdtb> tdtb_;
};

}  // namespace btm
