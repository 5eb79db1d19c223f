#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "btm/backbone.hpp"
#include "btm/model.hpp"
#include "support/straightline.hpp"

using namespace btm;

namespace {

Tensor random_image(int side, CounterRng& rng) {
    Tensor t = Tensor::zeros({side, side, 3});
    for (auto& v : t.mutable_values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.patch_size = 16;
    cfg.channels = 16;
    cfg.heads = 2;
    cfg.depth = 4;
    cfg.mlp_ratio = 2;
    cfg.template_size = 32;   // 4 template tokens
    cfg.search_size = 64;     // 16 search tokens
    cfg.prune_layers = {2, 3};
    cfg.tdtb_layers = {2};
    cfg.keep_ratio = 0.7;
    cfg.elimination_strategy = "tmce";
    cfg.seed = 42;
    return cfg;
}

BackboneImages random_inputs(const RunConfig& cfg, uint64_t seed) {
    CounterRng rng(seed);
    BackboneImages im;
    im.z_static_rgb = random_image(cfg.template_size, rng);
    im.z_dynamic_rgb = random_image(cfg.template_size, rng);
    im.z_static_tir = random_image(cfg.template_size, rng);
    im.z_dynamic_tir = random_image(cfg.template_size, rng);
    im.x_rgb = random_image(cfg.search_size, rng);
    im.x_tir = random_image(cfg.search_size, rng);
    return im;
}

std::vector<int> nonzero_cells(const Tensor& feat) {
    int g = feat.dim(0), c = feat.dim(2);
    std::vector<int> cells;
    for (int i = 0; i < g * g; ++i) {
        bool nz = false;
        for (int k = 0; k < c; ++k)
            if (feat.values()[static_cast<size_t>(i) * c + k] != 0.0) nz = true;
        if (nz) cells.push_back(i);
    }
    return cells;
}

}  // namespace

TEST_CASE("token schedule, pruning, and zero-filled feature maps") {
    RunConfig cfg = small_config();
    CounterRng rng(cfg.seed);
    Backbone bb(cfg, rng);
    BackboneResult res = bb.forward(random_inputs(cfg, 1));

    // 16 search tokens; ceil(0.7*16)=12 after block 2, ceil(0.7*12)=9 after block 3.
    REQUIRE(res.stats.search_tokens_per_layer == std::vector<int>{16, 16, 12, 9});
    REQUIRE(res.stats.attn_blocks == 8);
    REQUIRE(res.stats.prune_events == 2);
    REQUIRE(res.stats.tdtb_calls == 1);
    REQUIRE(res.stats.mhca_calls == 6);

    REQUIRE(res.feat_rgb.shape() == Shape{4, 4, 16});
    auto nz_rgb = nonzero_cells(res.feat_rgb);
    auto nz_tir = nonzero_cells(res.feat_tir);
    REQUIRE(nz_rgb.size() == 9);
    // One shared keep decision: both modalities zero out the same cells.
    REQUIRE(nz_rgb == nz_tir);
}

TEST_CASE("strategy none never prunes") {
    RunConfig cfg = small_config();
    cfg.elimination_strategy = "none";
    CounterRng rng(cfg.seed);
    Backbone bb(cfg, rng);
    BackboneResult res = bb.forward(random_inputs(cfg, 2));
    REQUIRE(res.stats.prune_events == 0);
    REQUIRE(res.stats.search_tokens_per_layer == std::vector<int>{16, 16, 16, 16});
    REQUIRE(nonzero_cells(res.feat_rgb).size() == 16);
}

TEST_CASE("keep_ratio 1 prunes nothing but still decides") {
    RunConfig cfg = small_config();
    cfg.keep_ratio = 1.0;
    CounterRng rng(cfg.seed);
    Backbone bb(cfg, rng);
    BackboneResult res = bb.forward(random_inputs(cfg, 3));
    REQUIRE(res.stats.prune_events == 2);
    REQUIRE(res.stats.search_tokens_per_layer == std::vector<int>{16, 16, 16, 16});
    REQUIRE(nonzero_cells(res.feat_rgb).size() == 16);
}

TEST_CASE("every elimination strategy runs end to end") {
    for (const char* strat : {"ce", "add_ce", "max_ce", "tmce"}) {
        RunConfig cfg = small_config();
        cfg.elimination_strategy = strat;
        CounterRng rng(cfg.seed);
        Backbone bb(cfg, rng);
        BackboneResult res = bb.forward(random_inputs(cfg, 4));
        REQUIRE(res.stats.prune_events == 2);
        REQUIRE(nonzero_cells(res.feat_rgb).size() == 9);
    }
}

TEST_CASE("model parameters are a pure function of seed and config") {
    RunConfig cfg = small_config();
    TrackModel m1(cfg), m2(cfg);
    ParamList p1 = m1.parameters(), p2 = m2.parameters();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i].name == p2[i].name);
        REQUIRE(p1[i].t.values() == p2[i].t.values());
    }
    cfg.seed = 43;
    TrackModel m3(cfg);
    ParamList p3 = m3.parameters();
    bool any_diff = false;
    for (size_t i = 0; i < p1.size(); ++i)
        if (p1[i].t.values() != p3[i].t.values()) any_diff = true;
    REQUIRE(any_diff);

    // Learning-rate groups: backbone stream vs bridging + head.
    int backbone_params = 0, other_params = 0;
    for (auto& p : p1) (p.backbone ? backbone_params : other_params)++;
    REQUIRE(backbone_params > 0);
    REQUIRE(other_params > 0);
    for (auto& p : p1) {
        if (p.name.rfind("backbone.", 0) == 0) REQUIRE(p.backbone);
        if (p.name.rfind("tdtb", 0) == 0 || p.name.rfind("head", 0) == 0) REQUIRE_FALSE(p.backbone);
    }
}

TEST_CASE("disabling the bridge removes its parameters and calls") {
    RunConfig cfg = small_config();
    cfg.tdtb_enabled = false;
    CounterRng rng(cfg.seed);
    Backbone bb(cfg, rng);
    ParamList ps;
    bb.collect(ps);
    for (auto& p : ps) REQUIRE(p.name.rfind("tdtb", 0) != 0);
    BackboneResult res = bb.forward(random_inputs(cfg, 5));
    REQUIRE(res.stats.mhca_calls == 0);
    REQUIRE(res.stats.tdtb_calls == 0);
    REQUIRE(res.stats.prune_events == 2);
}

TEST_CASE("micro backbone matches a straight-line replay") {
    RunConfig cfg;
    cfg.patch_size = 16;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    cfg.mlp_ratio = 2;
    cfg.template_size = 16;  // 1 template token
    cfg.search_size = 32;    // 4 search tokens
    cfg.prune_layers = {};
    cfg.tdtb_layers = {};
    cfg.tdtb_enabled = false;
    cfg.elimination_strategy = "none";
    cfg.seed = 9;
    CounterRng rng(cfg.seed);
    Backbone bb(cfg, rng);
    BackboneImages im = random_inputs(cfg, 6);
    BackboneResult res = bb.forward(im);

    ParamList ps;
    bb.collect(ps);
    auto grab = [&](const std::string& name) -> sl::Mat {
        for (auto& p : ps)
            if (p.name == name) return sl::from_tensor(p.t);
        FAIL("missing parameter " << name);
        return {};
    };

    sl::LinW proj{grab("backbone.embed.proj.w"), grab("backbone.embed.proj.b")};
    sl::Mat pos_t = grab("backbone.embed.pos_template");
    sl::Mat pos_s = grab("backbone.embed.pos_search");

    // Independent patchify: row-major patches, (dy, dx, channel) flatten.
    auto patchify = [&](const Tensor& img) {
        int side = img.dim(0), p = cfg.patch_size, g = side / p;
        sl::Mat out = sl::zeros(g * g, 3 * p * p);
        for (int py = 0; py < g; ++py)
            for (int px = 0; px < g; ++px) {
                int t = 0;
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        for (int ch = 0; ch < 3; ++ch, ++t)
                            out.at(py * g + px, t) = img.get(py * p + dy, px * p + dx, ch);
            }
        return out;
    };
    auto embed = [&](const Tensor& img, const sl::Mat& pos) {
        sl::Mat tok = sl::linear(patchify(img), proj.w, proj.b);
        for (int i = 0; i < tok.r; ++i)
            for (int j = 0; j < tok.c; ++j) tok.at(i, j) += pos.at(i, j);
        return tok;
    };

    for (const char* stream : {"rgb", "tir"}) {
        bool is_rgb = std::string(stream) == "rgb";
        sl::Mat tok = sl::concat_rows(
            sl::concat_rows(embed(is_rgb ? im.z_static_rgb : im.z_static_tir, pos_t),
                            embed(is_rgb ? im.z_dynamic_rgb : im.z_dynamic_tir, pos_t)),
            embed(is_rgb ? im.x_rgb : im.x_tir, pos_s));
        for (int blk = 0; blk < 2; ++blk) {
            std::string pre = std::string("backbone.") + stream + ".blk" + std::to_string(blk);
            sl::LnW ln1{grab(pre + ".ln1.g"), grab(pre + ".ln1.b")};
            sl::LnW ln2{grab(pre + ".ln2.g"), grab(pre + ".ln2.b")};
            sl::AttnW attn{{grab(pre + ".attn.q.w"), grab(pre + ".attn.q.b")},
                           {grab(pre + ".attn.k.w"), grab(pre + ".attn.k.b")},
                           {grab(pre + ".attn.v.w"), grab(pre + ".attn.v.b")},
                           {grab(pre + ".attn.o.w"), grab(pre + ".attn.o.b")},
                           cfg.heads};
            sl::MlpW mlp{{grab(pre + ".mlp.fc1.w"), grab(pre + ".mlp.fc1.b")},
                         {grab(pre + ".mlp.fc2.w"), grab(pre + ".mlp.fc2.b")}};
            tok = sl::encoder_block(tok, ln1, attn, ln2, mlp);
        }
        // Search tokens are rows 2..6; the feature grid is their reshape.
        sl::Mat search = sl::zeros(4, 8);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 8; ++j) search.at(i, j) = tok.at(2 + i, j);
        const Tensor& feat = is_rgb ? res.feat_rgb : res.feat_tir;
        REQUIRE(feat.shape() == Shape{2, 2, 8});
        double worst = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 8; ++j)
                worst = std::max(worst, std::fabs(search.at(i, j) - feat.values()[static_cast<size_t>(i) * 8 + j]));
        REQUIRE(worst < 1e-10);
    }
}

TEST_CASE("invalid configurations are rejected before compute") {
    RunConfig cfg = small_config();
    cfg.channels = 15;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);

    cfg = small_config();
    cfg.tdtb_layers = {4};  // not a prune layer
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);

    cfg = small_config();
    cfg.template_size = 33;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);

    cfg = small_config();
    cfg.prune_layers = {3, 2};
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);

    cfg = small_config();
    cfg.keep_ratio = 0.0;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);

    cfg = small_config();
    cfg.prune_layers = {2, 3, 9};
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
}
