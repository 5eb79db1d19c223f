#pragma once

#include "btm/backbone.hpp"
#include "btm/config.hpp"
#include "btm/head.hpp"

namespace btm {

struct ForwardResult {
    HeadOut out;
    ForwardStats stats;
};

// Full tracking network: dual-stream backbone plus center head. Parameter
// initialization is a pure function of (seed, architecture config).
class TrackModel {
public:
    explicit TrackModel(const RunConfig& cfg) : cfg_(cfg) {
        validate_config(cfg);
        CounterRng rng = CounterRng(cfg.seed).derive("params");
        backbone_ = Backbone(cfg, rng);
        head_ = CenterHead(cfg.channels, rng);
    }

    ForwardResult forward(const BackboneImages& im) const {
        BackboneResult br = backbone_.forward(im);
        ForwardResult res;
        res.out = head_.apply(br.feat_rgb, br.feat_tir);
        res.stats = std::move(br.stats);
        return res;
    }

    ParamList parameters() const {
        ParamList out;
        backbone_.collect(out);
        head_.collect("head", out);
        return out;
    }

    const RunConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }

private:
    RunConfig cfg_;
    Backbone backbone_;
    CenterHead head_;
};

}  // namespace btm
