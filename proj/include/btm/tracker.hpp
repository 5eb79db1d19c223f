#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "btm/backbone.hpp"
#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/image.hpp"
#include "btm/synth.hpp"

namespace btm {

// The tracker drives any callable with the model's signature, so tests can
// substitute hand-built responses for a trained network.
using ModelFn = std::function<HeadOut(const BackboneImages&)>;

struct TrackerState {
    Tensor z_rgb_static, z_tir_static;  // template crops, never touched after init
    Tensor z_rgb_dynamic, z_tir_dynamic;
    PixelBox last_box;
    int frame_idx = 0;
};

inline std::vector<double> hann_window(int g) {
    std::vector<double> w(static_cast<size_t>(g) * g);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            double hi = 0.5 * (1 - std::cos(2 * M_PI * i / (g - 1)));
            double hj = 0.5 * (1 - std::cos(2 * M_PI * j / (g - 1)));
            w[static_cast<size_t>(i) * g + j] = hi * hj;
        }
    return w;
}

class Tracker {
public:
    Tracker(const RunConfig& cfg, ModelFn fn) : cfg_(cfg), fn_(std::move(fn)) {
        if (cfg_.hann_window) window_ = hann_window(cfg_.feature_grid());
    }

    TrackerState init(const Image& rgb, const Image& tir, const PixelBox& box) const {
        if (rgb.width != tir.width || rgb.height != tir.height)
            throw data_error("init: rgb and tir frames disagree on size");
        if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0 || box.x + box.w > rgb.width ||
            box.y + box.h > rgb.height)
            throw data_error(strcat_("init: box ", box.x, ",", box.y, ",", box.w, ",", box.h,
                                     " outside ", rgb.width, "x", rgb.height, " frame"));
        CropSpec crop = make_crop(box, cfg_.template_factor);
        TrackerState st;
        st.z_rgb_static = crop_resize(rgb, crop, cfg_.template_size);
        st.z_tir_static = crop_resize(tir, crop, cfg_.template_size);
        st.z_rgb_dynamic = copy_(st.z_rgb_static);
        st.z_tir_dynamic = copy_(st.z_tir_static);
        st.last_box = box;
        st.frame_idx = 1;
        return st;
    }

    std::pair<PixelBox, double> track(TrackerState& st, const Image& rgb, const Image& tir) const {
        if (st.frame_idx < 1) throw contract_error("track: state not initialized");
        CropSpec crop = make_crop(st.last_box, cfg_.search_factor);
        BackboneImages in;
        in.z_static_rgb = st.z_rgb_static;
        in.z_dynamic_rgb = st.z_rgb_dynamic;
        in.z_static_tir = st.z_tir_static;
        in.z_dynamic_tir = st.z_tir_dynamic;
        in.x_rgb = crop_resize(rgb, crop, cfg_.search_size);
        in.x_tir = crop_resize(tir, crop, cfg_.search_size);
        HeadOut out = fn_(in);
        Decoded d = decode(out, window_.empty() ? nullptr : &window_);
        PixelBox pb = clamp_box_(to_frame(crop, d.box), rgb.width, rgb.height);
        st.last_box = pb;
        ++st.frame_idx;
        if (d.score >= cfg_.update_threshold && !cfg_.single_template) {
            CropSpec zc = make_crop(pb, cfg_.template_factor);
            st.z_rgb_dynamic = crop_resize(rgb, zc, cfg_.template_size);
            st.z_tir_dynamic = crop_resize(tir, zc, cfg_.template_size);
        }
        return {pb, d.score};
    }

private:
    static Tensor copy_(const Tensor& t) {
        Tensor c = Tensor::zeros(t.shape());
        c.mutable_values() = t.values();
        return c;
    }

    static PixelBox clamp_box_(PixelBox b, int w, int h) {
        auto clamp = [](double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); };
        double bw = std::isfinite(b.w) ? clamp(b.w, 2.0, static_cast<double>(w)) : 2.0;
        double bh = std::isfinite(b.h) ? clamp(b.h, 2.0, static_cast<double>(h)) : 2.0;
        double cx = std::isfinite(b.cx()) ? clamp(b.cx(), 1.0, w - 1.0) : w / 2.0;
        double cy = std::isfinite(b.cy()) ? clamp(b.cy(), 1.0, h - 1.0) : h / 2.0;
        return PixelBox{cx - bw / 2, cy - bh / 2, bw, bh};
    }

    RunConfig cfg_;
    ModelFn fn_;
    std::vector<double> window_;
};

// Runs a tracker over one on-disk sequence. The first output line echoes the
// init box, matching the ground-truth file line-for-line.
inline std::vector<PixelBox> track_sequence(const Tracker& tracker, const std::filesystem::path& seq_dir) {
    namespace fs = std::filesystem;
    std::vector<PixelBox> gts = load_boxes(seq_dir / "groundtruth.txt");
    if (gts.empty()) throw data_error(strcat_(seq_dir.string(), ": empty ground truth"));
    char name[32];
    auto frame = [&](int f, const char* mod, const char* ext) {
        std::snprintf(name, sizeof name, "%06d.%s", f, ext);
        fs::path p = seq_dir / mod / name;
        if (!fs::exists(p)) throw data_error(strcat_("missing frame ", p.string()));
        return read_pnm(p.string());
    };
    std::vector<PixelBox> results;
    TrackerState st = tracker.init(frame(0, "rgb", "ppm"), frame(0, "tir", "pgm"), gts[0]);
    results.push_back(gts[0]);
    for (size_t f = 1; f < gts.size(); ++f) {
        auto [box, score] = tracker.track(st, frame(static_cast<int>(f), "rgb", "ppm"),
                                          frame(static_cast<int>(f), "tir", "pgm"));
        results.push_back(box);
    }
    return results;
}

}  // namespace btm
