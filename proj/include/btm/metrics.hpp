#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/head.hpp"
#include "btm/synth.hpp"

namespace btm {

// Success curve sampled at overlap thresholds 0, 0.05, ..., 1.0.
constexpr int kSrSamples = 21;

struct SequenceMetrics {
    std::string name;
    int frames = 0;
    double sr = 0, pr = 0, npr = 0;
    std::vector<double> curve;  // fraction of frames with IoU >= threshold
};

struct MetricsReport {
    std::vector<SequenceMetrics> per_seq;
    SequenceMetrics overall;
};

struct MetricThresholds {
    double pr_px = 20.0;
    double npr = 0.1;
};

inline SequenceMetrics evaluate_sequence(const std::string& name, const std::vector<PixelBox>& results,
                                         const std::vector<PixelBox>& gts, const MetricThresholds& th = {}) {
    if (results.size() != gts.size())
        throw data_error(strcat_("sequence ", name, ": ", results.size(), " result boxes vs ", gts.size(),
                                 " ground-truth boxes"));
    if (gts.empty()) throw data_error(strcat_("sequence ", name, " is empty"));
    SequenceMetrics m;
    m.name = name;
    m.frames = static_cast<int>(gts.size());
    m.curve.assign(kSrSamples, 0.0);
    int pr_hits = 0, npr_hits = 0;
    for (size_t f = 0; f < gts.size(); ++f) {
        double ov = iou_pixel(results[f], gts[f]);
        for (int t = 0; t < kSrSamples; ++t)
            if (ov >= t * 0.05) m.curve[static_cast<size_t>(t)] += 1.0;
        double derr = std::hypot(results[f].cx() - gts[f].cx(), results[f].cy() - gts[f].cy());
        if (derr <= th.pr_px) ++pr_hits;
        double diag = std::hypot(gts[f].w, gts[f].h);
        if (diag > 0 && derr / diag <= th.npr) ++npr_hits;
    }
    for (auto& c : m.curve) c /= static_cast<double>(m.frames);
    for (double c : m.curve) m.sr += c;
    m.sr /= kSrSamples;
    m.pr = static_cast<double>(pr_hits) / m.frames;
    m.npr = static_cast<double>(npr_hits) / m.frames;
    return m;
}

// Per-sequence metrics plus an unweighted mean row.
inline MetricsReport evaluate_all(const std::vector<SequenceMetrics>& seqs) {
    if (seqs.empty()) throw data_error("no sequences to evaluate");
    MetricsReport r;
    r.per_seq = seqs;
    r.overall.name = "overall";
    r.overall.curve.assign(kSrSamples, 0.0);
    for (auto& s : seqs) {
        r.overall.frames += s.frames;
        r.overall.sr += s.sr;
        r.overall.pr += s.pr;
        r.overall.npr += s.npr;
        for (int t = 0; t < kSrSamples; ++t) r.overall.curve[static_cast<size_t>(t)] += s.curve[static_cast<size_t>(t)];
    }
    double n = static_cast<double>(seqs.size());
    r.overall.sr /= n;
    r.overall.pr /= n;
    r.overall.npr /= n;
    for (auto& c : r.overall.curve) c /= n;
    return r;
}

// Pairs result files under results_dir (one <name>.txt per sequence) with
// discovered sequence directories under data_dir.
inline MetricsReport evaluate_dirs(const std::filesystem::path& results_dir, const std::filesystem::path& data_dir,
                                   const MetricThresholds& th = {}) {
    std::vector<SequenceMetrics> seqs;
    for (auto& dir : discover_sequences(data_dir)) {
        std::string name = dir.filename().string();
        std::filesystem::path rf = results_dir / (name + ".txt");
        if (!std::filesystem::exists(rf)) throw data_error(strcat_("missing result file ", rf.string()));
        seqs.push_back(evaluate_sequence(name, load_boxes(rf), load_boxes(dir / "groundtruth.txt"), th));
    }
    return evaluate_all(seqs);
}

inline std::string metrics_csv(const MetricsReport& r) {
    std::string out = "sequence,SR,PR,NPR\n";
    char buf[160];
    auto row = [&](const SequenceMetrics& m) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", m.name.c_str(), m.sr, m.pr, m.npr);
        out += buf;
    };
    for (auto& m : r.per_seq) row(m);
    row(r.overall);
    return out;
}

inline std::string metrics_table(const MetricsReport& r) {
    size_t w = 8;
    for (auto& m : r.per_seq) w = std::max(w, m.name.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s\n", static_cast<int>(w), "sequence", "SR", "PR", "NPR");
    std::string out = buf;
    auto row = [&](const SequenceMetrics& m) {
        std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f\n", static_cast<int>(w), m.name.c_str(), m.sr,
                      m.pr, m.npr);
        out += buf;
    };
    for (auto& m : r.per_seq) row(m);
    out += std::string(w + 32, '-') + "\n";
    row(r.overall);
    return out;
}

}  // namespace btm
