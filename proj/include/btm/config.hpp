#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "btm/common.hpp"
#include "btm/tmce.hpp"

namespace btm {

// Flat key=value configuration shared by every command. Unknown keys are
// rejected; every key has a default, so an empty file is a valid config.
struct RunConfig {
    // model
    int patch_size = 16;
    int channels = 64;
    int heads = 4;
    int depth = 12;
    int mlp_ratio = 4;
    int template_size = 128;
    int search_size = 256;
    std::vector<int> prune_layers = {4, 7, 10};  // 1-based block index, prune after the block
    std::vector<int> tdtb_layers = {4};
    double keep_ratio = 0.7;
    std::string elimination_strategy = "tmce";
    std::string ce_modality = "rgb";
    bool tdtb_enabled = true;
    bool single_template = false;
    uint64_t seed = 1;

    // loss
    double lambda_iou = 2.0;
    double lambda_l1 = 5.0;
    double focal_gamma = 2.0;

    // tracker
    double update_threshold = 0.65;
    double template_factor = 2.0;
    double search_factor = 4.0;
    bool hann_window = false;

    // training
    int epochs = 20;
    int samples_per_epoch = 512;
    int batch_size = 8;
    std::string optimizer = "sgd";
    double lr_backbone = 0.0001;
    double lr_other = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    double lr_decay_factor = 0.1;
    std::string train_data = "data/train";
    std::string resume = "";
    double center_jitter = 0.25;
    double scale_jitter = 0.15;
    double template_center_jitter = 0.10;
    double template_scale_jitter = 0.05;

    // data generation
    std::string gen_manifest = "manifest.txt";

    // evaluation
    double pr_threshold_px = 20.0;
    double npr_threshold = 0.1;

    // benchmarking
    int bench_repeats = 8;

    Elimination strategy() const { return parse_elimination(elimination_strategy); }
    CeSource ce_source() const {
        if (ce_modality == "rgb") return CeSource::Rgb;
        if (ce_modality == "tir") return CeSource::Tir;
        throw config_error(strcat_("ce_modality must be rgb or tir, got '", ce_modality, "'"));
    }
    int template_tokens() const {
        int g = template_size / patch_size;
        return g * g;
    }
    int search_tokens() const {
        int g = search_size / patch_size;
        return g * g;
    }
    int feature_grid() const { return search_size / patch_size; }
};

namespace detail {

using FieldRef = std::variant<int RunConfig::*, double RunConfig::*, bool RunConfig::*, uint64_t RunConfig::*,
                              std::string RunConfig::*, std::vector<int> RunConfig::*>;

inline const std::map<std::string, FieldRef>& config_fields() {
    static const std::map<std::string, FieldRef> fields = {
        {"patch_size", &RunConfig::patch_size},
        {"channels", &RunConfig::channels},
        {"heads", &RunConfig::heads},
        {"depth", &RunConfig::depth},
        {"mlp_ratio", &RunConfig::mlp_ratio},
        {"template_size", &RunConfig::template_size},
        {"search_size", &RunConfig::search_size},
        {"prune_layers", &RunConfig::prune_layers},
        {"tdtb_layers", &RunConfig::tdtb_layers},
        {"keep_ratio", &RunConfig::keep_ratio},
        {"elimination_strategy", &RunConfig::elimination_strategy},
        {"ce_modality", &RunConfig::ce_modality},
        {"tdtb_enabled", &RunConfig::tdtb_enabled},
        {"single_template", &RunConfig::single_template},
        {"seed", &RunConfig::seed},
        {"lambda_iou", &RunConfig::lambda_iou},
        {"lambda_l1", &RunConfig::lambda_l1},
        {"focal_gamma", &RunConfig::focal_gamma},
        {"update_threshold", &RunConfig::update_threshold},
        {"template_factor", &RunConfig::template_factor},
        {"search_factor", &RunConfig::search_factor},
        {"hann_window", &RunConfig::hann_window},
        {"epochs", &RunConfig::epochs},
        {"samples_per_epoch", &RunConfig::samples_per_epoch},
        {"batch_size", &RunConfig::batch_size},
        {"optimizer", &RunConfig::optimizer},
        {"lr_backbone", &RunConfig::lr_backbone},
        {"lr_other", &RunConfig::lr_other},
        {"momentum", &RunConfig::momentum},
        {"weight_decay", &RunConfig::weight_decay},
        {"lr_decay_factor", &RunConfig::lr_decay_factor},
        {"train_data", &RunConfig::train_data},
        {"resume", &RunConfig::resume},
        {"center_jitter", &RunConfig::center_jitter},
        {"scale_jitter", &RunConfig::scale_jitter},
        {"template_center_jitter", &RunConfig::template_center_jitter},
        {"template_scale_jitter", &RunConfig::template_scale_jitter},
        {"gen_manifest", &RunConfig::gen_manifest},
        {"pr_threshold_px", &RunConfig::pr_threshold_px},
        {"npr_threshold", &RunConfig::npr_threshold},
        {"bench_repeats", &RunConfig::bench_repeats},
    };
    return fields;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw config_error(strcat_("config key '", key, "': cannot parse '", v, "' as a number"));
    }
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long n = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<int>(n);
    } catch (const std::exception&) {
        throw config_error(strcat_("config key '", key, "': cannot parse '", v, "' as an integer"));
    }
}

inline std::string format_double(double d) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), d);
    return std::string(buf, res.ptr);
}

inline void assign_field(RunConfig& cfg, const std::string& key, const FieldRef& ref, const std::string& value) {
    if (auto p = std::get_if<int RunConfig::*>(&ref)) {
        cfg.**p = parse_int(key, value);
    } else if (auto p2 = std::get_if<double RunConfig::*>(&ref)) {
        cfg.**p2 = parse_double(key, value);
    } else if (auto p3 = std::get_if<bool RunConfig::*>(&ref)) {
        if (value == "true" || value == "1")
            cfg.**p3 = true;
        else if (value == "false" || value == "0")
            cfg.**p3 = false;
        else
            throw config_error(strcat_("config key '", key, "': expected true/false, got '", value, "'"));
    } else if (auto p4 = std::get_if<uint64_t RunConfig::*>(&ref)) {
        try {
            size_t pos = 0;
            cfg.**p4 = std::stoull(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw config_error(strcat_("config key '", key, "': cannot parse '", value, "' as an unsigned integer"));
        }
    } else if (auto p5 = std::get_if<std::string RunConfig::*>(&ref)) {
        cfg.**p5 = value;
    } else if (auto p6 = std::get_if<std::vector<int> RunConfig::*>(&ref)) {
        std::vector<int> out;
        std::string item;
        std::istringstream is(value);
        while (std::getline(is, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(parse_int(key, item));
        }
        cfg.**p6 = std::move(out);
    }
}

inline std::string format_field(const RunConfig& cfg, const FieldRef& ref) {
    if (auto p = std::get_if<int RunConfig::*>(&ref)) return std::to_string(cfg.**p);
    if (auto p2 = std::get_if<double RunConfig::*>(&ref)) return format_double(cfg.**p2);
    if (auto p3 = std::get_if<bool RunConfig::*>(&ref)) return cfg.**p3 ? "true" : "false";
    if (auto p4 = std::get_if<uint64_t RunConfig::*>(&ref)) return std::to_string(cfg.**p4);
    if (auto p5 = std::get_if<std::string RunConfig::*>(&ref)) return cfg.**p5;
    if (auto p6 = std::get_if<std::vector<int> RunConfig::*>(&ref)) {
        std::string s;
        for (size_t i = 0; i < (cfg.**p6).size(); ++i) {
            if (i) s += ",";
            s += std::to_string((cfg.**p6)[i]);
        }
        return s;
    }
    return "";
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error(strcat_("config line ", lineno, ": expected key=value, got '", t, "'"));
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        auto it = detail::config_fields().find(key);
        if (it == detail::config_fields().end())
            throw config_error(strcat_("unknown config key '", key, "' on line ", lineno));
        detail::assign_field(cfg, key, it->second, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error(strcat_("cannot open config file '", path, "'"));
    return parse_config(f);
}

// Canonical sorted key=value rendering; identical configs render
// byte-identically.
inline std::string echo_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, ref] : detail::config_fields())
        out += key + "=" + detail::format_field(cfg, ref) + "\n";
    return out;
}

inline void validate_config(const RunConfig& cfg) {
    auto fail = [](const std::string& msg) { throw config_error(msg); };
    if (cfg.patch_size < 1) fail("patch_size must be >= 1");
    if (cfg.channels < 1 || cfg.heads < 1) fail("channels and heads must be >= 1");
    if (cfg.channels % cfg.heads != 0)
        fail(strcat_("channels (", cfg.channels, ") must be divisible by heads (", cfg.heads, ")"));
    if (cfg.depth < 1) fail("depth must be >= 1");
    if (cfg.mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (cfg.template_size < cfg.patch_size || cfg.template_size % cfg.patch_size != 0)
        fail(strcat_("template_size (", cfg.template_size, ") must be a positive multiple of patch_size"));
    if (cfg.search_size < cfg.patch_size || cfg.search_size % cfg.patch_size != 0)
        fail(strcat_("search_size (", cfg.search_size, ") must be a positive multiple of patch_size"));
    for (size_t i = 0; i < cfg.prune_layers.size(); ++i) {
        int l = cfg.prune_layers[i];
        if (l < 1 || l > cfg.depth) fail(strcat_("prune_layers entry ", l, " outside [1,", cfg.depth, "]"));
        if (i > 0 && cfg.prune_layers[i - 1] >= l) fail("prune_layers must be strictly increasing");
    }
    for (int l : cfg.tdtb_layers) {
        if (std::find(cfg.prune_layers.begin(), cfg.prune_layers.end(), l) == cfg.prune_layers.end())
            fail(strcat_("tdtb_layers entry ", l, " is not a prune layer"));
    }
    if (!(cfg.keep_ratio > 0.0 && cfg.keep_ratio <= 1.0)) fail("keep_ratio must be in (0,1]");
    (void)cfg.strategy();
    (void)cfg.ce_source();
    if (cfg.lambda_iou < 0.0 || cfg.lambda_l1 < 0.0) fail("loss weights must be >= 0");
    if (cfg.focal_gamma < 0.0) fail("focal_gamma must be >= 0");
    if (!(cfg.update_threshold >= 0.0 && cfg.update_threshold <= 1.0)) fail("update_threshold must be in [0,1]");
    if (cfg.template_factor <= 0.0 || cfg.search_factor <= 0.0) fail("crop factors must be > 0");
    if (cfg.epochs < 1) fail("epochs must be >= 1");
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (cfg.samples_per_epoch < cfg.batch_size) fail("samples_per_epoch must be >= batch_size");
    if (cfg.optimizer != "sgd" && cfg.optimizer != "adamw")
        fail(strcat_("optimizer must be sgd or adamw, got '", cfg.optimizer, "'"));
    if (cfg.lr_backbone <= 0.0 || cfg.lr_other <= 0.0) fail("learning rates must be > 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) fail("momentum must be in [0,1)");
    if (cfg.weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (!(cfg.lr_decay_factor > 0.0 && cfg.lr_decay_factor <= 1.0)) fail("lr_decay_factor must be in (0,1]");
    if (!(cfg.center_jitter >= 0.0 && cfg.center_jitter < 0.5)) fail("center_jitter must be in [0,0.5)");
    if (cfg.scale_jitter < 0.0) fail("scale_jitter must be >= 0");
    if (!(cfg.template_center_jitter >= 0.0 && cfg.template_center_jitter < 0.5))
        fail("template_center_jitter must be in [0,0.5)");
    if (cfg.template_scale_jitter < 0.0) fail("template_scale_jitter must be >= 0");
    if (cfg.pr_threshold_px <= 0.0) fail("pr_threshold_px must be > 0");
    if (cfg.npr_threshold <= 0.0) fail("npr_threshold must be > 0");
    if (cfg.bench_repeats < 1) fail("bench_repeats must be >= 1");
}

}  // namespace btm
