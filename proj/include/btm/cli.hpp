#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/cost_model.hpp"
#include "btm/metrics.hpp"
#include "btm/model.hpp"
#include "btm/synth.hpp"
#include "btm/tracker.hpp"
#include "btm/train.hpp"

namespace btm {
namespace cli {

namespace detail {

struct CommonFlags {
    std::string config;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

inline void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "configuration file (key=value lines)");
    cmd->add_option("--seed", f.seed, "override the config seed")->each([&f](const std::string&) { f.seed_set = true; });
    cmd->add_option("--out", f.out_dir, "output directory");
}

inline RunConfig effective_config(const CommonFlags& f, std::ostream& out) {
    RunConfig cfg;
    if (!f.config.empty()) cfg = load_config(f.config);
    if (f.seed_set) cfg.seed = f.seed;
    validate_config(cfg);
    out << echo_config(cfg);
    return cfg;
}

inline std::string require_out(const CommonFlags& f) {
    if (f.out_dir.empty()) throw config_error("--out is required for this command");
    std::filesystem::create_directories(f.out_dir);
    return f.out_dir;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"dual-template rgb-thermal tracker", "btm"};
    app.require_subcommand(1);

    detail::CommonFlags gen_f, train_f, track_f, eval_f, bench_f;
    std::string manifest_path, data_dir, resume_path, checkpoint_path, sequence_dir, results_dir;

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic paired sequences from a manifest");
    detail::add_common(gen, gen_f);
    gen->add_option("--manifest", manifest_path, "suite manifest file");

    CLI::App* train = app.add_subcommand("train", "train a model on generated sequences");
    detail::add_common(train, train_f);
    train->add_option("--data", data_dir, "directory of training sequences");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    CLI::App* track = app.add_subcommand("track", "run the tracker over one sequence");
    detail::add_common(track, track_f);
    track->add_option("--checkpoint", checkpoint_path, "trained model checkpoint")->required();
    track->add_option("--sequence", sequence_dir, "sequence directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "score result files against ground truth");
    detail::add_common(eval, eval_f);
    eval->add_option("--results", results_dir, "directory of result files")->required();
    eval->add_option("--data", data_dir, "directory of sequences")->required();

    CLI::App* bench = app.add_subcommand("bench-prune", "analytic and measured pruning cost report");
    detail::add_common(bench, bench_f);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (gen->parsed()) {
            RunConfig cfg = detail::effective_config(gen_f, out);
            std::string outdir = detail::require_out(gen_f);
            Manifest m = load_manifest(manifest_path.empty() ? cfg.gen_manifest : manifest_path);
            if (gen_f.seed_set) m.seed = cfg.seed;
            auto dirs = generate_from_manifest(m, outdir);
            out << "generated " << dirs.size() << " sequences under " << outdir << "\n";
        } else if (train->parsed()) {
            RunConfig cfg = detail::effective_config(train_f, out);
            std::string outdir = detail::require_out(train_f);
            if (!resume_path.empty()) cfg.resume = resume_path;
            std::string dat = data_dir.empty() ? cfg.train_data : data_dir;
            TrackModel model(cfg);
            TrainResult res = train_model(cfg, model, dat, outdir);
            out << "checkpoint " << res.checkpoint.string() << "\n";
            if (!res.epoch_loss.empty()) out << "final loss " << res.epoch_loss.back() << "\n";
        } else if (track->parsed()) {
            RunConfig cfg = detail::effective_config(track_f, out);
            std::string outdir = detail::require_out(track_f);
            TrackModel model(cfg);
            ParamList params = model.parameters();
            load_params(load_checkpoint(checkpoint_path), params);
            Tracker tracker(cfg, [&model](const BackboneImages& in) { return model.forward(in).out; });
            auto results = track_sequence(tracker, sequence_dir);
            std::filesystem::path seq(sequence_dir);
            if (seq.filename().empty()) seq = seq.parent_path();  // tolerate a trailing slash
            std::filesystem::path rf = std::filesystem::path(outdir) / (seq.filename().string() + ".txt");
            save_boxes(rf, results);
            out << "wrote " << results.size() << " boxes to " << rf.string() << "\n";
        } else if (eval->parsed()) {
            RunConfig cfg = detail::effective_config(eval_f, out);
            MetricThresholds th{cfg.pr_threshold_px, cfg.npr_threshold};
            MetricsReport report = evaluate_dirs(results_dir, data_dir, th);
            out << metrics_table(report);
            if (!eval_f.out_dir.empty()) {
                std::filesystem::create_directories(eval_f.out_dir);
                std::ofstream csv(std::filesystem::path(eval_f.out_dir) / "report.csv");
                csv << metrics_csv(report);
                out << "wrote " << (std::filesystem::path(eval_f.out_dir) / "report.csv").string() << "\n";
            }
        } else if (bench->parsed()) {
            RunConfig cfg = detail::effective_config(bench_f, out);
            std::string outdir = detail::require_out(bench_f);
            std::vector<CostReport> analytic;
            for (auto s : {Elimination::None, Elimination::Ce, Elimination::AddCe, Elimination::MaxCe,
                           Elimination::Tmce})
                analytic.push_back(analytic_cost(cfg, s));
            std::ofstream acsv(std::filesystem::path(outdir) / "cost_analytic.csv");
            acsv << cost_csv(analytic);

            std::vector<BenchResult> measured;
            RunConfig none_cfg = cfg;
            none_cfg.elimination_strategy = "none";
            measured.push_back(bench_forward(none_cfg, cfg.bench_repeats));
            if (cfg.elimination_strategy != "none") measured.push_back(bench_forward(cfg, cfg.bench_repeats));
            std::ofstream mcsv(std::filesystem::path(outdir) / "bench_measured.csv");
            mcsv << bench_csv(measured);

            for (auto& r : analytic)
                out << r.strategy << " total " << r.total_macs << " macs\n";
            for (auto& b : measured)
                out << b.strategy << " " << b.frames_per_sec << " frames/sec, " << b.tokens_per_sec
                    << " tokens/sec\n";
            if (measured.size() == 2)
                out << "speedup " << measured[1].tokens_per_sec / measured[0].tokens_per_sec << "x\n";
        }
    } catch (const btm::error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace cli
}  // namespace btm
