#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "btm/checkpoint.hpp"
#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/image.hpp"
#include "btm/model.hpp"
#include "btm/optim.hpp"
#include "btm/synth.hpp"

namespace btm {

struct TrainSeq {
    std::filesystem::path dir;
    std::vector<PixelBox> gt;
};

inline std::vector<TrainSeq> load_train_seqs(const std::filesystem::path& data_dir) {
    std::vector<TrainSeq> out;
    for (auto& dir : discover_sequences(data_dir)) {
        TrainSeq s;
        s.dir = dir;
        s.gt = load_boxes(dir / "groundtruth.txt");
        if (s.gt.size() < 3)
            throw data_error(strcat_(dir.string(), ": training needs at least 3 frames, found ", s.gt.size()));
        out.push_back(std::move(s));
    }
    if (out.empty()) throw data_error(strcat_("no sequences under ", data_dir.string()));
    return out;
}

namespace detail {

inline Image read_frame(const std::filesystem::path& dir, const char* mod, int f, const char* ext) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.%s", f, ext);
    return read_pnm((dir / mod / name).string());
}

}  // namespace detail

struct TrainSample {
    BackboneImages images;
    BBox gt;  // search-crop-normalized target box
};

// One (static, dynamic, search) triple. Draws are a pure function of
// (seed, epoch, step, item) so an interrupted run resumes on the exact
// sample stream it would have seen.
inline TrainSample draw_sample(const RunConfig& cfg, const std::vector<TrainSeq>& seqs, int epoch, int step,
                               int item) {
    CounterRng rng = CounterRng(cfg.seed)
                         .derive("sample")
                         .derive("epoch", static_cast<uint64_t>(epoch))
                         .derive("step", static_cast<uint64_t>(step))
                         .derive("item", static_cast<uint64_t>(item));
    const TrainSeq& seq = seqs[rng.next_below(seqs.size())];
    int frames = static_cast<int>(seq.gt.size());
    int ts = 2 + static_cast<int>(rng.next_below(static_cast<uint64_t>(frames - 2)));
    int td = cfg.single_template ? 0 : static_cast<int>(rng.next_below(static_cast<uint64_t>(ts)));

    TrainSample s;
    CropSpec zs = make_crop(seq.gt[0], cfg.template_factor);
    s.images.z_static_rgb = crop_resize(detail::read_frame(seq.dir, "rgb", 0, "ppm"), zs, cfg.template_size);
    s.images.z_static_tir = crop_resize(detail::read_frame(seq.dir, "tir", 0, "pgm"), zs, cfg.template_size);
    CropSpec zd = make_crop(seq.gt[static_cast<size_t>(td)], cfg.template_factor);
    if (!cfg.single_template) {
        // The tracker refreshes this slot from predicted boxes, so train it
        // on crops that are off-center and off-scale the same way.
        double tunit = std::sqrt(seq.gt[static_cast<size_t>(td)].w * seq.gt[static_cast<size_t>(td)].h);
        zd.cx += rng.uniform(-cfg.template_center_jitter, cfg.template_center_jitter) * tunit;
        zd.cy += rng.uniform(-cfg.template_center_jitter, cfg.template_center_jitter) * tunit;
        zd.side *= 1.0 + rng.uniform(-cfg.template_scale_jitter, cfg.template_scale_jitter);
    }
    s.images.z_dynamic_rgb =
        crop_resize(detail::read_frame(seq.dir, "rgb", td, "ppm"), zd, cfg.template_size);
    s.images.z_dynamic_tir =
        crop_resize(detail::read_frame(seq.dir, "tir", td, "pgm"), zd, cfg.template_size);

    const PixelBox& target = seq.gt[static_cast<size_t>(ts)];
    CropSpec sc = make_crop(target, cfg.search_factor);
    double unit = std::sqrt(target.w * target.h);
    sc.cx += rng.uniform(-cfg.center_jitter, cfg.center_jitter) * unit;
    sc.cy += rng.uniform(-cfg.center_jitter, cfg.center_jitter) * unit;
    sc.side *= 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter);
    s.images.x_rgb = crop_resize(detail::read_frame(seq.dir, "rgb", ts, "ppm"), sc, cfg.search_size);
    s.images.x_tir = crop_resize(detail::read_frame(seq.dir, "tir", ts, "pgm"), sc, cfg.search_size);
    s.gt = to_crop(sc, target);
    return s;
}

struct TrainResult {
    std::vector<double> epoch_loss;  // mean total loss per completed epoch
    std::filesystem::path checkpoint;
};

inline void save_train_checkpoint(const std::filesystem::path& path, TrackModel& model, Optimizer& opt,
                                  int epochs_done) {
    // Quantize live state through f32 first so training continues from
    // exactly the values a resumed process will load.
    ParamList params = model.parameters();
    for (auto& p : params) quantize_f32(p.t);
    opt.quantize_state();
    std::vector<CheckpointRecord> records;
    for (auto& p : params) records.push_back(to_record(p.name, p.t));
    opt.append_records(params, records);
    CheckpointRecord ep;
    ep.name = "train.epoch";
    ep.shape = {1};
    ep.data = {static_cast<float>(epochs_done)};
    records.push_back(std::move(ep));
    save_checkpoint(path.string(), records);
}

// Minibatch training over synthetic sequences: per-sample backward passes
// accumulate into shared gradients, one optimizer step per batch, one
// checkpoint per epoch, loss curve appended to <out>/loss_log.csv.
inline TrainResult train_model(const RunConfig& cfg, TrackModel& model, const std::filesystem::path& data_dir,
                               const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<TrainSeq> seqs = load_train_seqs(data_dir);
    Optimizer opt(cfg);
    ParamList params = model.parameters();
    LossWeights lw{cfg.lambda_iou, cfg.lambda_l1, cfg.focal_gamma};

    int start_epoch = 0;
    if (!cfg.resume.empty()) {
        auto records = load_checkpoint(cfg.resume);
        load_params(records, params);
        opt.load_records(records, params);
        bool found = false;
        for (auto& r : records)
            if (r.name == "train.epoch") {
                start_epoch = static_cast<int>(r.data.at(0));
                found = true;
            }
        if (!found) throw data_error(strcat_(cfg.resume, ": checkpoint has no training progress record"));
        BTM_LOGI("resumed from %s at epoch %d", cfg.resume.c_str(), start_epoch);
    }

    TrainResult result;
    result.checkpoint = out_dir / "checkpoint.btm";
    std::ofstream losslog(out_dir / "loss_log.csv", start_epoch > 0 ? std::ios::app : std::ios::out);
    if (start_epoch == 0) losslog << "epoch,loss\n";

    int steps = std::max(1, cfg.samples_per_epoch / cfg.batch_size);
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0;
        for (int step = 0; step < steps; ++step) {
            opt.zero_grad(params);
            double batch_loss = 0;
            for (int item = 0; item < cfg.batch_size; ++item) {
                TrainSample sample = draw_sample(cfg, seqs, epoch, step, item);
                Tape tape;
                Tape::Scope scope(tape);
                ForwardResult fwd = model.forward(sample.images);
                Tensor loss = scale(compute_loss(fwd.out, sample.gt, lw).total, 1.0 / cfg.batch_size);
                tape.backward(loss);
                batch_loss += loss.item();
            }
            opt.step(params, epoch);
            epoch_loss += batch_loss;
            BTM_LOGD("epoch %d step %d loss %.6f", epoch, step, batch_loss);
        }
        epoch_loss /= steps;
        result.epoch_loss.push_back(epoch_loss);
        char row[64];
        std::snprintf(row, sizeof row, "%d,%.6f\n", epoch, epoch_loss);
        losslog << row << std::flush;
        BTM_LOGI("epoch %d mean loss %.6f", epoch, epoch_loss);
        save_train_checkpoint(result.checkpoint, model, opt, epoch + 1);
    }
    return result;
}

}  // namespace btm
