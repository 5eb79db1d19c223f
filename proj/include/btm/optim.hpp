#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "btm/checkpoint.hpp"
#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/nn.hpp"

namespace btm {

// Two-group first-order optimizer: backbone parameters train at lr_backbone,
// everything else at lr_other (a 1:10 split by default), and both rates step
// down once by lr_decay_factor at the two-thirds point of the epoch budget.
class Optimizer {
public:
    explicit Optimizer(const RunConfig& cfg)
        : kind_(cfg.optimizer),
          lr_backbone_(cfg.lr_backbone),
          lr_other_(cfg.lr_other),
          momentum_(cfg.momentum),
          weight_decay_(cfg.weight_decay),
          decay_factor_(cfg.lr_decay_factor),
          decay_epoch_((2 * cfg.epochs) / 3) {
        if (kind_ != "sgd" && kind_ != "adamw") throw config_error(strcat_("unknown optimizer '", kind_, "'"));
    }

    void zero_grad(ParamList& params) {
        for (auto& p : params) p.t.zero_grad();
    }

    void step(ParamList& params, int epoch) {
        ++t_;
        double decay = epoch >= decay_epoch_ ? decay_factor_ : 1.0;
        for (auto& p : params) {
            if (!p.t.has_grad()) continue;
            double lr = (p.backbone ? lr_backbone_ : lr_other_) * decay;
            auto& w = p.t.mutable_values();
            auto& g = p.t.grad();
            if (kind_ == "sgd") {
                auto& vel = buf_(vel_, p, w.size());
                for (size_t i = 0; i < w.size(); ++i) {
                    double grad = g[i] + weight_decay_ * w[i];
                    vel[i] = momentum_ * vel[i] + grad;
                    w[i] -= lr * vel[i];
                }
            } else {
                auto& m = buf_(m_, p, w.size());
                auto& v = buf_(v_, p, w.size());
                double bc1 = 1.0 - std::pow(0.9, t_);
                double bc2 = 1.0 - std::pow(0.999, t_);
                for (size_t i = 0; i < w.size(); ++i) {
                    w[i] -= lr * weight_decay_ * w[i];
                    m[i] = 0.9 * m[i] + 0.1 * g[i];
                    v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                    w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
                }
            }
        }
    }

    // Round state through f32 so a resumed run sees exactly the saved values.
    void quantize_state() {
        for (auto* store : {&vel_, &m_, &v_})
            for (auto& [name, buf] : *store)
                for (auto& x : buf) x = static_cast<double>(static_cast<float>(x));
    }

    void append_records(const ParamList& params, std::vector<CheckpointRecord>& out) const {
        auto dump = [&](const char* tag, const std::map<std::string, std::vector<double>>& store) {
            for (auto& p : params) {
                auto it = store.find(p.name);
                if (it == store.end()) continue;
                CheckpointRecord r;
                r.name = strcat_("opt.", tag, ".", p.name);
                r.shape = p.t.shape();
                r.data.reserve(it->second.size());
                for (double x : it->second) r.data.push_back(static_cast<float>(x));
                out.push_back(std::move(r));
            }
        };
        dump("vel", vel_);
        dump("m", m_);
        dump("v", v_);
        CheckpointRecord t;
        t.name = "opt.t";
        t.shape = {1};
        t.data = {static_cast<float>(t_)};
        out.push_back(std::move(t));
    }

    void load_records(const std::vector<CheckpointRecord>& records, const ParamList& params) {
        std::map<std::string, const CheckpointRecord*> byname;
        for (auto& r : records) byname[r.name] = &r;
        auto pull = [&](const char* tag, std::map<std::string, std::vector<double>>& store) {
            for (auto& p : params) {
                auto it = byname.find(strcat_("opt.", tag, ".", p.name));
                if (it == byname.end()) throw data_error(strcat_("checkpoint missing optimizer state for ", p.name));
                std::vector<double> buf(it->second->data.begin(), it->second->data.end());
                if (buf.size() != p.t.values().size())
                    throw data_error(strcat_("optimizer state size mismatch for ", p.name));
                store[p.name] = std::move(buf);
            }
        };
        if (kind_ == "sgd") pull("vel", vel_);
        else {
            pull("m", m_);
            pull("v", v_);
        }
        auto it = byname.find("opt.t");
        if (it == byname.end()) throw data_error("checkpoint missing optimizer step count");
        t_ = static_cast<int64_t>(it->second->data.at(0));
    }

    int decay_epoch() const { return decay_epoch_; }

private:
    std::vector<double>& buf_(std::map<std::string, std::vector<double>>& store, const Param& p, size_t n) {
        auto [it, fresh] = store.try_emplace(p.name);
        if (fresh) it->second.assign(n, 0.0);
        return it->second;
    }

    std::string kind_;
    double lr_backbone_, lr_other_, momentum_, weight_decay_, decay_factor_;
    int decay_epoch_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> vel_, m_, v_;
};

}  // namespace btm
