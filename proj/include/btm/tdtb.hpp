#pragma once

#include <string>
#include <vector>

#include "btm/nn.hpp"

namespace btm {

struct TdtbInput {
    Tensor z_rgb_static, z_rgb_dynamic;  // [Nz, C] each
    Tensor z_tir_static, z_tir_dynamic;
    Tensor x_rgb, x_tir;  // [Ns, C]
};

struct TdtbOutput {
    Tensor z_rgb, z_tir;  // [2*Nz, C], static rows first
    Tensor x_rgb, x_tir;  // [Ns, C]
};

// Dual-template bridging. The two modalities' templates are fused by one
// shared linear reduction (static and dynamic separately), stacked into a
// bridge sequence, and exchanged with both search regions through six
// cross-attention stages:
//   0: bridge absorbs the TIR search tokens
//   1: RGB search absorbs the bridge
//   2: bridge absorbs the updated RGB search tokens
//   3: TIR search absorbs the bridge
//   4: RGB templates absorb the bridge
//   5: TIR templates absorb the bridge
class Tdtb {
public:
    Tdtb() = default;
    Tdtb(int c, int heads, int mlp_ratio, CounterRng& rng) : fuse_(2 * c, c, rng) {
        stages_.reserve(6);
        for (int i = 0; i < 6; ++i) stages_.emplace_back(c, heads, mlp_ratio, rng);
    }

    TdtbOutput forward(const TdtbInput& in, ForwardStats* stats = nullptr) const {
        Tensor zs = fuse_.apply(concat_last(in.z_rgb_static, in.z_tir_static));
        Tensor zd = fuse_.apply(concat_last(in.z_rgb_dynamic, in.z_tir_dynamic));
        Tensor zm = concat_rows(zs, zd);

        Tensor zm1 = stages_[0].apply(zm, in.x_tir, stats);
        Tensor x_rgb = stages_[1].apply(in.x_rgb, zm1, stats);
        Tensor zm2 = stages_[2].apply(zm1, x_rgb, stats);
        Tensor x_tir = stages_[3].apply(in.x_tir, zm2, stats);
        Tensor z_rgb = stages_[4].apply(concat_rows(in.z_rgb_static, in.z_rgb_dynamic), zm2, stats);
        Tensor z_tir = stages_[5].apply(concat_rows(in.z_tir_static, in.z_tir_dynamic), zm2, stats);

        if (stats) ++stats->tdtb_calls;
        return TdtbOutput{z_rgb, z_tir, x_rgb, x_tir};
    }

    void collect(const std::string& prefix, ParamList& out) const {
        fuse_.collect(prefix + ".fuse", false, out);
        for (size_t i = 0; i < stages_.size(); ++i)
            stages_[i].collect(prefix + ".s" + std::to_string(i), false, out);
    }

private:
    Linear fuse_;  // [2C, C], shared between static and dynamic fusion
    std::vector<BridgeStage> stages_;
};

}  // namespace btm
