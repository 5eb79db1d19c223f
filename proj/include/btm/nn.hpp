#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "btm/rng.hpp"
#include "btm/tensor.hpp"

namespace btm {

struct Param {
    std::string name;
    Tensor t;
    bool backbone;  // learning-rate group
};
using ParamList = std::vector<Param>;

inline Tensor init_trunc_normal(Shape s, CounterRng& rng, double std_dev = 0.02) {
    Tensor t = Tensor::zeros(std::move(s), true);
    for (auto& v : t.mutable_values()) v = rng.trunc_normal(std_dev);
    return t;
}

inline Tensor init_const(Shape s, double val) { return Tensor::full(std::move(s), val).set_requires_grad(true); }

// Per-forward instrumentation, reset by the caller.
struct ForwardStats {
    int attn_blocks = 0;
    int mhca_calls = 0;
    int prune_events = 0;
    int tdtb_calls = 0;
    std::vector<int> search_tokens_per_layer;
};

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]

    Linear() = default;
    Linear(int in, int out, CounterRng& rng) : w(init_trunc_normal({in, out}, rng)), b(init_const({out}, 0.0)) {}

    Tensor apply(const Tensor& x) const { return add_row_bias(matmul(x, w), b); }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        out.push_back({prefix + ".w", w, backbone});
        out.push_back({prefix + ".b", b, backbone});
    }
};

struct LayerNormParams {
    Tensor gamma, beta;

    LayerNormParams() = default;
    explicit LayerNormParams(int c) : gamma(init_const({c}, 1.0)), beta(init_const({c}, 0.0)) {}

    Tensor apply(const Tensor& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        out.push_back({prefix + ".g", gamma, backbone});
        out.push_back({prefix + ".b", beta, backbone});
    }
};

struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(int c, int hidden, CounterRng& rng) : fc1(c, hidden, rng), fc2(hidden, c, rng) {}

    Tensor apply(const Tensor& x) const { return fc2.apply(gelu(fc1.apply(x))); }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        fc1.collect(prefix + ".fc1", backbone, out);
        fc2.collect(prefix + ".fc2", backbone, out);
    }
};

struct AttnProj {
    Linear q, k, v, o;
    int heads = 1;

    AttnProj() = default;
    AttnProj(int c, int heads_, CounterRng& rng)
        : q(c, c, rng), k(c, c, rng), v(c, c, rng), o(c, c, rng), heads(heads_) {
        if (c % heads_ != 0) throw contract_error(strcat_("attention: channels ", c, " not divisible by heads ", heads_));
    }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        q.collect(prefix + ".q", backbone, out);
        k.collect(prefix + ".k", backbone, out);
        v.collect(prefix + ".v", backbone, out);
        o.collect(prefix + ".o", backbone, out);
    }
};

struct AttnResult {
    Tensor out;                // [Nq, C]
    std::vector<Tensor> maps;  // per head, [Nq, Nk] post-softmax (if captured)
};

namespace detail {

// Shared multi-head attention core. Scaling is 1/sqrt(C/heads); keys and
// values are projections of the same source sequence.
inline AttnResult mha_core(const Tensor& q_in, const Tensor& kv_in, const AttnProj& p, bool keep_maps) {
    int c = p.q.w.dim(1);
    int dh = c / p.heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor Q = p.q.apply(q_in);
    Tensor K = p.k.apply(kv_in);
    Tensor V = p.v.apply(kv_in);
    std::vector<Tensor> ctx;
    AttnResult res;
    ctx.reserve(static_cast<size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        Tensor qh = slice_cols(Q, h * dh, dh);
        Tensor kh = slice_cols(K, h * dh, dh);
        Tensor vh = slice_cols(V, h * dh, dh);
        Tensor att = softmax_rows(scale(matmul_nt(qh, kh), scl));
        if (keep_maps) res.maps.push_back(att);
        ctx.push_back(matmul(att, vh));
    }
    res.out = p.o.apply(concat_last(ctx));
    return res;
}

}  // namespace detail

// Self-attention over one token sequence; returns per-head attention maps.
inline AttnResult self_attention(const Tensor& x, const AttnProj& p) {
    return detail::mha_core(x, x, p, true);
}

// Cross-attention: queries from x, keys and values from y.
inline Tensor cross_attention(const Tensor& x, const Tensor& y, const AttnProj& p, ForwardStats* stats = nullptr) {
    if (stats) ++stats->mhca_calls;
    return detail::mha_core(x, y, p, false).out;
}

// Pre-norm encoder block: x + attn(LN(x)), then x + mlp(LN(x)).
struct EncoderBlock {
    LayerNormParams ln1, ln2;
    AttnProj attn;
    Mlp mlp;

    EncoderBlock() = default;
    EncoderBlock(int c, int heads, int mlp_ratio, CounterRng& rng)
        : ln1(c), ln2(c), attn(c, heads, rng), mlp(c, c * mlp_ratio, rng) {}

    AttnResult apply(const Tensor& x) const {
        AttnResult ar = self_attention(ln1.apply(x), attn);
        Tensor x1 = add(x, ar.out);
        ar.out = add(x1, mlp.apply(ln2.apply(x1)));
        return ar;
    }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        ln1.collect(prefix + ".ln1", backbone, out);
        attn.collect(prefix + ".attn", backbone, out);
        ln2.collect(prefix + ".ln2", backbone, out);
        mlp.collect(prefix + ".mlp", backbone, out);
    }
};

// Post-norm cross-attention stage: LN(x + mhca(x, y)) then LN(h + mlp(h)).
struct BridgeStage {
    AttnProj attn;
    LayerNormParams ln_a, ln_b;
    Mlp mlp;

    BridgeStage() = default;
    BridgeStage(int c, int heads, int mlp_ratio, CounterRng& rng)
        : attn(c, heads, rng), ln_a(c), ln_b(c), mlp(c, c * mlp_ratio, rng) {}

    Tensor apply(const Tensor& x, const Tensor& y, ForwardStats* stats = nullptr) const {
        Tensor h = ln_a.apply(add(x, cross_attention(x, y, attn, stats)));
        return ln_b.apply(add(h, mlp.apply(h)));
    }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        attn.collect(prefix + ".attn", backbone, out);
        ln_a.collect(prefix + ".ln_a", backbone, out);
        mlp.collect(prefix + ".mlp", backbone, out);
        ln_b.collect(prefix + ".ln_b", backbone, out);
    }
};

// Splits an image tensor [H,W,3] into non-overlapping P x P patches,
// projects each flattened patch and adds a learned positional table.
// Template and search inputs share the projection but use separate tables.
struct PatchEmbed {
    int patch = 16;
    int template_size = 128;
    int search_size = 256;
    Linear proj;
    Tensor pos_template;  // [Nz, C]
    Tensor pos_search;    // [Nx, C]

    PatchEmbed() = default;
    PatchEmbed(int patch_, int template_size_, int search_size_, int c, CounterRng& rng)
        : patch(patch_), template_size(template_size_), search_size(search_size_),
          proj(3 * patch_ * patch_, c, rng),
          pos_template(init_trunc_normal({num_template_tokens(), c}, rng)),
          pos_search(init_trunc_normal({num_search_tokens(), c}, rng)) {}

    int num_template_tokens() const {
        int g = template_size / patch;
        return g * g;
    }
    int num_search_tokens() const {
        int g = search_size / patch;
        return g * g;
    }

    // Plain data rearrangement; the image itself is not differentiated.
    Tensor patchify(const Tensor& image) const {
        if (image.rank() != 3 || image.dim(2) != 3)
            throw shape_error(strcat_("patchify: expected [H,W,3], got ", shape_str(image.shape())));
        int H = image.dim(0), W = image.dim(1);
        if (H % patch != 0 || W % patch != 0)
            throw contract_error(strcat_("patchify: image ", H, "x", W, " not divisible by patch ", patch));
        int gh = H / patch, gw = W / patch;
        int d = 3 * patch * patch;
        Tensor out = Tensor::zeros({gh * gw, d});
        auto& ov = out.mutable_values();
        const auto& iv = image.values();
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                double* dst = ov.data() + (static_cast<size_t>(py) * gw + px) * d;
                for (int dy = 0; dy < patch; ++dy)
                    for (int dx = 0; dx < patch; ++dx) {
                        const double* src = iv.data() + ((static_cast<size_t>(py * patch + dy) * W) + px * patch + dx) * 3;
                        *dst++ = src[0];
                        *dst++ = src[1];
                        *dst++ = src[2];
                    }
            }
        return out;
    }

    Tensor embed(const Tensor& image, bool is_template) const {
        int want = is_template ? template_size : search_size;
        if (image.dim(0) != want || image.dim(1) != want)
            throw shape_error(strcat_("embed: expected ", want, "x", want, " image, got ", shape_str(image.shape())));
        Tensor tokens = proj.apply(patchify(image));
        return add(tokens, is_template ? pos_template : pos_search);
    }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        proj.collect(prefix + ".proj", backbone, out);
        out.push_back({prefix + ".pos_template", pos_template, backbone});
        out.push_back({prefix + ".pos_search", pos_search, backbone});
    }
};

}  // namespace btm
