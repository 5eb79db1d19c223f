#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "btm/nn.hpp"

namespace btm {

// Axis-aligned box, center + extent, in normalized crop coordinates [0,1].
struct BBox {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

// Axis-aligned box in frame pixels, top-left origin.
struct PixelBox {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
    double cx() const { return x + w / 2.0; }
    double cy() const { return y + h / 2.0; }
};

struct GiouParts {
    double iou = 0.0;
    double giou = 0.0;
};

// Plain-value intersection over union with the hull penalty term.
inline GiouParts giou_cxcywh(const BBox& a, const BBox& b) {
    if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0)
        throw contract_error(strcat_("giou: degenerate box ", a.w, "x", a.h, " vs ", b.w, "x", b.h));
    double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    double inter = iw * ih;
    double uni = a.w * a.h + b.w * b.h - inter;
    double hull = (std::max(ax1, bx1) - std::min(ax0, bx0)) * (std::max(ay1, by1) - std::min(ay0, by0));
    GiouParts g;
    g.iou = inter / uni;
    g.giou = g.iou - (hull - uni) / hull;
    return g;
}

// Areas and the intersection come from the same corner expressions so that
// identical boxes overlap at exactly 1.
inline double iou_pixel(const PixelBox& a, const PixelBox& b) {
    double ax1 = a.x + a.w, ay1 = a.y + a.h, bx1 = b.x + b.w, by1 = b.y + b.h;
    double iw = std::max(0.0, std::min(ax1, bx1) - std::max(a.x, b.x));
    double ih = std::max(0.0, std::min(ay1, by1) - std::max(a.y, b.y));
    double inter = iw * ih;
    double uni = (ax1 - a.x) * (ay1 - a.y) + (bx1 - b.x) * (by1 - b.y) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct HeadOut {
    Tensor cls;     // [G,G], values in (0,1)
    Tensor offset;  // [G,G,2], values in (-0.5,0.5)
    Tensor size;    // [G,G,2], values in (0,1)
};

struct ConvLayer {
    Tensor w;  // [k,k,Cin,Cout]
    Tensor b;  // [Cout]

    ConvLayer() = default;
    ConvLayer(int k, int cin, int cout, CounterRng& rng)
        : w(init_trunc_normal({k, k, cin, cout}, rng)), b(init_const({cout}, 0.0)) {}

    Tensor apply(const Tensor& x) const { return conv2d(x, w, b); }

    void collect(const std::string& prefix, bool backbone, ParamList& out) const {
        out.push_back({prefix + ".w", w, backbone});
        out.push_back({prefix + ".b", b, backbone});
    }
};

// Anchor-free center head. The two modality feature maps are fused by
// channel concatenation and a 3x3 reduction, then three branches emit a
// classification map, a sub-cell center offset, and a normalized extent.
class CenterHead {
public:
    CenterHead() = default;
    CenterHead(int c, CounterRng& rng)
        : fuse_(3, 2 * c, c, rng),
          cls_a_(3, c, c, rng), cls_b_(1, c, 1, rng),
          off_a_(3, c, c, rng), off_b_(1, c, 2, rng),
          size_a_(3, c, c, rng), size_b_(1, c, 2, rng) {}

    HeadOut apply(const Tensor& feat_rgb, const Tensor& feat_tir) const {
        Tensor f = relu(fuse_.apply(concat_last(feat_rgb, feat_tir)));
        int g = f.dim(0);
        HeadOut out;
        out.cls = reshape(sigmoid(cls_b_.apply(relu(cls_a_.apply(f)))), {g, g});
        out.offset = affine(sigmoid(off_b_.apply(relu(off_a_.apply(f)))), 1.0, -0.5);
        out.size = sigmoid(size_b_.apply(relu(size_a_.apply(f))));
        return out;
    }

    void collect(const std::string& prefix, ParamList& out) const {
        fuse_.collect(prefix + ".fuse", false, out);
        cls_a_.collect(prefix + ".cls_a", false, out);
        cls_b_.collect(prefix + ".cls_b", false, out);
        off_a_.collect(prefix + ".off_a", false, out);
        off_b_.collect(prefix + ".off_b", false, out);
        size_a_.collect(prefix + ".size_a", false, out);
        size_b_.collect(prefix + ".size_b", false, out);
    }

private:
    ConvLayer fuse_;
    ConvLayer cls_a_, cls_b_;
    ConvLayer off_a_, off_b_;
    ConvLayer size_a_, size_b_;
};

struct Decoded {
    BBox box;
    double score = 0.0;
    int row = 0, col = 0;
};

// Peak cell (row-major first on ties) plus its offset and extent readouts.
// An optional multiplicative window biases only the peak selection.
inline Decoded decode(const HeadOut& out, const std::vector<double>* window = nullptr) {
    int gh = out.cls.dim(0), gw = out.cls.dim(1);
    const auto& cv = out.cls.values();
    if (window && static_cast<int64_t>(window->size()) != out.cls.numel())
        throw contract_error("decode: window size does not match the classification map");
    int best = 0;
    double best_v = window ? cv[0] * (*window)[0] : cv[0];
    for (int i = 1; i < gh * gw; ++i) {
        double v = window ? cv[static_cast<size_t>(i)] * (*window)[static_cast<size_t>(i)] : cv[static_cast<size_t>(i)];
        if (v > best_v) {
            best_v = v;
            best = i;
        }
    }
    Decoded d;
    d.row = best / gw;
    d.col = best % gw;
    d.score = cv[static_cast<size_t>(best)];
    d.box.cx = (d.col + 0.5 + out.offset.get(d.row, d.col, 0)) / gw;
    d.box.cy = (d.row + 0.5 + out.offset.get(d.row, d.col, 1)) / gh;
    d.box.w = out.size.get(d.row, d.col, 0);
    d.box.h = out.size.get(d.row, d.col, 1);
    return d;
}

// Inverse of decode for a box whose center projects strictly inside a cell:
// a one-hot classification peak and exact offset/size readouts there.
inline HeadOut encode(const BBox& box, int gh, int gw) {
    HeadOut out;
    out.cls = Tensor::zeros({gh, gw});
    out.offset = Tensor::zeros({gh, gw, 2});
    out.size = Tensor::zeros({gh, gw, 2});
    int j = std::min(gw - 1, std::max(0, static_cast<int>(box.cx * gw)));
    int i = std::min(gh - 1, std::max(0, static_cast<int>(box.cy * gh)));
    out.cls.mutable_values()[static_cast<size_t>(i) * gw + j] = 1.0;
    auto& ov = out.offset.mutable_values();
    ov[(static_cast<size_t>(i) * gw + j) * 2 + 0] = box.cx * gw - j - 0.5;
    ov[(static_cast<size_t>(i) * gw + j) * 2 + 1] = box.cy * gh - i - 0.5;
    auto& sv = out.size.mutable_values();
    sv[(static_cast<size_t>(i) * gw + j) * 2 + 0] = box.w;
    sv[(static_cast<size_t>(i) * gw + j) * 2 + 1] = box.h;
    return out;
}

// Gaussian classification target with extent-proportional spread, clamped
// below so tiny targets still cover a few cells.
inline Tensor make_target_map(int gh, int gw, const BBox& gt) {
    Tensor t = Tensor::zeros({gh, gw});
    double cx = gt.cx * gw, cy = gt.cy * gh;
    double sx = std::max(0.75, gt.w * gw / 6.0);
    double sy = std::max(0.75, gt.h * gh / 6.0);
    auto& v = t.mutable_values();
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
            double dx = (j + 0.5 - cx) / sx;
            double dy = (i + 0.5 - cy) / sy;
            v[static_cast<size_t>(i) * gw + j] = std::exp(-0.5 * (dx * dx + dy * dy));
        }
    return t;
}

struct LossWeights {
    double lambda_iou = 2.0;
    double lambda_l1 = 5.0;
    double focal_gamma = 2.0;
};

struct LossParts {
    Tensor total, cls, iou, l1;
};

namespace detail {

// Differentiable generalized-IoU of a predicted box (rank-0 tensors)
// against a constant ground-truth box.
inline Tensor giou_term(const Tensor& cx, const Tensor& cy, const Tensor& w, const Tensor& h, const BBox& gt) {
    Tensor ax0 = sub(cx, scale(w, 0.5)), ax1 = add(cx, scale(w, 0.5));
    Tensor ay0 = sub(cy, scale(h, 0.5)), ay1 = add(cy, scale(h, 0.5));
    Tensor bx0 = Tensor::scalar(gt.cx - gt.w / 2), bx1 = Tensor::scalar(gt.cx + gt.w / 2);
    Tensor by0 = Tensor::scalar(gt.cy - gt.h / 2), by1 = Tensor::scalar(gt.cy + gt.h / 2);
    Tensor iw = relu(sub(min_el(ax1, bx1), max_el(ax0, bx0)));
    Tensor ih = relu(sub(min_el(ay1, by1), max_el(ay0, by0)));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(mul(w, h), Tensor::scalar(gt.w * gt.h)), inter);
    Tensor iou = div(inter, uni);
    Tensor hull = mul(sub(max_el(ax1, bx1), min_el(ax0, bx0)), sub(max_el(ay1, by1), min_el(ay0, by0)));
    return sub(iou, div(sub(hull, uni), hull));
}

}  // namespace detail

// Weighted focal classification over the full map plus box terms read at
// the ground-truth cell: lambda_iou * (1 - GIoU) + lambda_l1 * L1.
inline LossParts compute_loss(const HeadOut& out, const BBox& gt, const LossWeights& lw) {
    if (gt.w <= 0.0 || gt.h <= 0.0 || gt.cx < 0.0 || gt.cx > 1.0 || gt.cy < 0.0 || gt.cy > 1.0)
        throw data_error(strcat_("loss: degenerate ground-truth box cx=", gt.cx, " cy=", gt.cy, " w=", gt.w, " h=", gt.h));
    int gh = out.cls.dim(0), gw = out.cls.dim(1);

    Tensor y = make_target_map(gh, gw, gt);
    Tensor p = clamp(out.cls, 1e-12, 1.0 - 1e-12);
    Tensor bce = neg(add(mul(y, log_el(p)), mul(affine(y, -1.0, 1.0), log_el(affine(p, -1.0, 1.0)))));
    Tensor focal_w = pow_el(abs_el(sub(y, out.cls)), lw.focal_gamma);
    LossParts parts;
    parts.cls = mean_all(mul(focal_w, bce));

    int j = std::min(gw - 1, std::max(0, static_cast<int>(gt.cx * gw)));
    int i = std::min(gh - 1, std::max(0, static_cast<int>(gt.cy * gh)));
    int64_t cell = static_cast<int64_t>(i) * gw + j;
    Tensor off_x = take(out.offset, cell * 2 + 0);
    Tensor off_y = take(out.offset, cell * 2 + 1);
    Tensor pw = take(out.size, cell * 2 + 0);
    Tensor ph = take(out.size, cell * 2 + 1);
    Tensor pcx = scale(add(off_x, Tensor::scalar(j + 0.5)), 1.0 / gw);
    Tensor pcy = scale(add(off_y, Tensor::scalar(i + 0.5)), 1.0 / gh);

    parts.iou = affine(detail::giou_term(pcx, pcy, pw, ph, gt), -1.0, 1.0);

    Tensor l1 = add(add(abs_el(sub(pcx, Tensor::scalar(gt.cx))), abs_el(sub(pcy, Tensor::scalar(gt.cy)))),
                    add(abs_el(sub(pw, Tensor::scalar(gt.w))), abs_el(sub(ph, Tensor::scalar(gt.h)))));
    parts.l1 = scale(l1, 0.25);

    parts.total = add(parts.cls, add(scale(parts.iou, lw.lambda_iou), scale(parts.l1, lw.lambda_l1)));
    return parts;
}

}  // namespace btm
