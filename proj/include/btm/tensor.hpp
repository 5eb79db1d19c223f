#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "btm/common.hpp"

namespace btm {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct TensorData {
    Shape shape;
    std::vector<double> v;
    bool requires_grad = false;
    std::vector<double> g;  // empty until a gradient is accumulated
};

// Value semantics over a shared payload. Operations never mutate input
// payloads; mutable_values() exists for parameter initialization and
// optimizer updates, which happen outside any recording scope.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        validate_shape(s);
        d->v.assign(static_cast<size_t>(shape_numel(s)), 0.0);
        d->shape = std::move(s);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    static Tensor full(Shape s, double val) {
        Tensor t = zeros(std::move(s));
        std::fill(t.d_->v.begin(), t.d_->v.end(), val);
        return t;
    }

    static Tensor from(Shape s, std::vector<double> vals) {
        validate_shape(s);
        if (static_cast<int64_t>(vals.size()) != shape_numel(s))
            throw shape_error(strcat_("tensor init: ", vals.size(), " values for shape ", shape_str(s)));
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(s);
        d->v = std::move(vals);
        return Tensor(std::move(d));
    }

    static Tensor scalar(double val) { return from({}, {val}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }

    double item() const {
        if (numel() != 1) throw contract_error(strcat_("item() on tensor of shape ", shape_str(shape())));
        return d_->v[0];
    }

    const std::vector<double>& values() const { return d_->v; }
    std::vector<double>& mutable_values() { return d_->v; }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !d_->g.empty(); }
    const std::vector<double>& grad() const {
        if (d_->g.empty()) throw contract_error("grad() before any backward accumulation");
        return d_->g;
    }
    void zero_grad() { d_->g.clear(); }

    double get(int i) const { return d_->v[static_cast<size_t>(i)]; }
    double get(int i, int j) const { return d_->v[static_cast<size_t>(i) * dim(1) + j]; }
    double get(int i, int j, int k) const {
        return d_->v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static void validate_shape(const Shape& s) {
        for (int d : s)
            if (d <= 0) throw shape_error(strcat_("non-positive extent in shape ", shape_str(s)));
    }

    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Exactly one tape may be active per thread; activation is
// scoped. Operations record a backward closure only while a tape is active
// and at least one input requires gradients, so inference runs tape-free.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(tl_active()) { tl_active() = &t; }
        ~Scope() { tl_active() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return tl_active(); }

    static void record(std::function<void()> fn) {
        Tape* t = tl_active();
        t->ops_.push_back(std::move(fn));
    }

    size_t num_ops() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded closures in reverse.
    // The tape is consumed: a second backward requires re-recording.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1) throw contract_error(strcat_("backward on non-scalar loss of shape ", shape_str(loss.shape())));
        if (!loss.requires_grad()) throw contract_error("backward on a loss that is not connected to the tape");
        auto d = loss.ptr();
        if (d->g.empty()) d->g.assign(1, 0.0);
        d->g[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    static Tape*& tl_active() {
        thread_local Tape* t = nullptr;
        return t;
    }
    std::vector<std::function<void()>> ops_;
};

namespace detail {

inline bool tracking(const Tensor& a) { return Tape::active() && a.requires_grad(); }
inline bool tracking(const Tensor& a, const Tensor& b) {
    return Tape::active() && (a.requires_grad() || b.requires_grad());
}
inline bool tracking(const Tensor& a, const Tensor& b, const Tensor& c) {
    return Tape::active() && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

inline std::vector<double>& grad_buf(TensorData& t) {
    if (t.g.empty()) t.g.assign(t.v.size(), 0.0);
    return t.g;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw shape_error(strcat_(op, ": shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()), " differ"));
}

// Dense kernels shared by forward passes and backward closures.
namespace kern {

// C[M,N] += or = A[M,K] * B[K,N]
inline void mm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > (1 << 18))
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<size_t>(i) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = 0.0;
        const double* a = A + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += or = A[M,K] * B[N,K]^T
inline void mm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > (1 << 18))
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

// C[M,N] += or = A[K,M]^T * B[K,N]
inline void mm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > (1 << 18))
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<size_t>(i) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = 0.0;
        for (int k = 0; k < K; ++k) {
            double av = A[static_cast<size_t>(k) * M + i];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace kern
}  // namespace detail

// ---- elementwise binary ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::grad_buf(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::grad_buf(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::grad_buf(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::grad_buf(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] -= od->g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::grad_buf(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i] * bd->v[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::grad_buf(*bd);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i] * ad->v[i];
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("div", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                auto& g = detail::grad_buf(*ad);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i] / bd->v[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::grad_buf(*bd);
                for (size_t i = 0; i < g.size(); ++i)
                    g[i] -= od->g[i] * ad->v[i] / (bd->v[i] * bd->v[i]);
            }
        });
    }
    return out;
}

// Elementwise minimum; at ties the first argument carries the gradient.
inline Tensor min_el(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("min_el", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] <= bv[i] ? av[i] : bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            for (size_t i = 0; i < od->g.size(); ++i) {
                bool take_a = ad->v[i] <= bd->v[i];
                if (take_a && ad->requires_grad) detail::grad_buf(*ad)[i] += od->g[i];
                if (!take_a && bd->requires_grad) detail::grad_buf(*bd)[i] += od->g[i];
            }
        });
    }
    return out;
}

inline Tensor max_el(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("max_el", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto &av = a.values(), &bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] >= bv[i] ? av[i] : bv[i];
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            for (size_t i = 0; i < od->g.size(); ++i) {
                bool take_a = ad->v[i] >= bd->v[i];
                if (take_a && ad->requires_grad) detail::grad_buf(*ad)[i] += od->g[i];
                if (!take_a && bd->requires_grad) detail::grad_buf(*bd)[i] += od->g[i];
            }
        });
    }
    return out;
}

// ---- elementwise unary ----

namespace detail {
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = f(xv[i]);
    if (tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), df] {
            if (od->g.empty()) return;
            auto& g = grad_buf(*xd);
            for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i] * df(xd->v[i], od->v[i]);
        });
    }
    return out;
}
}  // namespace detail

// y = k*x + c with scalar constants.
inline Tensor affine(const Tensor& x, double k, double c) {
    return detail::unary_op(
        x, [k, c](double v) { return k * v + c; }, [k](double, double) { return k; });
}

inline Tensor scale(const Tensor& x, double k) { return affine(x, k, 0.0); }
inline Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor abs_el(const Tensor& x) {
    return detail::unary_op(
        x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
    return detail::unary_op(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244)); },
        [](double v, double) {
            double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
            double pdf = std::exp(-0.5 * v * v) * 0.3989422804014326779;
            return cdf + v * pdf;
        });
}

// x^e for non-negative x; the derivative at x = 0 is taken as 0 when e != 1.
inline Tensor pow_el(const Tensor& x, double e) {
    return detail::unary_op(
        x, [e](double v) { return std::pow(v, e); },
        [e](double v, double) {
            if (v == 0.0) return e == 1.0 ? 1.0 : 0.0;
            return e * std::pow(v, e - 1.0);
        });
}

inline Tensor log_el(const Tensor& x) {
    return detail::unary_op(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// Clamp to [lo, hi]; gradient passes only inside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(hi, std::max(lo, xv[i]));
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), lo, hi] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (size_t i = 0; i < g.size(); ++i)
                if (xd->v[i] > lo && xd->v[i] < hi) g[i] += od->g[i];
        });
    }
    return out;
}

// ---- matrix products ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw shape_error(strcat_("matmul: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape())));
    int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out = Tensor::zeros({M, N});
    detail::kern::mm_nn(M, N, K, a.values().data(), b.values().data(), out.mutable_values().data(), false);
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr(), M, N, K] {
            if (od->g.empty()) return;
            if (ad->requires_grad)  // dA = dC * B^T
                detail::kern::mm_nt(M, K, N, od->g.data(), bd->v.data(), detail::grad_buf(*ad).data(), true);
            if (bd->requires_grad)  // dB = A^T * dC
                detail::kern::mm_tn(K, N, M, ad->v.data(), od->g.data(), detail::grad_buf(*bd).data(), true);
        });
    }
    return out;
}

// a [M,K] times b[N,K] transposed: out [M,N].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw shape_error(strcat_("matmul_nt: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape()), "^T"));
    int M = a.dim(0), K = a.dim(1), N = b.dim(0);
    Tensor out = Tensor::zeros({M, N});
    detail::kern::mm_nt(M, N, K, a.values().data(), b.values().data(), out.mutable_values().data(), false);
    if (detail::tracking(a, b)) {
        out.set_requires_grad(true);
        Tape::record([ad = a.ptr(), bd = b.ptr(), od = out.ptr(), M, N, K] {
            if (od->g.empty()) return;
            if (ad->requires_grad)  // dA = dC * B
                detail::kern::mm_nn(M, K, N, od->g.data(), bd->v.data(), detail::grad_buf(*ad).data(), true);
            if (bd->requires_grad)  // dB = dC^T * A
                detail::kern::mm_tn(N, K, M, od->g.data(), ad->v.data(), detail::grad_buf(*bd).data(), true);
        });
    }
    return out;
}

// ---- softmax / layer norm ----

// Softmax over the last dimension with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw shape_error("softmax_rows: rank must be >= 1");
    int L = x.dim(x.rank() - 1);
    int64_t R = x.numel() / L;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int64_t r = 0; r < R; ++r) {
        const double* row = xv.data() + r * L;
        double* orow = ov.data() + r * L;
        double m = row[0];
        for (int i = 1; i < L; ++i) m = std::max(m, row[i]);
        double s = 0.0;
        for (int i = 0; i < L; ++i) {
            orow[i] = std::exp(row[i] - m);
            s += orow[i];
        }
        double inv = 1.0 / s;
        for (int i = 0; i < L; ++i) orow[i] *= inv;
    }
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), R, L] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (int64_t r = 0; r < R; ++r) {
                const double* y = od->v.data() + r * L;
                const double* gy = od->g.data() + r * L;
                double dot = 0.0;
                for (int i = 0; i < L; ++i) dot += gy[i] * y[i];
                double* gx = g.data() + r * L;
                for (int i = 0; i < L; ++i) gx[i] += y[i] * (gy[i] - dot);
            }
        });
    }
    return out;
}

// Normalizes the last dimension, then applies gamma/beta of length C.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6) {
    if (x.rank() < 1) throw shape_error("layer_norm: rank must be >= 1");
    int C = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw shape_error(strcat_("layer_norm: gamma/beta must have shape [", C, "]"));
    int64_t R = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.mutable_values();
    std::vector<double> xhat(static_cast<size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const double* row = xv.data() + r * C;
        double mean = 0.0;
        for (int i = 0; i < C; ++i) mean += row[i];
        mean /= C;
        double var = 0.0;
        for (int i = 0; i < C; ++i) {
            double d = row[i] - mean;
            var += d * d;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = inv;
        double* xh = xhat.data() + r * C;
        double* orow = ov.data() + r * C;
        for (int i = 0; i < C; ++i) {
            xh[i] = (row[i] - mean) * inv;
            orow[i] = xh[i] * gv[i] + bv[i];
        }
    }
    if (detail::tracking(x, gamma, beta)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), gd = gamma.ptr(), bd = beta.ptr(), od = out.ptr(),
                      xhat = std::move(xhat), inv_std = std::move(inv_std), R, C] {
            if (od->g.empty()) return;
            for (int64_t r = 0; r < R; ++r) {
                const double* gy = od->g.data() + r * C;
                const double* xh = xhat.data() + r * C;
                if (gd->requires_grad) {
                    auto& gg = detail::grad_buf(*gd);
                    for (int i = 0; i < C; ++i) gg[i] += gy[i] * xh[i];
                }
                if (bd->requires_grad) {
                    auto& gb = detail::grad_buf(*bd);
                    for (int i = 0; i < C; ++i) gb[i] += gy[i];
                }
                if (xd->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int i = 0; i < C; ++i) {
                        double t = gy[i] * gd->v[i];
                        m1 += t;
                        m2 += t * xh[i];
                    }
                    m1 /= C;
                    m2 /= C;
                    auto& gx = detail::grad_buf(*xd);
                    double inv = inv_std[static_cast<size_t>(r)];
                    double* gxr = gx.data() + r * C;
                    for (int i = 0; i < C; ++i)
                        gxr[i] += inv * (gy[i] * gd->v[i] - m1 - xh[i] * m2);
                }
            }
        });
    }
    return out;
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

// ---- structure: bias, slicing, concatenation, gather/scatter ----

// x [N,C] plus row-broadcast bias [C].
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0))
        throw shape_error(strcat_("add_row_bias: ", shape_str(x.shape()), " with bias ", shape_str(b.shape())));
    int C = b.dim(0);
    int64_t R = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (int64_t r = 0; r < R; ++r)
        for (int i = 0; i < C; ++i) ov[r * C + i] = xv[r * C + i] + bv[i];
    if (detail::tracking(x, b)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), bd = b.ptr(), od = out.ptr(), R, C] {
            if (od->g.empty()) return;
            if (xd->requires_grad) {
                auto& g = detail::grad_buf(*xd);
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                auto& g = detail::grad_buf(*bd);
                for (int64_t r = 0; r < R; ++r)
                    for (int i = 0; i < C; ++i) g[i] += od->g[r * C + i];
            }
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int n) {
    if (x.rank() != 2) throw shape_error("slice_rows: rank-2 tensor required");
    if (r0 < 0 || n <= 0 || r0 + n > x.dim(0))
        throw contract_error(strcat_("slice_rows: rows [", r0, ",", r0 + n, ") out of ", x.dim(0)));
    int C = x.dim(1);
    Tensor out = Tensor::zeros({n, C});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    std::copy(xv.begin() + static_cast<size_t>(r0) * C, xv.begin() + static_cast<size_t>(r0 + n) * C, ov.begin());
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), r0, n, C] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (int64_t i = 0; i < static_cast<int64_t>(n) * C; ++i)
                g[static_cast<size_t>(r0) * C + i] += od->g[i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int n) {
    if (x.rank() != 2) throw shape_error("slice_cols: rank-2 tensor required");
    if (c0 < 0 || n <= 0 || c0 + n > x.dim(1))
        throw contract_error(strcat_("slice_cols: cols [", c0, ",", c0 + n, ") out of ", x.dim(1)));
    int R = x.dim(0), C = x.dim(1);
    Tensor out = Tensor::zeros({R, n});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int r = 0; r < R; ++r)
        for (int j = 0; j < n; ++j) ov[static_cast<size_t>(r) * n + j] = xv[static_cast<size_t>(r) * C + c0 + j];
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), R, C, c0, n] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (int r = 0; r < R; ++r)
                for (int j = 0; j < n; ++j)
                    g[static_cast<size_t>(r) * C + c0 + j] += od->g[static_cast<size_t>(r) * n + j];
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no inputs");
    int C = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    int N = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != C)
            throw shape_error("concat_rows: all inputs must be rank-2 with equal column count");
        N += p.dim(0);
    }
    Tensor out = Tensor::zeros({N, C});
    auto& ov = out.mutable_values();
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), ov.begin() + static_cast<int64_t>(off));
        off += p.values().size();
    }
    bool track = false;
    if (Tape::active())
        for (const auto& p : parts) track = track || p.requires_grad();
    if (track) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> pd;
        pd.reserve(parts.size());
        for (const auto& p : parts) pd.push_back(p.ptr());
        Tape::record([pd = std::move(pd), od = out.ptr()] {
            if (od->g.empty()) return;
            size_t off = 0;
            for (auto& p : pd) {
                if (p->requires_grad) {
                    auto& g = detail::grad_buf(*p);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[off + i];
                }
                off += p->v.size();
            }
        });
    }
    return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) { return concat_rows(std::vector<Tensor>{a, b}); }

// Concatenate along the last dimension. Leading dimensions must agree.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_last: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.empty()) throw shape_error("concat_last: rank must be >= 1");
    Shape lead(s0.begin(), s0.end() - 1);
    int Ctot = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
            throw shape_error("concat_last: leading dimensions differ");
        widths.push_back(s.back());
        Ctot += s.back();
    }
    Shape os = lead;
    os.push_back(Ctot);
    Tensor out = Tensor::zeros(os);
    int64_t R = shape_numel(Shape(lead));
    auto& ov = out.mutable_values();
    for (int64_t r = 0; r < R; ++r) {
        int off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            int w = widths[pi];
            const double* src = parts[pi].values().data() + r * w;
            double* dst = ov.data() + r * Ctot + off;
            std::copy(src, src + w, dst);
            off += w;
        }
    }
    bool track = false;
    if (Tape::active())
        for (const auto& p : parts) track = track || p.requires_grad();
    if (track) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> pd;
        for (const auto& p : parts) pd.push_back(p.ptr());
        Tape::record([pd = std::move(pd), od = out.ptr(), widths, R, Ctot] {
            if (od->g.empty()) return;
            for (int64_t r = 0; r < R; ++r) {
                int off = 0;
                for (size_t pi = 0; pi < pd.size(); ++pi) {
                    int w = widths[pi];
                    if (pd[pi]->requires_grad) {
                        auto& g = detail::grad_buf(*pd[pi]);
                        const double* src = od->g.data() + r * Ctot + off;
                        for (int i = 0; i < w; ++i) g[r * w + i] += src[i];
                    }
                    off += w;
                }
            }
        });
    }
    return out;
}

inline Tensor concat_last(const Tensor& a, const Tensor& b) { return concat_last(std::vector<Tensor>{a, b}); }
inline Tensor concat_cols(const std::vector<Tensor>& parts) { return concat_last(parts); }

// Select rows of x [N,C] by index; indices may repeat.
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    if (x.rank() != 2) throw shape_error("gather_rows: rank-2 tensor required");
    int N = x.dim(0), C = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= N) throw contract_error(strcat_("gather_rows: index ", i, " out of [0,", N, ")"));
    if (idx.empty()) throw contract_error("gather_rows: empty index list");
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), C});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(xv.begin() + static_cast<size_t>(idx[r]) * C, xv.begin() + static_cast<size_t>(idx[r] + 1) * C,
                  ov.begin() + static_cast<int64_t>(r * C));
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), idx, C] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (size_t r = 0; r < idx.size(); ++r)
                for (int i = 0; i < C; ++i) g[static_cast<size_t>(idx[r]) * C + i] += od->g[r * C + i];
        });
    }
    return out;
}

// Place rows of x [K,C] into a zero tensor [total,C] at the given slots.
// Slots must be unique and within range; unfilled rows stay exactly zero.
inline Tensor scatter_rows(const Tensor& x, const std::vector<int>& slots, int total) {
    if (x.rank() != 2) throw shape_error("scatter_rows: rank-2 tensor required");
    if (static_cast<int>(slots.size()) != x.dim(0))
        throw contract_error(strcat_("scatter_rows: ", slots.size(), " slots for ", x.dim(0), " rows"));
    std::vector<char> seen(static_cast<size_t>(total), 0);
    for (int s : slots) {
        if (s < 0 || s >= total) throw contract_error(strcat_("scatter_rows: slot ", s, " out of [0,", total, ")"));
        if (seen[static_cast<size_t>(s)]) throw contract_error(strcat_("scatter_rows: duplicate slot ", s));
        seen[static_cast<size_t>(s)] = 1;
    }
    int C = x.dim(1);
    Tensor out = Tensor::zeros({total, C});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (size_t r = 0; r < slots.size(); ++r)
        std::copy(xv.begin() + static_cast<int64_t>(r * C), xv.begin() + static_cast<int64_t>((r + 1) * C),
                  ov.begin() + static_cast<size_t>(slots[r]) * C);
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), slots, C] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (size_t r = 0; r < slots.size(); ++r)
                for (int i = 0; i < C; ++i) g[r * C + i] += od->g[static_cast<size_t>(slots[r]) * C + i];
        });
    }
    return out;
}

// Copy with a new shape of equal element count.
inline Tensor reshape(const Tensor& x, Shape s) {
    if (shape_numel(s) != x.numel())
        throw shape_error(strcat_("reshape: ", shape_str(x.shape()), " to ", shape_str(s)));
    Tensor out = Tensor::from(std::move(s), x.values());
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr()] {
            if (od->g.empty()) return;
            auto& g = detail::grad_buf(*xd);
            for (size_t i = 0; i < g.size(); ++i) g[i] += od->g[i];
        });
    }
    return out;
}

// Extract one element as a rank-0 tensor.
inline Tensor take(const Tensor& x, int64_t flat_idx) {
    if (flat_idx < 0 || flat_idx >= x.numel())
        throw contract_error(strcat_("take: index ", flat_idx, " out of [0,", x.numel(), ")"));
    Tensor out = Tensor::scalar(x.values()[static_cast<size_t>(flat_idx)]);
    if (detail::tracking(x)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), od = out.ptr(), flat_idx] {
            if (od->g.empty()) return;
            detail::grad_buf(*xd)[static_cast<size_t>(flat_idx)] += od->g[0];
        });
    }
    return out;
}

// 2-D convolution over x [H,W,Cin] with kernel [kh,kw,Cin,Cout] and bias
// [Cout], stride 1, zero padding that preserves H and W (odd kernel sides).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw shape_error("conv2d: expects x[H,W,Cin], w[kh,kw,Cin,Cout], b[Cout]");
    int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    int kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
    if (w.dim(2) != Ci || b.dim(0) != Co)
        throw shape_error(strcat_("conv2d: channel mismatch ", shape_str(x.shape()), " vs ", shape_str(w.shape())));
    if (kh % 2 == 0 || kw % 2 == 0) throw contract_error("conv2d: kernel sides must be odd");
    int ph = kh / 2, pw = kw / 2;
    Tensor out = Tensor::zeros({H, W, Co});
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const double* bv = b.values().data();
    double* ov = out.mutable_values().data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(H) * W * Ci * Co * kh * kw > (1 << 18))
    for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
            double* o = ov + (static_cast<size_t>(y) * W + xx) * Co;
            for (int c = 0; c < Co; ++c) o[c] = bv[c];
            for (int ky = 0; ky < kh; ++ky) {
                int sy = y + ky - ph;
                if (sy < 0 || sy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    int sx = xx + kx - pw;
                    if (sx < 0 || sx >= W) continue;
                    const double* in = xv + (static_cast<size_t>(sy) * W + sx) * Ci;
                    const double* wk = wv + ((static_cast<size_t>(ky) * kw + kx) * Ci) * Co;
                    for (int ci = 0; ci < Ci; ++ci) {
                        double a = in[ci];
                        const double* wr = wk + static_cast<size_t>(ci) * Co;
                        for (int c = 0; c < Co; ++c) o[c] += a * wr[c];
                    }
                }
            }
        }
    }
    if (detail::tracking(x, w, b)) {
        out.set_requires_grad(true);
        Tape::record([xd = x.ptr(), wd = w.ptr(), bd = b.ptr(), od = out.ptr(), H, W, Ci, kh, kw, Co, ph, pw] {
            if (od->g.empty()) return;
            const double* gy = od->g.data();
            if (bd->requires_grad) {
                auto& gb = detail::grad_buf(*bd);
                for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
                    for (int c = 0; c < Co; ++c) gb[c] += gy[p * Co + c];
            }
            double* gx = xd->requires_grad ? detail::grad_buf(*xd).data() : nullptr;
            double* gw = wd->requires_grad ? detail::grad_buf(*wd).data() : nullptr;
            if (!gx && !gw) return;
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    const double* go = gy + (static_cast<size_t>(y) * W + xx) * Co;
                    for (int ky = 0; ky < kh; ++ky) {
                        int sy = y + ky - ph;
                        if (sy < 0 || sy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int sx = xx + kx - pw;
                            if (sx < 0 || sx >= W) continue;
                            size_t in_off = (static_cast<size_t>(sy) * W + sx) * Ci;
                            size_t wk_off = (static_cast<size_t>(ky) * kw + kx) * Ci * Co;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const double* wr = wd->v.data() + wk_off + static_cast<size_t>(ci) * Co;
                                if (gx) {
                                    double s = 0.0;
                                    for (int c = 0; c < Co; ++c) s += go[c] * wr[c];
                                    gx[in_off + ci] += s;
                                }
                                if (gw) {
                                    double a = xd->v[in_off + ci];
                                    double* gwr = gw + wk_off + static_cast<size_t>(ci) * Co;
                                    for (int c = 0; c < Co; ++c) gwr[c] += a * go[c];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace btm
