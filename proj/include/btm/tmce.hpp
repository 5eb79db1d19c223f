#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "btm/tensor.hpp"

namespace btm {

// Candidate-elimination strategies. ce scores from one modality's template
// attention; add_ce sums both modalities; max_ce takes the elementwise max
// over all four template/modality maps; tmce sums per modality first and
// then takes the cross-modal elementwise max.
enum class Elimination { None, Ce, AddCe, MaxCe, Tmce };
enum class CeSource { Rgb, Tir };

inline Elimination parse_elimination(const std::string& s) {
    if (s == "none") return Elimination::None;
    if (s == "ce") return Elimination::Ce;
    if (s == "add_ce") return Elimination::AddCe;
    if (s == "max_ce") return Elimination::MaxCe;
    if (s == "tmce") return Elimination::Tmce;
    throw config_error(strcat_("unknown elimination_strategy '", s, "'"));
}

inline std::string elimination_name(Elimination e) {
    switch (e) {
        case Elimination::None: return "none";
        case Elimination::Ce: return "ce";
        case Elimination::AddCe: return "add_ce";
        case Elimination::MaxCe: return "max_ce";
        case Elimination::Tmce: return "tmce";
    }
    return "?";
}

// Token segment sizes in the fixed order: static template, dynamic
// template, search. Attention maps are laid out the same way.
struct TokenLayout {
    int n_static = 0;
    int n_dynamic = 0;
    int n_search = 0;
    int total() const { return n_static + n_dynamic + n_search; }
};

// Per-search-token relevance read off post-softmax attention: the sub-block
// of template query rows against search key columns, averaged over heads
// and rows. Returns a zero map when the requested segment is empty.
inline std::vector<double> corr_map(const std::vector<Tensor>& head_maps, const TokenLayout& lay,
                                    bool dynamic_segment) {
    if (lay.n_search <= 0) throw contract_error("corr_map: layout has no search tokens");
    if (head_maps.empty()) throw contract_error("corr_map: no attention maps");
    int row0 = dynamic_segment ? lay.n_static : 0;
    int rows = dynamic_segment ? lay.n_dynamic : lay.n_static;
    std::vector<double> out(static_cast<size_t>(lay.n_search), 0.0);
    if (rows == 0) return out;
    int n = lay.total();
    int col0 = lay.n_static + lay.n_dynamic;
    for (const Tensor& m : head_maps) {
        if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n)
            throw shape_error(strcat_("corr_map: attention map ", shape_str(m.shape()), " does not match layout total ", n));
        const auto& v = m.values();
        for (int r = row0; r < row0 + rows; ++r) {
            const double* row = v.data() + static_cast<size_t>(r) * n + col0;
            for (int j = 0; j < lay.n_search; ++j) out[static_cast<size_t>(j)] += row[j];
        }
    }
    double inv = 1.0 / (static_cast<double>(head_maps.size()) * rows);
    for (double& x : out) x *= inv;
    return out;
}

namespace detail {
inline void check_map_sizes(std::initializer_list<const std::vector<double>*> maps) {
    size_t n = (*maps.begin())->size();
    for (const auto* m : maps)
        if (m->size() != n) throw contract_error("score maps differ in length");
    if (n == 0) throw contract_error("score maps are empty");
}
}  // namespace detail

// Sum within each modality, then keep the stronger modality per token.
inline std::vector<double> tmce_score(const std::vector<double>& rgb_static, const std::vector<double>& rgb_dynamic,
                                      const std::vector<double>& tir_static, const std::vector<double>& tir_dynamic) {
    detail::check_map_sizes({&rgb_static, &rgb_dynamic, &tir_static, &tir_dynamic});
    std::vector<double> out(rgb_static.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = std::max(rgb_static[i] + rgb_dynamic[i], tir_static[i] + tir_dynamic[i]);
    return out;
}

inline std::vector<double> add_ce_score(const std::vector<double>& rgb_static, const std::vector<double>& rgb_dynamic,
                                        const std::vector<double>& tir_static, const std::vector<double>& tir_dynamic) {
    detail::check_map_sizes({&rgb_static, &rgb_dynamic, &tir_static, &tir_dynamic});
    std::vector<double> out(rgb_static.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = rgb_static[i] + rgb_dynamic[i] + tir_static[i] + tir_dynamic[i];
    return out;
}

inline std::vector<double> max_ce_score(const std::vector<double>& rgb_static, const std::vector<double>& rgb_dynamic,
                                        const std::vector<double>& tir_static, const std::vector<double>& tir_dynamic) {
    detail::check_map_sizes({&rgb_static, &rgb_dynamic, &tir_static, &tir_dynamic});
    std::vector<double> out(rgb_static.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = std::max(std::max(rgb_static[i], rgb_dynamic[i]), std::max(tir_static[i], tir_dynamic[i]));
    return out;
}

// Single-modality elimination: both template maps of one modality.
inline std::vector<double> ce_score(const std::vector<double>& stat, const std::vector<double>& dyn) {
    detail::check_map_sizes({&stat, &dyn});
    std::vector<double> out(stat.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = stat[i] + dyn[i];
    return out;
}

inline std::vector<double> variant_score(Elimination e, CeSource ce_source,
                                         const std::vector<double>& rgb_static, const std::vector<double>& rgb_dynamic,
                                         const std::vector<double>& tir_static, const std::vector<double>& tir_dynamic) {
    switch (e) {
        case Elimination::Ce:
            return ce_source == CeSource::Rgb ? ce_score(rgb_static, rgb_dynamic) : ce_score(tir_static, tir_dynamic);
        case Elimination::AddCe:
            return add_ce_score(rgb_static, rgb_dynamic, tir_static, tir_dynamic);
        case Elimination::MaxCe:
            return max_ce_score(rgb_static, rgb_dynamic, tir_static, tir_dynamic);
        case Elimination::Tmce:
            return tmce_score(rgb_static, rgb_dynamic, tir_static, tir_dynamic);
        case Elimination::None:
            break;
    }
    throw contract_error("variant_score: no scoring for strategy none");
}

// Indices of the k = ceil(keep_ratio * n) highest-scoring tokens, in their
// original relative order. Ties are broken toward the lower index.
struct PruneDecision {
    std::vector<int> keep;
    int k = 0;
};

// Survivor count for n tokens at the given ratio. The small bias below the
// product guards against 0.3*10 -> 3.0000000000000004.
inline int keep_count(int n, double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
        throw config_error(strcat_("keep_ratio must be in (0,1], got ", keep_ratio));
    int k = static_cast<int>(std::ceil(keep_ratio * n - 1e-9));
    return std::max(1, std::min(n, k));
}

inline PruneDecision prune(const std::vector<double>& scores, double keep_ratio) {
    int n = static_cast<int>(scores.size());
    if (n == 0) throw contract_error("prune: empty score vector");
    int k = keep_count(n, keep_ratio);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)] ||
                                             (scores[static_cast<size_t>(a)] == scores[static_cast<size_t>(b)] && a < b); };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return PruneDecision{std::move(idx), k};
}

}  // namespace btm
