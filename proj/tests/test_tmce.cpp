#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "btm/rng.hpp"
#include "btm/tmce.hpp"

using namespace btm;

namespace {

// Brute-force survivor selection: repeatedly scan for the maximum, taking
// the lowest index on ties. Written independently of prune().
std::vector<int> prune_oracle(const std::vector<double>& scores, int k) {
    std::vector<char> taken(scores.size(), 0);
    for (int round = 0; round < k; ++round) {
        int best = -1;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (taken[i]) continue;
            if (best < 0 || scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
        }
        taken[static_cast<size_t>(best)] = 1;
    }
    std::vector<int> keep;
    for (size_t i = 0; i < scores.size(); ++i)
        if (taken[i]) keep.push_back(static_cast<int>(i));
    return keep;
}

const std::vector<double> kRgbStatic = {0.1, 0.4, 0.3, 0.2};
const std::vector<double> kRgbDynamic = {0.2, 0.1, 0.5, 0.2};
const std::vector<double> kTirStatic = {0.4, 0.1, 0.1, 0.4};
const std::vector<double> kTirDynamic = {0.3, 0.2, 0.1, 0.4};

}  // namespace

TEST_CASE("scoring rules on the four-token example") {
    auto tmce = tmce_score(kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic);
    REQUIRE_THAT(tmce, Catch::Matchers::Approx(std::vector<double>{0.7, 0.5, 0.8, 0.8}).margin(1e-15));

    auto addce = add_ce_score(kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic);
    REQUIRE_THAT(addce, Catch::Matchers::Approx(std::vector<double>{1.0, 0.8, 1.0, 1.2}).margin(1e-15));

    auto ce_rgb = variant_score(Elimination::Ce, CeSource::Rgb, kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic);
    REQUIRE_THAT(ce_rgb, Catch::Matchers::Approx(std::vector<double>{0.3, 0.5, 0.8, 0.4}).margin(1e-15));

    auto ce_tir = variant_score(Elimination::Ce, CeSource::Tir, kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic);
    REQUIRE_THAT(ce_tir, Catch::Matchers::Approx(std::vector<double>{0.7, 0.3, 0.2, 0.8}).margin(1e-15));

    // Raw per-map maximum, no per-modality summation first.
    auto maxce = max_ce_score(kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic);
    REQUIRE_THAT(maxce, Catch::Matchers::Approx(std::vector<double>{0.4, 0.4, 0.5, 0.4}).margin(1e-15));
}

TEST_CASE("scoring degenerate cases") {
    std::vector<double> zero(4, 0.0);
    auto same = tmce_score(kRgbStatic, kRgbDynamic, kRgbStatic, kRgbDynamic);
    for (size_t i = 0; i < same.size(); ++i)
        REQUIRE(same[i] == Catch::Approx(kRgbStatic[i] + kRgbDynamic[i]));

    auto one_sided = tmce_score(kRgbStatic, kRgbDynamic, zero, zero);
    for (size_t i = 0; i < one_sided.size(); ++i)
        REQUIRE(one_sided[i] == Catch::Approx(kRgbStatic[i] + kRgbDynamic[i]));

    REQUIRE_THROWS_AS(tmce_score(kRgbStatic, kRgbDynamic, kTirStatic, {0.1}), contract_error);
    REQUIRE_THROWS_AS(variant_score(Elimination::None, CeSource::Rgb, kRgbStatic, kRgbDynamic, kTirStatic, kTirDynamic),
                      contract_error);
    REQUIRE_THROWS_AS(parse_elimination("bogus"), config_error);
}

TEST_CASE("prune on the hand example") {
    PruneDecision d = prune({0.7, 0.5, 0.8, 0.8}, 0.5);
    REQUIRE(d.k == 2);
    REQUIRE(d.keep == std::vector<int>{2, 3});
}

TEST_CASE("prune identity at keep_ratio 1") {
    PruneDecision d = prune({0.5, 0.1, 0.9, 0.2, 0.2}, 1.0);
    REQUIRE(d.k == 5);
    REQUIRE(d.keep == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("prune rejects bad ratios") {
    REQUIRE_THROWS_AS(prune({0.5}, 0.0), config_error);
    REQUIRE_THROWS_AS(prune({0.5}, -0.1), config_error);
    REQUIRE_THROWS_AS(prune({0.5}, 1.5), config_error);
}

TEST_CASE("prune ceiling arithmetic") {
    std::vector<double> s(256, 1.0);
    REQUIRE(prune(s, 0.25).k == 64);
    REQUIRE(prune(s, 0.7).k == 180);
    std::vector<double> s10(10, 1.0);
    REQUIRE(prune(s10, 0.3).k == 3);
    REQUIRE(prune(s10, 0.31).k == 4);
    // Iterated schedule 256 -> 180 -> 126 -> 89.
    int n = 256;
    for (int want : {180, 126, 89}) {
        n = prune(std::vector<double>(static_cast<size_t>(n), 1.0), 0.7).k;
        REQUIRE(n == want);
    }
}

TEST_CASE("prune agrees with the brute-force oracle including ties") {
    CounterRng rng(1234);
    for (int trial = 0; trial < 400; ++trial) {
        int n = rng.next_int(1, 513);
        std::vector<double> scores(static_cast<size_t>(n));
        // A coarse value grid forces plenty of exact ties.
        int grid = rng.next_int(2, 12);
        for (auto& s : scores) s = static_cast<double>(rng.next_int(0, grid)) / grid;
        double rho = rng.uniform(0.05, 1.0);
        PruneDecision d = prune(scores, rho);
        int k = static_cast<int>(std::ceil(rho * n - 1e-9));
        k = std::max(1, std::min(n, k));
        REQUIRE(d.k == k);
        REQUIRE(d.keep == prune_oracle(scores, k));
        REQUIRE(std::is_sorted(d.keep.begin(), d.keep.end()));

        // Every survivor scores at least as high as every eliminated token,
        // except where an equal score lost on index order.
        std::set<int> kept(d.keep.begin(), d.keep.end());
        double min_kept = 1e300;
        for (int i : d.keep) min_kept = std::min(min_kept, scores[static_cast<size_t>(i)]);
        for (int i = 0; i < n; ++i)
            if (!kept.count(i)) REQUIRE(scores[static_cast<size_t>(i)] <= min_kept + 1e-15);
    }
}

TEST_CASE("corr map extraction") {
    // Layout: 1 static, 1 dynamic, 2 search tokens -> 4x4 attention.
    TokenLayout lay{1, 1, 2};
    Tensor attn = Tensor::from({4, 4}, {
        0.05, 0.05, 0.6, 0.3,   // static template row
        0.1, 0.1, 0.4, 0.4,     // dynamic template row
        0.25, 0.25, 0.25, 0.25, // search rows (ignored)
        0.25, 0.25, 0.25, 0.25,
    });
    auto s = corr_map({attn}, lay, false);
    REQUIRE_THAT(s, Catch::Matchers::Approx(std::vector<double>{0.6, 0.3}).margin(1e-15));
    auto d = corr_map({attn}, lay, true);
    REQUIRE_THAT(d, Catch::Matchers::Approx(std::vector<double>{0.4, 0.4}).margin(1e-15));

    // Uniform attention scores every search token 1/N.
    Tensor uni = Tensor::full({4, 4}, 0.25);
    auto u = corr_map({uni, uni}, lay, false);
    REQUIRE_THAT(u, Catch::Matchers::Approx(std::vector<double>{0.25, 0.25}).margin(1e-15));

    // Empty dynamic segment scores zero.
    TokenLayout single{2, 0, 2};
    auto dz = corr_map({uni}, single, true);
    REQUIRE_THAT(dz, Catch::Matchers::Approx(std::vector<double>{0.0, 0.0}).margin(1e-15));

    REQUIRE_THROWS_AS(corr_map({Tensor::zeros({3, 3})}, lay, false), shape_error);
}

TEST_CASE("corr map equals an independent slicing oracle") {
    CounterRng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        TokenLayout lay;
        lay.n_static = rng.next_int(1, 5);
        lay.n_dynamic = rng.next_int(1, 5);
        lay.n_search = rng.next_int(1, 9);
        int n = lay.total();
        int heads = rng.next_int(1, 4);
        std::vector<Tensor> maps;
        for (int h = 0; h < heads; ++h) {
            Tensor logits = Tensor::zeros({n, n});
            for (auto& v : logits.mutable_values()) v = rng.uniform(-2.0, 2.0);
            maps.push_back(softmax_rows(logits));
        }
        for (bool dyn : {false, true}) {
            auto got = corr_map(maps, lay, dyn);
            int row0 = dyn ? lay.n_static : 0;
            int rows = dyn ? lay.n_dynamic : lay.n_static;
            int col0 = lay.n_static + lay.n_dynamic;
            for (int j = 0; j < lay.n_search; ++j) {
                double acc = 0.0;
                for (int h = 0; h < heads; ++h)
                    for (int r = row0; r < row0 + rows; ++r) acc += maps[static_cast<size_t>(h)].get(r, col0 + j);
                acc /= heads * rows;
                REQUIRE(got[static_cast<size_t>(j)] == Catch::Approx(acc).margin(1e-12));
                REQUIRE(got[static_cast<size_t>(j)] >= 0.0);
            }
        }
    }
}

TEST_CASE("raising a survivor's score never ejects it") {
    CounterRng rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        int n = rng.next_int(4, 64);
        std::vector<double> scores(static_cast<size_t>(n));
        for (auto& s : scores) s = rng.next_unit();
        double rho = rng.uniform(0.2, 0.9);
        PruneDecision base = prune(scores, rho);
        int pick = base.keep[static_cast<size_t>(rng.next_int(0, base.k))];
        scores[static_cast<size_t>(pick)] += rng.uniform(0.0, 1.0);
        PruneDecision bumped = prune(scores, rho);
        REQUIRE(std::find(bumped.keep.begin(), bumped.keep.end(), pick) != bumped.keep.end());
        REQUIRE(bumped.k == base.k);
    }
}
