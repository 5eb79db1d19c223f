#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace btm {

// Counter-based generator: output i is a bijective mix of (key + i*GOLDEN).
// Streams derived from (key, tag) pairs are independent and reproducible
// regardless of platform, thread count, or call interleaving elsewhere.
class CounterRng {
public:
    explicit CounterRng(uint64_t key = 0) : key_(key) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // FNV-1a over the tag string, folded into the key through mix().
    static uint64_t hash_tag(uint64_t key, std::string_view tag) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : tag) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return mix(key ^ h);
    }

    CounterRng derive(std::string_view tag) const { return CounterRng(hash_tag(key_, tag)); }
    CounterRng derive(uint64_t salt) const { return CounterRng(mix(key_ ^ mix(salt))); }
    CounterRng derive(std::string_view tag, uint64_t salt) const {
        return CounterRng(mix(hash_tag(key_, tag) ^ mix(salt)));
    }

    uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Uniform in [0, 1): 53 mantissa bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    int next_int(int lo, int hi_exclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_exclusive - lo)));
    }

    // Box-Muller, one value per call (no cached pair, keeps the stream simple).
    double normal() {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal(0, std) redrawn until within [-2*std, 2*std].
    double trunc_normal(double std_dev) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * std_dev;
        }
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return ctr_; }

private:
    uint64_t key_;
    uint64_t ctr_ = 0;
};

}  // namespace btm
