#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace coda {

// Deterministic PRNG (splitmix64). The standard library engines are portable
// but the <random> distributions are not, so every distribution used anywhere
// in the pipeline is implemented here and produces identical bits on every
// platform and run.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 24 bits of mantissa.
    float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform in [0, 1), 53 bits.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n) {
        return uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = next_float();
        float u2 = next_float();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unit-mean exponential.
    float exponential() { return -std::log1p(-next_float()); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

// Derives an independent stream seed from a root seed. Every stage of the
// pipeline draws its seed through this, so one root seed fixes the whole run.
inline uint64_t mix_seed(uint64_t root, uint64_t stream) {
    uint64_t z = root + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace coda
