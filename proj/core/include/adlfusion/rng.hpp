#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace adlfusion {

// Deterministic random source.  All sampling helpers are implemented by hand
// on top of mt19937_64 so a given seed produces the same stream everywhere;
// std::uniform_real_distribution and friends are implementation-defined and
// would tie reproducibility to one standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; caches the spare deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0); the offset is below the resolution of uniform().
        double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-54));
        double theta = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).  Multiply-shift keeps bias below 2^-64,
    // irrelevant at the sample counts used here, and stays deterministic.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    // Fisher-Yates with a fixed visit order.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace adlfusion
