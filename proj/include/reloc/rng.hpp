#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace reloc {

// mt19937 wrapper with hand-rolled draws. std::uniform_*_distribution is
// implementation-defined, so every consumer of randomness in this project
// goes through these helpers to keep datasets and runs byte-identical.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next_u32() { return gen_(); }

    // Uniform integer on [lo, hi] inclusive, rejection-sampled (no modulo bias).
    int uniform_int(int lo, int hi) {
        if (hi < lo) std::swap(lo, hi);
        const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        if (span == 0) return lo;  // full 32-bit range
        const uint64_t limit = (uint64_t(1) << 32) / span * span;
        uint64_t x;
        do {
            x = next_u32();
        } while (x >= limit);
        return static_cast<int>(lo + static_cast<int64_t>(x % span));
    }

    // Uniform real on [0, 1) with 53-bit resolution.
    double uniform() {
        const double hi = static_cast<double>(next_u32() >> 6);   // 26 bits
        const double lo = static_cast<double>(next_u32() >> 5);   // 27 bits
        return (hi * 134217728.0 + lo) / 9007199254740992.0;      // 2^27, 2^53
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i - 1)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // splitmix64 mix for deriving independent substreams from (seed, stream id).
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace reloc
