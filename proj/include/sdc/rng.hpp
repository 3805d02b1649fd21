#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sdc {

/// Seedable RNG with portable derived distributions.
///
/// The mt19937_64 stream is fully specified by the standard, and every
/// distribution here is implemented on top of raw 64-bit draws, so identical
/// seeds give identical samples on every platform. Do not replace the helpers
/// with std:: distributions; their output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [lo, hi], inclusive. Rejection sampling keeps the
    /// distribution exact.
    long uniform_int(long lo, long hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t draw;
        do {
            draw = engine_();
        } while (draw >= limit);
        return lo + static_cast<long>(draw % span);
    }

    /// Standard normal via the polar Box-Muller transform.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * scale;
        have_spare_ = true;
        return u * scale;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent stream seed from (seed, stream) via splitmix64.
    /// Used to give every sample index / experiment row its own seed.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace sdc
