#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

namespace embp {

// Seedable, splittable pseudorandom generator.
//
// Every experiment consumes one master seed; per-block generators are derived
// with stream(), so Monte-Carlo results are bit-reproducible regardless of how
// blocks are distributed over worker threads. Distributions are implemented by
// hand on top of mt19937_64 (whose sequence the standard fully specifies) to
// keep byte-identical output across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(scramble(seed)) {}

    // Independent child generator for a numbered stream (block, sub-draw, ...).
    Rng stream(std::uint64_t id) const {
        std::uint64_t s = seed_;
        s = mix(s ^ 0x6d7678f5cbd3a8f1ULL);
        s = mix(s + 0x9e3779b97f4a7c15ULL * (id + 1));
        return Rng(s);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-free enough at these ranges.
    int uniform_int(int n) {
        return static_cast<int>((static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
    }

    // Standard normal (Box-Muller).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Complex circular Gaussian CN(0, var): each component N(0, var/2).
    std::complex<double> cnormal(double var = 1.0) {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double radius = std::sqrt(-var * std::log(u1));
        return {radius * std::cos(2.0 * std::numbers::pi * u2),
                radius * std::sin(2.0 * std::numbers::pi * u2)};
    }

    std::uint64_t seed() const noexcept { return seed_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t scramble(std::uint64_t seed) { return mix(mix(seed)); }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace embp
