#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dtsync {

// splitmix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
    return mix_seed(master ^ mix_seed(salt));
}

/// Seeded random source. Every stochastic component takes one of these by
/// reference, so a run is a pure function of its seed. Distribution
/// transforms are hand-rolled to keep streams identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller. No cached spare: two uniforms per
    /// draw, which keeps the stream position independent of call history.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Exponential with the given mean.
    double exponential(double mean) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -mean * std::log(u);
    }

    /// Standard logistic noise, the reparameterization noise for relaxed
    /// Bernoulli samples.
    double logistic() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return std::log(u) - std::log1p(-u);
    }

    /// Child stream whose seed depends on (current state, salt) only through
    /// a fixed mix, so sibling streams are decorrelated and reproducible.
    Rng split(std::uint64_t salt) { return Rng(derive_seed(engine_(), salt)); }

private:
    std::mt19937_64 engine_;
};

}  // namespace dtsync
