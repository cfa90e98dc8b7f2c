#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "adaps/core.hpp"

namespace adaps {

// SplitMix64, used to decorrelate nearby seeds and derive sub-streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base ^ (0xa0761d6478bd642fULL * (stream + 1));
    return splitmix64(s);
}

/// Deterministic normal/uniform generator. Gaussian draws use Box-Muller on
/// raw engine bits, so sequences are identical across platforms for a given
/// seed (std::normal_distribution is implementation-defined and avoided).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        engine_.seed(splitmix64(s));
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Vec normal_vec(Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    std::uint64_t next_u64() { return engine_(); }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace adaps
