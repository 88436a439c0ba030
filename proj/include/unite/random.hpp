#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace unite {

/// Uniform double in [0, 1) from 53 random bits. Unlike the <random>
/// distributions, the sequence is fixed by the engine alone.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Box-Muller standard normal; consumes two engine outputs per draw.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Normal(0, std) redrawn until it falls within two standard deviations.
inline double truncated_normal(std::mt19937_64& rng, double std) {
  for (;;) {
    const double z = standard_normal(rng);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

/// SplitMix64 finalizer; derives independent seeds from (seed, stream) pairs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace unite
