#pragma once

#include <cstdint>
#include <random>

namespace ibt {

using Rng = std::mt19937_64;

/// Per-item stream derived from a run seed: seed xor id.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t id) { return Rng(seed ^ id); }

inline bool bernoulli(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

/// Uniform integer in [lo, hi].
template <typename Int>
Int uniform_int(Rng& rng, Int lo, Int hi) {
  return std::uniform_int_distribution<Int>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace ibt
