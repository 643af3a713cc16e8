#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ss3d {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent, schedule-free RNG streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a stream identified by (base seed, keys...). Same keys give the same stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix_seed(base);
  for (std::uint64_t k : keys) {
    h = mix_seed(h ^ mix_seed(k + 0x632be59bd9b4e019ULL));
  }
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(base, keys));
}

inline double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) {
    return lo;
  }
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) {
    return 0.0;
  }
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace ss3d
