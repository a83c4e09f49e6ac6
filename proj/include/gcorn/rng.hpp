#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gcorn {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator keyed by (seed, indices...). Streams depend only on the
// key, so work split across threads reproduces the sequential result.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> indices = {}) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t i : indices) h = splitmix64(h ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

// Uniform double in the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x;
  do {
    x = u(rng);
  } while (x <= 0.0);
  return x;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace gcorn
