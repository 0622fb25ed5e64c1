#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lce/core.hpp"

namespace lce {

// splitmix64; used to derive independent substreams from (seed, tags...).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <class... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(tag)), rest...);
}

// Deterministic RNG. All distributions are implemented explicitly (the
// std::*_distribution classes are not bit-stable across standard libraries;
// mt19937_64 itself is fully specified).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    LCE_CHECK(n > 0, "uniform_int needs n > 0");
    std::uint64_t threshold = (0ull - n) % n;  // rejection to kill modulo bias
    for (;;) {
      std::uint64_t r = bits();
      if (r >= threshold) return r % n;
    }
  }

  // standard normal via Box-Muller; one cached value
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // normal truncated to +-2 stddev (resampled), the usual attention init
  double trunc_normal(double stddev) {
    for (;;) {
      double v = normal();
      if (v >= -2.0 && v <= 2.0) return v * stddev;
    }
  }

  bool coin() { return (bits() & 1ull) != 0; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace lce
