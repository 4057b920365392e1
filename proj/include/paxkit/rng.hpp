#pragma once

#include <cstdint>
#include <cmath>

#include "paxkit/common.hpp"

namespace paxkit {

/// Deterministic pseudo-random source. Conversions to doubles are spelled out
/// here instead of relying on std distributions, whose output is
/// implementation-defined; identical seeds give identical streams on any
/// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { state_ = splitmix(seed ? seed : 0x9e3779b97f4a7c15ULL); }

  /// Derives an independent stream for sub-task `index` of `seed`.
  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix(seed + 0x632be59bd9b4e019ULL * (index + 1)));
  }

  std::uint64_t next_u64() {
    // xorshift64* keeps the generator tiny and reproducible.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace paxkit
