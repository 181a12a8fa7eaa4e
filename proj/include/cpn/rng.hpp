#pragma once

// Seeded random number generation with fully specified output, so that any
// run with the same seed produces bit-identical streams across platforms.
// std::uniform_real_distribution and friends are implementation-defined,
// which would break reproducibility of training histories; the draws here
// are written out explicitly on top of std::mt19937_64.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace cpn {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform draw in [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Unbiased integer draw in [0, n) via rejection sampling.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t limit = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x = engine_();
    while (x < limit) x = engine_();
    return x % n;
  }

  // Standard normal via Box-Muller. The cached second value keeps one call
  // per draw on average.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace cpn
