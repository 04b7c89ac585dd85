// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace xmodal {

/// Seeded generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the C++
/// standard. The standard distributions are not (their algorithms are
/// implementation-defined), so the conversions below are spelled out:
///   uniform()      top 53 bits scaled by 2^-53, in [0, 1)
///   below(n)       rejection sampling on the top bits, unbiased
///   normal()       Box-Muller, one draw per call (the sine branch is dropped)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// Derives an independent stream for a named sub-task.
  Rng fork(std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(engine_()), static_cast<std::uint32_t>(salt),
                      static_cast<std::uint32_t>(salt >> 32)};
    std::mt19937_64 e(seq);
    return Rng(e());
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xmodal
