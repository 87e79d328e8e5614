#pragma once

// Seeded random source with a fully specified algorithm so that streams are
// bit-identical across platforms and standard libraries:
//   raw bits   std::mt19937_64 (output sequence fixed by the C++ standard)
//   uniform    top 53 bits scaled to [0, 1)
//   normal     Box-Muller on two uniforms, second variate cached
// std::*_distribution is avoided because its algorithms are implementation
// defined.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace hydromarket {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  int index(int n) {
    const int k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  /// Index drawn from a discrete distribution (weights need not be normalized).
  template <class Range>
  int categorical(const Range& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double u = uniform() * total;
    double acc = 0.0;
    int k = 0;
    int last_positive = 0;
    for (double w : weights) {
      acc += w;
      if (w > 0.0) last_positive = k;
      if (u < acc && w > 0.0) return k;
      ++k;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hydromarket
