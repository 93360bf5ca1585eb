#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace ucd {

// Seeded stream with a fully documented algorithm so other implementations
// can reproduce it:
//   raw bits  : std::mt19937_64 seeded with `seed` (standardized engine)
//   uniform() : (raw >> 11) * 2^-53, in [0, 1)
//   normal()  : Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
//               sqrt(-2 ln u1) * cos(2 pi u2); two raw draws per sample
//   below(n)  : floor(uniform() * n)
// The std distributions are avoided because their output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::size_t below(std::size_t n) {
    auto v = static_cast<std::size_t>(uniform() * double(n));
    return v < n ? v : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream; lets independent consumers draw without perturbing each other.
  Rng fork() { return Rng(bits() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ucd
