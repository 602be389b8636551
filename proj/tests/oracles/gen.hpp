#pragma once

// Small seeded generators for property tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace oracle {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
  /// A multiple of `step` in [lo, hi].
  double grid(double lo, double hi, double step) {
    return lo + step * static_cast<double>(integer(0, static_cast<long>((hi - lo) / step)));
  }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(integer(0, static_cast<long>(v.size()) - 1))];
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace oracle
