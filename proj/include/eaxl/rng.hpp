#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace eaxl {

// xoshiro256** seeded through splitmix64. Uniform doubles take the top 53
// bits; normals use Box-Muller with one (u1, u2) draw per sample. Nothing here
// depends on <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace eaxl
