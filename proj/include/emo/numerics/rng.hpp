#pragma once

#include <cstdint>
#include <vector>

#include "emo/numerics/tensor.hpp"

namespace emo::num {

// Counter-based generator. Draw k of stream `seed` is
//   splitmix64_mix(seed * 0xD1B54A32D192ED03 + (k + 1) * 0x9E3779B97F4A7C15)
// so any draw can be reproduced from (seed, k) alone, independent of platform.
// Uniforms use the top 53 bits; normals use Box-Muller on two uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Tensor normal_tensor(Shape shape, double stddev);
  Tensor uniform_tensor(Shape shape, double lo, double hi);
  std::vector<std::size_t> permutation(std::size_t n);

  // Independent child stream derived from this stream's seed and a tag.
  Rng fork(std::uint64_t tag) const;

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace emo::num
