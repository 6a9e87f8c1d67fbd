// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "qwen2/tensor.hpp"

namespace qwen2 {

/// splitmix64 stream. Normals come from Box-Muller over two uniforms per
/// sample (cosine branch only), so the stream is fully pinned by the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in (0, 1], 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  double normal(double mean = 0.0, double std = 1.0);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// `count` values ~ Normal(mean, std) as a 1-D tensor.
Tensor sample_normal(Rng& rng, std::size_t count, float mean, float std);

/// Tensor of the given shape ~ Normal(mean, std).
Tensor sample_normal(Rng& rng, Shape shape, float mean, float std);

}  // namespace qwen2
