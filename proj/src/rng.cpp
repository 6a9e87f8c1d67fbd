// SPDX-License-Identifier: Apache-2.0
#include "qwen2/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "qwen2/errors.hpp"

namespace qwen2 {

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ParameterError("Rng::below: bound must be positive");
  // Multiply-shift; bias is < 2^-64 * bound which is irrelevant here.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
}

double Rng::normal(double mean, double std) {
  const double u1 = uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + std * z;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Tensor sample_normal(Rng& rng, std::size_t count, float mean, float std) {
  return sample_normal(rng, Shape{count}, mean, std);
}

Tensor sample_normal(Rng& rng, Shape shape, float mean, float std) {
  if (!(std >= 0.0f)) throw ParameterError("sample_normal: std must be >= 0, got " + std::to_string(std));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(mean, std));
  return t;
}

}  // namespace qwen2
