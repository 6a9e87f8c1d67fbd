// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qwen2 {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  /// 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Size of the trailing axis; 0 for a rank-0 tensor.
  std::size_t last_dim() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  /// Number of trailing-axis rows (product of all leading extents).
  std::size_t rows() const noexcept;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t r, std::size_t c);
  float at(std::size_t r, std::size_t c) const;

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// c[i][j] = sum_t a[i][t] * b[t][j], accumulated left to right.
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = x * w^T (+ bias); x is [m x k], w is [n x k] (row per output feature).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

/// y = w * x for a single vector x of length k and w of shape [n x k].
std::vector<float> matvec(const Tensor& w, std::span<const float> x);

Tensor transpose(const Tensor& a);

/// Row-wise softmax over the trailing axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<float> row);

float silu(float x);
Tensor silu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

float dot(std::span<const float> a, std::span<const float> b);
float l2_norm(std::span<const float> a);

/// Largest |a - b| over matching elements; shapes must agree.
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace qwen2
