// SPDX-License-Identifier: Apache-2.0
#include "qwen2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qwen2/errors.hpp"

namespace qwen2 {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
  return n;
}

float& Tensor::at(std::size_t r, std::size_t c) { return data_[r * last_dim() + c]; }
float Tensor::at(std::size_t r, std::size_t c) const { return data_[r * last_dim() + c]; }

std::span<float> Tensor::row(std::size_t r) {
  const auto n = last_dim();
  return std::span<float>(data_).subspan(r * n, n);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const auto n = last_dim();
  return std::span<const float>(data_).subspan(r * n, n);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_matrix(w, "linear weight");
  const std::size_t n = w.dim(0), k = w.dim(1);
  if (x.last_dim() != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) {
    throw DimensionError("linear: bias " + shape_str(bias->shape()) + " for weight " +
                         shape_str(w.shape()));
  }
  const std::size_t m = x.rows();
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor y(out_shape);
  for (std::size_t i = 0; i < m; ++i) {
    auto xr = x.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      float acc = dot(xr, w.row(j));
      if (bias) acc += (*bias)[j];
      y.at(i, j) = acc;
    }
  }
  return y;
}

std::vector<float> matvec(const Tensor& w, std::span<const float> x) {
  require_matrix(w, "matvec weight");
  if (w.dim(1) != x.size()) {
    throw DimensionError("matvec: weight " + shape_str(w.shape()) + " with vector [" +
                         std::to_string(x.size()) + "]");
  }
  std::vector<float> y(w.dim(0));
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = dot(w.row(j), x);
  return y;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose input");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) throw DimensionError("softmax over an empty row");
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (auto& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (auto& v : row) v = static_cast<float>(v * inv);
}

Tensor softmax_rows(const Tensor& x) {
  if (x.last_dim() == 0) throw DimensionError("softmax over an empty row " + shape_str(x.shape()));
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row(r));
  return y;
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = silu(v);
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] += b[i];
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] *= b[i];
  return c;
}

Tensor scale(const Tensor& a, float s) {
  Tensor c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  float acc = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

float l2_norm(std::span<const float> a) {
  double acc = 0.0;
  for (float v : a) acc += static_cast<double>(v) * v;
  return static_cast<float>(std::sqrt(acc));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace qwen2
