// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "qwen2/errors.hpp"
#include "qwen2/rng.hpp"
#include "qwen2/tensor.hpp"

namespace qwen2 {
namespace {

Tensor random_matrix(Rng& rng, std::size_t m, std::size_t n) {
  Tensor t({m, n});
  for (auto& v : t.data()) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return t;
}

TEST(TensorTest, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.last_dim(), 3u);
}

TEST(MatmulTest, IdentityIsNeutral) {
  const auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  const auto x = Tensor::matrix({{0.5f, -2}, {3, 7.25f}});
  EXPECT_EQ(matmul(eye, x), x);
}

TEST(MatmulTest, HandComputedProduct) {
  const auto c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(c, Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(MatmulTest, ZeroMatrix) {
  const auto c = matmul(Tensor({3, 2}), Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(c, Tensor({3, 3}));
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(MatmulTest, AssociativityOnRandomMatrices) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix(rng, 8, 8), b = random_matrix(rng, 8, 8), c = random_matrix(rng, 8, 8);
    EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-4f);
  }
}

TEST(LinearTest, MatchesMatmulWithTranspose) {
  Rng rng(3);
  const auto x = random_matrix(rng, 4, 5), w = random_matrix(rng, 6, 5);
  EXPECT_LE(max_abs_diff(linear(x, w), matmul(x, transpose(w))), 1e-6f);
}

TEST(SoftmaxTest, ConstantRowIsUniform) {
  const auto y = softmax_rows(Tensor::matrix({{2.5f, 2.5f, 2.5f}}));
  for (float v : y.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7f);
}

TEST(SoftmaxTest, ClosedForm) {
  const auto y = softmax_rows(Tensor::matrix({{0.0f, std::log(2.0f)}}));
  EXPECT_NEAR(y[0], 1.0f / 3.0f, 1e-6f);
  EXPECT_NEAR(y[1], 2.0f / 3.0f, 1e-6f);
}

TEST(SoftmaxTest, ShiftInvariant) {
  const auto x = Tensor::matrix({{0.1f, -1.2f, 3.0f, 0.7f}});
  const auto y = softmax_rows(x);
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 11.0f;
  EXPECT_LE(max_abs_diff(y, softmax_rows(shifted)), 1e-6f);
}

TEST(SoftmaxTest, StableForLargeMagnitudes) {
  Rng rng(11);
  Tensor x({50, 17});
  for (auto& v : x.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * 1e4);
  const auto y = softmax_rows(x);
  ASSERT_TRUE(y.all_finite());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0;
    for (float v : y.row(r)) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(SoftmaxTest, EmptyRowIsError) { EXPECT_THROW(softmax_rows(Tensor({2, 0})), DimensionError); }

TEST(SiluTest, KnownValues) {
  EXPECT_EQ(silu(0.0f), 0.0f);
  EXPECT_NEAR(silu(1.0f), 0.731059f, 1e-6f);
  EXPECT_NEAR(silu(30.0f) / 30.0f, 1.0f, 1e-6f);
}

TEST(RngTest, SplitmixReferenceStream) {
  // Reference splitmix64 outputs for seed 1234567.
  Rng rng(1234567);
  EXPECT_EQ(rng.next_u64(), 6457827717110365317ULL);
  EXPECT_EQ(rng.next_u64(), 3203168211198807973ULL);
  EXPECT_EQ(rng.next_u64(), 9817491932198370423ULL);
}

TEST(RngTest, SameSeedSameSamples) {
  Rng a(42), b(42);
  EXPECT_EQ(sample_normal(a, 1000, 0.0f, 1.0f), sample_normal(b, 1000, 0.0f, 1.0f));
}

TEST(RngTest, NormalMomentsMatch) {
  Rng rng(0);
  const std::size_t n = 100000;
  const auto t = sample_normal(rng, n, 0.0f, 0.02f);
  double mean = 0;
  for (float v : t.data()) mean += v;
  mean /= n;
  double var = 0;
  for (float v : t.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1));
  EXPECT_LE(std::fabs(mean), 3 * 0.02 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sd, 0.02, 0.02 * 0.02);
}

TEST(RngTest, ZeroStdGivesMean) {
  Rng rng(5);
  const auto t = sample_normal(rng, 100, 1.5f, 0.0f);
  for (float v : t.data()) EXPECT_EQ(v, 1.5f);
}

TEST(RngTest, NegativeStdRejected) {
  Rng rng(5);
  EXPECT_THROW(sample_normal(rng, 3, 0.0f, -1.0f), ParameterError);
}

TEST(RngTest, PermutationIsBijection) {
  Rng rng(9);
  auto p = rng.permutation(257);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

}  // namespace
}  // namespace qwen2
