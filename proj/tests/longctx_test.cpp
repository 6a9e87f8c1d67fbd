// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "qwen2/errors.hpp"
#include "qwen2/longctx.hpp"
#include "test_support.hpp"

namespace qwen2 {
namespace {

using testing::uniform_tensor;

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

/// Effective distance straight from the three chunk rules.
std::size_t oracle_relpos(std::size_t i, std::size_t j, std::size_t s, std::size_t w) {
  if (i / s == j / s) return i - j;
  if (i / s == j / s + 1 && i - j <= w) return i - j;
  return (s - 1) - (j % s);
}

// ---- YaRN -------------------------------------------------------------------

TEST(YarnTest, ScaleOneIsIdentity) {
  const RopeParams rope{1e6, 128, 0};
  const auto adj = yarn_adjust(rope, YarnParams{1.0, 32768});
  EXPECT_EQ(adj.inv_freq, rope_freqs(rope));
  EXPECT_EQ(adj.attn_mult, 1.0f);
}

TEST(YarnTest, ScaleFourTemperature) {
  const auto adj = yarn_adjust({1e6, 128, 0}, YarnParams{4.0, 32768});
  EXPECT_NEAR(std::sqrt(adj.attn_mult), 1.13863f, 1e-4f);
  EXPECT_NEAR(std::sqrt(adj.attn_mult), 0.1 * std::log(4.0) + 1.0, 1e-6);
}

TEST(YarnTest, PerDimensionRampMatchesFormula) {
  const RopeParams rope{1e6, 128, 0};
  const YarnParams yarn{4.0, 32768, 32.0, 1.0, 0.1};
  const auto base = rope_freqs(rope);
  const auto adj = yarn_adjust(rope, yarn);
  std::size_t kept = 0, interpolated = 0;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    const double f = base[i];
    const double rho = 32768.0 / (2.0 * std::numbers::pi / f);
    const double gamma = std::clamp((rho - 1.0) / 31.0, 0.0, 1.0);
    if (rho >= 32.0) {
      EXPECT_EQ(adj.inv_freq[i], base[i]) << "dim " << i;
      ++kept;
    } else {
      EXPECT_NEAR(adj.inv_freq[i], f * (gamma + (1 - gamma) / 4.0), 1e-12 + 1e-6 * f) << "dim " << i;
    }
    if (rho <= 1.0) {
      EXPECT_NEAR(adj.inv_freq[i], f / 4.0, 1e-6 * f);
      ++interpolated;
    }
  }
  EXPECT_GT(kept, 0u);
  EXPECT_GT(interpolated, 0u);
}

TEST(YarnTest, RejectsScaleBelowOne) {
  EXPECT_THROW(yarn_adjust({1e6, 16, 0}, YarnParams{0.5, 4096}), ParameterError);
  EXPECT_THROW(yarn_adjust({1e6, 16, 0}, YarnParams{2.0, 4096, 1.0, 2.0, 0.1}), ParameterError);
}

// ---- relative positions ------------------------------------------------------

TEST(DcaRelposTest, Examples) {
  EXPECT_EQ(dca_relpos(5, 2, {8, 4}), 3u);
  EXPECT_EQ(dca_relpos(8, 7, {8, 4}), 1u);
  EXPECT_EQ(dca_relpos(10, 2, {8, 4}), 5u);
}

TEST(DcaRelposTest, OrderingError) { EXPECT_THROW(dca_relpos(2, 3, {8, 4}), OrderingError); }

TEST(DcaRelposTest, ExhaustiveAgainstRules) {
  for (std::size_t s : {1u, 2u, 4u, 8u}) {
    for (std::size_t w = 1; w <= s; ++w) {
      const DcaParams dca{s, w};
      for (std::size_t i = 0; i < 5 * s; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const auto m = dca_relpos(i, j, dca);
          ASSERT_EQ(m, oracle_relpos(i, j, s, w)) << i << "," << j << " s=" << s << " w=" << w;
          ASSERT_LE(m, 2 * s - 1);
          if (i - j <= w) ASSERT_EQ(m, i - j);
          // every rotary position in use stays below 2*s
          ASSERT_LT(dca_query_position(i, dca_branch(i, j, dca), dca), 2 * s);
        }
      }
    }
  }
}

// ---- attention --------------------------------------------------------------

struct HeadRatio {
  std::size_t q, kv;
};
const HeadRatio kPublishedRatios[] = {{14, 2}, {12, 2}, {28, 4}, {64, 8}};

TEST(DcaAttentionTest, SingleChunkEqualsVanilla) {
  Rng rng(1);
  for (const auto r : kPublishedRatios) {
    for (std::size_t seq : {1u, 5u, 16u}) {
      const AttentionParams p{r.q, r.kv, 16, true};
      const auto q = uniform_tensor(rng, {r.q, seq, 16}), k = uniform_tensor(rng, {r.kv, seq, 16});
      const auto v = uniform_tensor(rng, {r.kv, seq, 16});
      const RopeParams rope{1e6, 16, 0};
      const auto vanilla = gqa_attention(q, k, v, p, iota_positions(seq), rope);
      const auto dca = dca_attention(q, k, v, p, DcaParams::with_chunk(16), rope, std::nullopt);
      EXPECT_LE(max_abs_diff(vanilla, dca), 1e-5f);
    }
  }
}

TEST(DcaAttentionTest, MatchesRemappedPositionOracle) {
  Rng rng(2);
  const std::size_t s = 4, w = 2, seq = 15;
  const AttentionParams p{4, 2, 8, true};
  const auto q = uniform_tensor(rng, {4, seq, 8}), k = uniform_tensor(rng, {2, seq, 8}), v = uniform_tensor(rng, {2, seq, 8});
  const auto got = dca_attention(q, k, v, p, {s, w}, {10000.0, 8, 0}, std::nullopt);
  // Rotating q by the effective distance and k not at all gives the same logits.
  const auto ref = testing::ref_attention(
      q, k, v, 4, [](std::size_t h) { return h / 2; }, 10000.0, 1.0,
      [&](std::size_t i, std::size_t j) { return oracle_relpos(i, j, s, w); }, [](std::size_t) { return 0; });
  EXPECT_LE(max_abs_diff(got, ref), 1e-5f);
}

TEST(DcaAttentionTest, LongSequenceRowsAreDistributions) {
  Rng rng(3);
  const std::size_t s = 8, seq = 4 * s;
  const AttentionParams p{4, 2, 16, true};
  const auto q = uniform_tensor(rng, {4, seq, 16}), k = uniform_tensor(rng, {2, seq, 16});
  const auto v = uniform_tensor(rng, {2, seq, 16});
  Tensor probs;
  const auto out = dca_attention(q, k, v, p, DcaParams::with_chunk(s), {1e6, 16, 0}, std::nullopt, &probs);
  EXPECT_TRUE(out.all_finite());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0;
    for (float x : probs.row(r)) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(DcaAttentionTest, Causal) {
  Rng rng(4);
  const std::size_t seq = 20;
  const AttentionParams p{4, 2, 8, true};
  const auto q = uniform_tensor(rng, {4, seq, 8}), k = uniform_tensor(rng, {2, seq, 8}), v = uniform_tensor(rng, {2, seq, 8});
  const DcaParams dca{6, 3};
  const RopeParams rope{1e4, 8, 0};
  const auto base = dca_attention(q, k, v, p, dca, rope, std::nullopt);
  for (std::size_t t : {0u, 7u, 13u, 19u}) {
    Tensor k2 = k, v2 = v;
    for (std::size_t h = 0; h < 2; ++h) {
      for (auto& x : k2.row(h * seq + t)) x *= -2.0f;
      for (auto& x : v2.row(h * seq + t)) x += 1.0f;
    }
    const auto pert = dca_attention(q, k2, v2, p, dca, rope, std::nullopt);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < pert.last_dim(); ++c) ASSERT_EQ(pert.at(r, c), base.at(r, c));
  }
}

TEST(DcaAttentionTest, YarnScaleOneComposesAsIdentity) {
  Rng rng(5);
  const std::size_t seq = 24;
  const AttentionParams p{4, 2, 16, true};
  const auto q = uniform_tensor(rng, {4, seq, 16}), k = uniform_tensor(rng, {2, seq, 16});
  const auto v = uniform_tensor(rng, {2, seq, 16});
  const RopeParams rope{1e6, 16, 0};
  const auto plain = dca_attention(q, k, v, p, {8, 4}, rope, std::nullopt);
  const auto yarn1 = dca_attention(q, k, v, p, {8, 4}, rope, YarnParams{1.0, 4096});
  EXPECT_EQ(plain, yarn1);
}

TEST(DcaAttentionTest, YarnAdjustsFrequenciesAndTemperature) {
  Rng rng(6);
  const std::size_t seq = 6;
  const AttentionParams p{2, 1, 8, true};
  const auto q = uniform_tensor(rng, {2, seq, 8}), k = uniform_tensor(rng, {1, seq, 8}), v = uniform_tensor(rng, {1, seq, 8});
  const RopeParams rope{10000.0, 8, 0};
  const YarnParams yarn{4.0, 64};
  const auto adj = yarn_adjust(rope, yarn);
  // single chunk: DCA with YaRN equals vanilla attention on the adjusted table
  const auto got = dca_attention(q, k, v, p, {8, 4}, rope, yarn);
  const auto want = gqa_attention(q, k, v, p, iota_positions(seq), adj.inv_freq, adj.attn_mult);
  EXPECT_LE(max_abs_diff(got, want), 1e-6f);
}

TEST(DcaAttentionTest, RejectsChunkBeyondRopeRange) {
  const AttentionParams p{2, 1, 8, true};
  const Tensor q({2, 4, 8}), k({1, 4, 8}), v({1, 4, 8});
  EXPECT_THROW(dca_attention(q, k, v, p, {8, 4}, {1e4, 8, 10}, std::nullopt), ParameterError);
  EXPECT_THROW(dca_attention(q, k, v, p, {8, 4}, {1e4, 8, 0}, YarnParams{1.0, 12}), ParameterError);
  EXPECT_NO_THROW(dca_attention(q, k, v, p, {8, 4}, {1e4, 8, 0}, YarnParams{2.0, 8}));
  EXPECT_THROW(dca_attention(q, k, v, p, {8, 9}, {1e4, 8, 0}, std::nullopt), ParameterError);
}

TEST(DcaAttentionTest, IncrementalDecodeMatchesFull) {
  Rng rng(7);
  const std::size_t seq = 27;
  const AttentionParams p{6, 2, 8, true};
  const DcaParams dca{5, 3};
  const RopeParams rope{1e4, 8, 0};
  const auto q = uniform_tensor(rng, {6, seq, 8}), k = uniform_tensor(rng, {2, seq, 8}), v = uniform_tensor(rng, {2, seq, 8});
  const auto full = dca_attention(q, k, v, p, dca, rope, std::nullopt);
  const auto inv = rope_freqs(rope);
  KvCache cache(1, 2, 8);
  for (std::size_t t = 0; t < seq; ++t) {
    Tensor qt({6, 8}), kt({2, 8}), vt({2, 8});
    for (std::size_t h = 0; h < 6; ++h) std::copy_n(q.row(h * seq + t).begin(), 8, qt.row(h).begin());
    for (std::size_t h = 0; h < 2; ++h) {
      std::copy_n(k.row(h * seq + t).begin(), 8, kt.row(h).begin());
      std::copy_n(v.row(h * seq + t).begin(), 8, vt.row(h).begin());
    }
    const auto out = dca_decode_step(cache, 0, qt, kt, vt, t, p, dca, inv);
    for (std::size_t c = 0; c < out.size(); ++c) ASSERT_NEAR(out[c], full.at(t, c), 1e-5f) << "t=" << t;
  }
}

}  // namespace
}  // namespace qwen2
