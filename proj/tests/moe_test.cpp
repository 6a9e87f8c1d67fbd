// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "qwen2/errors.hpp"
#include "qwen2/moe.hpp"
#include "test_support.hpp"

namespace qwen2 {
namespace {

using testing::uniform_tensor;

FfnWeights random_ffn(Rng& rng, std::size_t h, std::size_t d) {
  return {uniform_tensor(rng, {h, d}), uniform_tensor(rng, {h, d}), uniform_tensor(rng, {d, h})};
}

TEST(GateTest, ZeroRouterIsUniform) {
  const auto p = gate_probs(std::vector<float>{0.3f, -1.0f, 2.0f}, Tensor({5, 3}));
  for (float v : p) EXPECT_NEAR(v, 0.2f, 1e-7f);
}

TEST(GateTest, ClosedFormTwoExperts) {
  const auto router = Tensor::matrix({{0.0f, 0.0f}, {std::log(3.0f), 0.0f}});
  const auto p = gate_probs(std::vector<float>{1.0f, 5.0f}, router);
  EXPECT_NEAR(p[0], 0.25f, 1e-6f);
  EXPECT_NEAR(p[1], 0.75f, 1e-6f);
}

TEST(TopkTest, SelectsLargestAscending) {
  EXPECT_EQ(topk_select(std::vector<float>{0.1f, 0.4f, 0.2f, 0.3f}, 2), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(topk_select(std::vector<float>{0.1f, 0.4f, 0.2f, 0.3f}, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(TopkTest, TiesGoToLowerIndex) {
  EXPECT_EQ(topk_select(std::vector<float>{0.25f, 0.25f, 0.25f, 0.25f}, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(topk_select(std::vector<float>{0.1f, 0.3f, 0.3f, 0.3f}, 2), (std::vector<std::size_t>{1, 2}));
}

TEST(TopkTest, BadK) {
  EXPECT_THROW(topk_select(std::vector<float>{0.5f, 0.5f}, 3), ParameterError);
  EXPECT_THROW(topk_select(std::vector<float>{0.5f, 0.5f}, 0), ParameterError);
}

TEST(MoeForwardTest, SingleExpertEqualsDenseFfn) {
  Rng rng(1);
  const MoeConfig cfg{1, 1, 0, 12, 8};
  ExpertBank bank{{random_ffn(rng, 12, 8)}, {}, uniform_tensor(rng, {1, 8})};
  for (int t = 0; t < 20; ++t) {
    const auto x = uniform_tensor(rng, {8});
    EXPECT_EQ(moe_forward(x.data(), cfg, bank), swiglu_ffn(x.data(), bank.routed[0]));
  }
}

TEST(MoeForwardTest, IdenticalExpertsAllActiveEqualDense) {
  Rng rng(2);
  const auto e = random_ffn(rng, 6, 8);
  const MoeConfig cfg{4, 4, 0, 6, 8};
  ExpertBank bank{{e, e, e, e}, {}, uniform_tensor(rng, {4, 8})};
  const auto x = uniform_tensor(rng, {8});
  const auto got = moe_forward(x.data(), cfg, bank);
  const auto want = swiglu_ffn(x.data(), e);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], want[i], 1e-5f);
}

TEST(MoeForwardTest, MatchesBruteForceOracle) {
  Rng rng(3);
  const std::size_t d = 8, n = 16, k = 4, h = 5, ns = 2;
  const MoeConfig cfg{n, k, ns, h, d};
  for (int inst = 0; inst < 100; ++inst) {
    ExpertBank bank;
    for (std::size_t i = 0; i < n; ++i) bank.routed.push_back(random_ffn(rng, h, d));
    for (std::size_t i = 0; i < ns; ++i) bank.shared.push_back(random_ffn(rng, h, d));
    bank.router = uniform_tensor(rng, {n, d});
    const auto x = uniform_tensor(rng, {d});

    std::vector<double> logit(n), p(n);
    double mx = -1e300, z = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) logit[i] += static_cast<double>(bank.router.at(i, c)) * x[c];
      mx = std::max(mx, logit[i]);
    }
    for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(logit[i] - mx));
    for (auto& v : p) v /= z;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

    std::vector<double> want(d, 0.0);
    for (const auto& s : bank.shared) {
      const auto y = testing::ref_ffn(s.gate, s.up, s.down, x.data().data());
      for (std::size_t c = 0; c < d; ++c) want[c] += y[c];
    }
    for (std::size_t r = 0; r < k; ++r) {
      const auto& e = bank.routed[idx[r]];
      const auto y = testing::ref_ffn(e.gate, e.up, e.down, x.data().data());
      for (std::size_t c = 0; c < d; ++c) want[c] += p[idx[r]] * y[c];
    }
    const auto got = moe_forward(x.data(), cfg, bank);
    for (std::size_t c = 0; c < d; ++c) ASSERT_NEAR(got[c], want[c], 1e-5) << "instance " << inst;
  }
}

TEST(MoeForwardTest, BankMismatchRejected) {
  Rng rng(4);
  const MoeConfig cfg{2, 1, 0, 4, 8};
  ExpertBank bank{{random_ffn(rng, 4, 8)}, {}, Tensor({2, 8})};
  EXPECT_THROW(moe_forward(std::vector<float>(8), cfg, bank), ConfigError);
  EXPECT_THROW((MoeConfig{2, 3, 0, 4, 8}.validate()), ConfigError);
}

TEST(ReplicationTest, PublishedMoeShape) { EXPECT_EQ(replication_count(64, 2560, 18944), 9u); }

TEST(ReplicationTest, IsCeilingDivision) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(128), he = 1 + rng.below(4096), h = 1 + rng.below(30000);
    const auto r = replication_count(n, he, h);
    ASSERT_GE(r * h, n * he);
    ASSERT_LT((r - 1) * h, n * he);
  }
}

class UpcycleTest : public ::testing::Test {
 protected:
  static constexpr std::size_t kD = 6, kH = 10;
  FfnWeights dense_;
  void SetUp() override {
    Rng rng(6);
    dense_ = random_ffn(rng, kH, kD);
  }
};

TEST_F(UpcycleTest, ExtractedExpertsAreShuffledDenseChannels) {
  Rng rng(7);
  const MoeConfig cfg{8, 2, 1, 4, kD};
  const auto res = upcycle_detailed(dense_, cfg, rng);
  EXPECT_EQ(res.replicas, 4u);
  std::map<std::size_t, int> uses;
  for (std::size_t e = 0; e < cfg.n_routed; ++e) {
    for (std::size_t r = 0; r < cfg.expert_dim; ++r) {
      const std::size_t ch = res.channels[e][r];
      ++uses[ch];
      for (std::size_t c = 0; c < kD; ++c) {
        ASSERT_EQ(res.extracted[e].gate.at(r, c), dense_.gate.at(ch, c));
        ASSERT_EQ(res.extracted[e].up.at(r, c), dense_.up.at(ch, c));
        ASSERT_EQ(res.extracted[e].down.at(c, r), dense_.down.at(c, ch));
      }
    }
  }
  for (const auto& [ch, n] : uses) EXPECT_LE(n, static_cast<int>(res.replicas)) << ch;
  // the first copy is sliced whole and is a permutation
  std::vector<std::size_t> first;
  for (std::size_t e = 0; e * cfg.expert_dim < kH; ++e)
    for (std::size_t r = 0; r < cfg.expert_dim && e * cfg.expert_dim + r < kH; ++r) first.push_back(res.channels[e][r]);
  std::sort(first.begin(), first.end());
  for (std::size_t i = 0; i < kH; ++i) EXPECT_EQ(first[i], i);
}

TEST_F(UpcycleTest, ExactlyHalfOfEachExpertRedrawn) {
  Rng rng(8);
  const MoeConfig cfg{5, 2, 0, 3, kD};
  const auto res = upcycle_detailed(dense_, cfg, rng);
  for (std::size_t e = 0; e < cfg.n_routed; ++e) {
    const std::size_t count = 3 * cfg.expert_dim * kD;
    EXPECT_EQ(res.reinit_counts[e], count / 2);
    const auto& a = res.extracted[e];
    const auto& b = res.bank.routed[e];
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.gate.numel(); ++i) changed += a.gate[i] != b.gate[i];
    for (std::size_t i = 0; i < a.up.numel(); ++i) changed += a.up[i] != b.up[i];
    for (std::size_t i = 0; i < a.down.numel(); ++i) changed += a.down[i] != b.down[i];
    EXPECT_EQ(changed, count / 2) << "expert " << e;
  }
}

TEST_F(UpcycleTest, ExpertsDiffer) {
  Rng rng(9);
  const MoeConfig cfg{8, 2, 0, 5, kD};
  const auto bank = upcycle_from_dense(dense_, cfg, rng);
  for (std::size_t a = 0; a < cfg.n_routed; ++a)
    for (std::size_t b = a + 1; b < cfg.n_routed; ++b) EXPECT_FALSE(bank.routed[a].gate == bank.routed[b].gate);
}

TEST_F(UpcycleTest, SharedAndRouterShapes) {
  Rng rng(10);
  const MoeConfig cfg{4, 2, 3, 5, kD};
  const auto bank = upcycle_from_dense(dense_, cfg, rng);
  EXPECT_NO_THROW(bank.check(cfg));
  EXPECT_EQ(bank.shared.size(), 3u);
  EXPECT_EQ(bank.router.shape(), (Shape{4, kD}));
}

TEST_F(UpcycleTest, Deterministic) {
  Rng a(11), b(11);
  const MoeConfig cfg{4, 2, 1, 5, kD};
  const auto x = upcycle_from_dense(dense_, cfg, a), y = upcycle_from_dense(dense_, cfg, b);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(x.routed[e].down, y.routed[e].down);
  EXPECT_EQ(x.router, y.router);
}

TEST(UpcycleSliceTest, TwoExpertsOfFourFromEight) {
  Rng rng(12);
  const FfnWeights dense{uniform_tensor(rng, {8, 3}), uniform_tensor(rng, {8, 3}), uniform_tensor(rng, {3, 8})};
  const auto res = upcycle_detailed(dense, MoeConfig{2, 1, 0, 4, 3}, rng);
  EXPECT_EQ(res.replicas, 1u);
  std::vector<std::size_t> all = res.channels[0];
  all.insert(all.end(), res.channels[1].begin(), res.channels[1].end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(all[i], i);
}

TEST(MoeConfigTest, PublishedParameterAccounting) {
  const MoeConfig cfg{64, 8, 8, 2560, 3584};
  EXPECT_EQ(cfg.expert_param_count(), 72ull * 3 * 2560 * 3584);
  EXPECT_EQ(cfg.active_expert_param_count(), 16ull * 3 * 2560 * 3584);
}

}  // namespace
}  // namespace qwen2
