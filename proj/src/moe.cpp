// SPDX-License-Identifier: Apache-2.0
#include "qwen2/moe.hpp"

#include <algorithm>
#include <cassert>
#include <numeric>

#include "qwen2/errors.hpp"

namespace qwen2 {

void MoeConfig::validate() const {
  if (n_routed == 0 || k_active == 0 || k_active > n_routed) {
    throw ConfigError("moe: need 1 <= k_active <= n_routed, got k_active=" + std::to_string(k_active) +
                      " n_routed=" + std::to_string(n_routed));
  }
  if (expert_dim == 0) throw ConfigError("moe: expert_dim must be >= 1");
  if (hidden == 0) throw ConfigError("moe: hidden must be >= 1");
}

std::size_t MoeConfig::expert_param_count() const { return (n_routed + n_shared) * 3 * expert_dim * hidden; }

std::size_t MoeConfig::active_expert_param_count() const {
  return (k_active + n_shared) * 3 * expert_dim * hidden;
}

void ExpertBank::check(const MoeConfig& cfg) const {
  cfg.validate();
  if (routed.size() != cfg.n_routed || shared.size() != cfg.n_shared) {
    throw ConfigError("expert bank holds " + std::to_string(routed.size()) + " routed / " +
                      std::to_string(shared.size()) + " shared experts, config wants " +
                      std::to_string(cfg.n_routed) + " / " + std::to_string(cfg.n_shared));
  }
  if (router.shape() != Shape{cfg.n_routed, cfg.hidden}) {
    throw ConfigError("router shape " + shape_str(router.shape()) + " does not match config");
  }
  const Shape in{cfg.expert_dim, cfg.hidden}, out{cfg.hidden, cfg.expert_dim};
  auto ok = [&](const FfnWeights& e) { return e.gate.shape() == in && e.up.shape() == in && e.down.shape() == out; };
  if (!std::all_of(routed.begin(), routed.end(), ok) || !std::all_of(shared.begin(), shared.end(), ok)) {
    throw ConfigError("expert weights do not match expert_dim=" + std::to_string(cfg.expert_dim) +
                      " hidden=" + std::to_string(cfg.hidden));
  }
}

std::vector<float> gate_probs(std::span<const float> x, const Tensor& router) {
  auto logits = matvec(router, x);
  softmax_inplace(logits);
  return logits;
}

std::vector<std::size_t> topk_select(std::span<const float> p, std::size_t k) {
  if (k == 0 || k > p.size()) {
    throw ParameterError("topk_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(p.size()) + "]");
  }
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<float> moe_forward(std::span<const float> x, const MoeConfig& cfg, const ExpertBank& bank) {
  bank.check(cfg);
  if (x.size() != cfg.hidden) {
    throw DimensionError("moe_forward: input width " + std::to_string(x.size()) + " vs hidden " +
                         std::to_string(cfg.hidden));
  }
  std::vector<float> y(cfg.hidden, 0.0f);
  for (const auto& e : bank.shared) {
    const auto out = swiglu_ffn(x, e);
    for (std::size_t c = 0; c < y.size(); ++c) y[c] += out[c];
  }
  const auto p = gate_probs(x, bank.router);
  for (std::size_t i : topk_select(p, cfg.k_active)) {
    const auto out = swiglu_ffn(x, bank.routed[i]);
    for (std::size_t c = 0; c < y.size(); ++c) y[c] += p[i] * out[c];
  }
  return y;
}

Tensor moe_forward(const Tensor& x, const MoeConfig& cfg, const ExpertBank& bank) {
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto out = moe_forward(x.row(r), cfg, bank);
    std::copy(out.begin(), out.end(), y.row(r).begin());
  }
  return y;
}

std::size_t replication_count(std::size_t n_routed, std::size_t expert_dim, std::size_t dense_intermediate) {
  if (dense_intermediate == 0) throw ParameterError("replication_count: dense intermediate size must be >= 1");
  return (n_routed * expert_dim + dense_intermediate - 1) / dense_intermediate;
}

namespace {

FfnWeights random_ffn(Rng& rng, std::size_t inter, std::size_t hidden, float std) {
  FfnWeights w;
  w.gate = sample_normal(rng, Shape{inter, hidden}, 0.0f, std);
  w.up = sample_normal(rng, Shape{inter, hidden}, 0.0f, std);
  w.down = sample_normal(rng, Shape{hidden, inter}, 0.0f, std);
  return w;
}

float& scalar_at(FfnWeights& w, std::size_t flat) {
  const std::size_t block = w.gate.numel();
  if (flat < block) return w.gate[flat];
  if (flat < 2 * block) return w.up[flat - block];
  return w.down[flat - 2 * block];
}

}  // namespace

UpcycleResult upcycle_detailed(const FfnWeights& dense, const MoeConfig& cfg, Rng& rng, float reinit_std) {
  cfg.validate();
  dense.validate();
  if (!(reinit_std >= 0.0f)) throw ParameterError("upcycle: reinit_std must be >= 0");
  const std::size_t d = cfg.hidden, h_ffn = dense.intermediate(), h_e = cfg.expert_dim;
  if (dense.hidden() != d) {
    throw ConfigError("upcycle: dense FFN hidden " + std::to_string(dense.hidden()) + " vs moe hidden " +
                      std::to_string(d));
  }

  UpcycleResult res;
  res.replicas = replication_count(cfg.n_routed, h_e, h_ffn);
  assert(cfg.n_routed * h_e <= res.replicas * h_ffn);

  // Channel order of the concatenated, per-copy shuffled replicas.
  std::vector<std::size_t> order;
  order.reserve(res.replicas * h_ffn);
  for (std::size_t c = 0; c < res.replicas; ++c) {
    const auto perm = rng.permutation(h_ffn);
    order.insert(order.end(), perm.begin(), perm.end());
  }

  for (std::size_t e = 0; e < cfg.n_routed; ++e) {
    std::vector<std::size_t> ch(order.begin() + static_cast<std::ptrdiff_t>(e * h_e),
                                order.begin() + static_cast<std::ptrdiff_t>((e + 1) * h_e));
    FfnWeights w{Tensor({h_e, d}), Tensor({h_e, d}), Tensor({d, h_e})};
    for (std::size_t r = 0; r < h_e; ++r) {
      std::copy_n(dense.gate.row(ch[r]).begin(), d, w.gate.row(r).begin());
      std::copy_n(dense.up.row(ch[r]).begin(), d, w.up.row(r).begin());
      for (std::size_t o = 0; o < d; ++o) w.down.at(o, r) = dense.down.at(o, ch[r]);
    }
    res.extracted.push_back(w);
    res.channels.push_back(std::move(ch));
  }

  for (const auto& extracted : res.extracted) {
    FfnWeights w = extracted;
    const std::size_t count = w.param_count();
    const std::size_t n_reinit = count / 2;
    const auto perm = rng.permutation(count);
    for (std::size_t t = 0; t < n_reinit; ++t) scalar_at(w, perm[t]) = static_cast<float>(rng.normal(0.0, reinit_std));
    res.reinit_counts.push_back(n_reinit);
    res.bank.routed.push_back(std::move(w));
  }

  for (std::size_t s = 0; s < cfg.n_shared; ++s) res.bank.shared.push_back(random_ffn(rng, h_e, d, reinit_std));
  res.bank.router = sample_normal(rng, Shape{cfg.n_routed, d}, 0.0f, reinit_std);
  return res;
}

ExpertBank upcycle_from_dense(const FfnWeights& dense, const MoeConfig& cfg, Rng& rng, float reinit_std) {
  return upcycle_detailed(dense, cfg, rng, reinit_std).bank;
}

}  // namespace qwen2
