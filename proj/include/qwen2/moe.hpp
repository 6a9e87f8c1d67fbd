// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qwen2/layers.hpp"
#include "qwen2/rng.hpp"
#include "qwen2/tensor.hpp"

namespace qwen2 {

inline constexpr float kDefaultReinitStd = 0.02f;

struct MoeConfig {
  std::size_t n_routed = 1;
  std::size_t k_active = 1;
  std::size_t n_shared = 0;
  std::size_t expert_dim = 1;
  std::size_t hidden = 1;

  void validate() const;

  /// Parameters held by all routed and shared experts: (n_routed + n_shared) * 3 * h_E * d.
  std::size_t expert_param_count() const;
  /// Expert parameters touched per token: (k_active + n_shared) * 3 * h_E * d.
  std::size_t active_expert_param_count() const;

  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

struct ExpertBank {
  std::vector<FfnWeights> routed;
  std::vector<FfnWeights> shared;
  Tensor router;  // [n_routed x hidden]

  /// Throws ConfigError when the bank does not match cfg.
  void check(const MoeConfig& cfg) const;
};

/// softmax(router * x).
std::vector<float> gate_probs(std::span<const float> x, const Tensor& router);

/// Indices of the k largest probabilities, ties toward the lower index, sorted ascending.
std::vector<std::size_t> topk_select(std::span<const float> p, std::size_t k);

/// y = sum_shared E_s(x) + sum_{i in topk(p)} p_i E_i(x), p not renormalized.
std::vector<float> moe_forward(std::span<const float> x, const MoeConfig& cfg, const ExpertBank& bank);
/// Row-wise over [... x hidden].
Tensor moe_forward(const Tensor& x, const MoeConfig& cfg, const ExpertBank& bank);

/// ceil(n_routed * expert_dim / dense_intermediate).
std::size_t replication_count(std::size_t n_routed, std::size_t expert_dim, std::size_t dense_intermediate);

/// Full record of one dense-to-MoE initialization.
struct UpcycleResult {
  ExpertBank bank;
  /// Routed experts as sliced from the shuffled copies, before re-initialization.
  std::vector<FfnWeights> extracted;
  /// For each routed expert, the dense intermediate channel behind each of its rows.
  std::vector<std::vector<std::size_t>> channels;
  /// Scalars redrawn per routed expert.
  std::vector<std::size_t> reinit_counts;
  std::size_t replicas = 0;
};

/// Replicate the dense FFN, shuffle each copy along the intermediate axis,
/// slice consecutive expert_dim blocks into experts, then redraw exactly half
/// of each expert's scalars. Shared experts and the router are drawn fresh.
UpcycleResult upcycle_detailed(const FfnWeights& dense, const MoeConfig& cfg, Rng& rng,
                               float reinit_std = kDefaultReinitStd);

ExpertBank upcycle_from_dense(const FfnWeights& dense, const MoeConfig& cfg, Rng& rng,
                              float reinit_std = kDefaultReinitStd);

}  // namespace qwen2
