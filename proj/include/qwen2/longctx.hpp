// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "qwen2/layers.hpp"
#include "qwen2/tensor.hpp"

namespace qwen2 {

/// YaRN "NTK-by-parts" frequency interpolation plus attention temperature.
struct YarnParams {
  double scale = 1.0;            // target_ctx / native_ctx
  std::size_t native_ctx = 32768;
  double beta_fast = 32.0;
  double beta_slow = 1.0;
  double mscale_coeff = 0.1;

  void validate() const;
};

struct YarnAdjusted {
  Tensor inv_freq;
  /// Multiplier on attention logits: (mscale_coeff * ln(scale) + 1)^2.
  float attn_mult = 1.0f;
};

YarnAdjusted yarn_adjust(const RopeParams& rope, const YarnParams& yarn);

/// Dual chunk attention geometry.
struct DcaParams {
  std::size_t chunk_size = 8;
  std::size_t local_window = 4;

  void validate() const;
  /// Default local window is half the chunk.
  static DcaParams with_chunk(std::size_t chunk_size) { return {chunk_size, chunk_size / 2}; }
};

enum class DcaBranch { kIntra, kSuccessive, kInter };

DcaBranch dca_branch(std::size_t i, std::size_t j, const DcaParams& dca);

/// Effective relative distance of key j seen from query i (j <= i).
std::size_t dca_relpos(std::size_t i, std::size_t j, const DcaParams& dca);

/// Position at which the query at i is rotated for the given branch.
std::size_t dca_query_position(std::size_t i, DcaBranch branch, const DcaParams& dca);

/// Rotary range in positions reachable by this rope/yarn combination; 0 = unbounded.
std::size_t rope_position_range(const RopeParams& rope, const std::optional<YarnParams>& yarn);

/// Dual chunk attention. q: [n_q_heads x seq x hd]; k, v: [n_kv_heads x seq x hd].
/// Returns [seq x n_q_heads*hd]. Probabilities optionally exported as
/// [n_q_heads x seq x seq].
Tensor dca_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     const DcaParams& dca, const RopeParams& rope, const std::optional<YarnParams>& yarn,
                     Tensor* probs = nullptr);

/// Incremental DCA for one token. The cache holds keys rotated at
/// (position mod chunk_size), so it must only ever be fed by this function.
std::vector<float> dca_decode_step(KvCache& cache, std::size_t layer, const Tensor& new_q, const Tensor& new_k,
                                   const Tensor& new_v, std::size_t position, const AttentionParams& params,
                                   const DcaParams& dca, const Tensor& inv_freq, float scale_mult = 1.0f);

}  // namespace qwen2
