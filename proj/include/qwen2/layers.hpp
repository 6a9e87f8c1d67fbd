// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qwen2/tensor.hpp"

namespace qwen2 {

inline constexpr float kDefaultRmsEps = 1e-6f;
/// Logit written into causally masked slots before softmax.
inline constexpr float kMaskedLogit = -3.4e38f;

struct AttentionParams {
  std::size_t n_q_heads = 1;
  std::size_t n_kv_heads = 1;
  std::size_t head_dim = 2;
  bool use_qkv_bias = true;

  /// Throws ParameterError unless heads divide evenly and head_dim is even.
  void validate() const;
  std::size_t group_size() const { return n_q_heads / n_kv_heads; }
};

struct RopeParams {
  double base = 10000.0;
  std::size_t head_dim = 2;
  /// Largest position count the rotary table is trusted for; 0 = unbounded.
  std::size_t max_positions = 0;
};

/// Gate/up/down projections of one SwiGLU FFN.
/// gate, up: [inter x hidden]; down: [hidden x inter].
struct FfnWeights {
  Tensor gate;
  Tensor up;
  Tensor down;

  std::size_t hidden() const { return gate.dim(1); }
  std::size_t intermediate() const { return gate.dim(0); }
  std::size_t param_count() const { return gate.numel() + up.numel() + down.numel(); }
  void validate() const;
};

/// out = x * gamma / sqrt(mean(x^2) + eps) over the trailing axis.
Tensor rms_norm(const Tensor& x, const Tensor& gamma, float eps = kDefaultRmsEps);

/// down * (silu(gate * x) .* (up * x)) for one vector.
std::vector<float> swiglu_ffn(std::span<const float> x, const FfnWeights& w);
Tensor swiglu_ffn(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down);
/// Row-wise over a [... x hidden] tensor.
Tensor swiglu_ffn(const Tensor& x, const FfnWeights& w);

/// inv_freq[i] = base^(-2i / head_dim), i < head_dim / 2.
Tensor rope_freqs(const RopeParams& params);

/// Rotate one head vector in place at an absolute position.
void rotate_half_pairs(std::span<float> v, double position, std::span<const float> inv_freq);

/// x: [heads x seq x head_dim]; each (x[2i], x[2i+1]) rotated by pos * inv_freq[i].
Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions, const Tensor& inv_freq);

/// scale_mult * dot(q, k) / sqrt(head_dim). Shared by every attention path.
float attention_logit(std::span<const float> q, std::span<const float> k, float scale_mult);

/// Grouped query attention with causal mask and RoPE applied to q and k.
/// q: [n_q_heads x seq x head_dim], k/v: [n_kv_heads x seq x head_dim].
/// Returns [seq x n_q_heads*head_dim] with heads concatenated.
Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     std::span<const std::size_t> positions, const Tensor& inv_freq,
                     float scale_mult = 1.0f);
Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     std::span<const std::size_t> positions, const RopeParams& rope,
                     float scale_mult = 1.0f);

/// Attention over already-rotated q/k; probabilities optionally exported as
/// [n_q_heads x seq x seq].
Tensor causal_attention(const Tensor& q_rot, const Tensor& k_rot, const Tensor& v,
                        const AttentionParams& params, float scale_mult, Tensor* probs = nullptr);

/// Append-only per-layer store of rotated keys and values.
/// Layout per layer: [len x n_kv_heads x head_dim].
class KvCache {
 public:
  KvCache(std::size_t n_layers, std::size_t n_kv_heads, std::size_t head_dim);

  std::size_t n_layers() const { return keys_.size(); }
  std::size_t length(std::size_t layer) const;
  std::size_t values_per_token() const { return n_kv_heads_ * head_dim_; }
  std::size_t n_kv_heads() const { return n_kv_heads_; }
  std::size_t head_dim() const { return head_dim_; }

  /// k, v: [n_kv_heads x head_dim] for the token at `position`.
  void append(std::size_t layer, std::size_t position, std::span<const float> k,
              std::span<const float> v);

  std::span<const float> key(std::size_t layer, std::size_t pos, std::size_t kv_head) const;
  std::span<const float> value(std::size_t layer, std::size_t pos, std::size_t kv_head) const;

  /// Floats held for one layer (keys plus values).
  std::size_t stored_floats(std::size_t layer) const;

 private:
  void check_layer(std::size_t layer) const;

  std::size_t n_kv_heads_;
  std::size_t head_dim_;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

/// One incremental attention step for a single new token.
/// new_q: [n_q_heads x head_dim]; new_k/new_v: [n_kv_heads x head_dim], unrotated.
/// Throws StateError unless position == cache.length(layer).
/// Returns [n_q_heads * head_dim].
std::vector<float> decode_step(KvCache& cache, std::size_t layer, const Tensor& new_q,
                               const Tensor& new_k, const Tensor& new_v, std::size_t position,
                               const AttentionParams& params, const Tensor& inv_freq,
                               float scale_mult = 1.0f);

}  // namespace qwen2
