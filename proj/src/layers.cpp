// SPDX-License-Identifier: Apache-2.0
#include "qwen2/layers.hpp"

#include <cmath>

#include "qwen2/errors.hpp"

namespace qwen2 {

void AttentionParams::validate() const {
  if (n_q_heads == 0 || n_kv_heads == 0) throw ParameterError("attention head counts must be positive");
  if (n_q_heads % n_kv_heads != 0) {
    throw ParameterError("n_q_heads (" + std::to_string(n_q_heads) + ") not divisible by n_kv_heads (" +
                         std::to_string(n_kv_heads) + ")");
  }
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ParameterError("head_dim must be positive and even, got " + std::to_string(head_dim));
  }
}

void FfnWeights::validate() const {
  if (gate.rank() != 2 || up.shape() != gate.shape() || down.rank() != 2 ||
      down.dim(0) != gate.dim(1) || down.dim(1) != gate.dim(0)) {
    throw DimensionError("ffn weights inconsistent: gate " + shape_str(gate.shape()) + ", up " +
                         shape_str(up.shape()) + ", down " + shape_str(down.shape()));
  }
}

Tensor rms_norm(const Tensor& x, const Tensor& gamma, float eps) {
  const std::size_t d = x.last_dim();
  if (gamma.numel() != d) {
    throw DimensionError("rms_norm: gamma " + shape_str(gamma.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    float ss = 0.0f;
    for (float v : row) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
    for (std::size_t i = 0; i < d; ++i) row[i] = row[i] * inv * gamma[i];
  }
  return y;
}

std::vector<float> swiglu_ffn(std::span<const float> x, const FfnWeights& w) {
  auto g = matvec(w.gate, x);
  const auto u = matvec(w.up, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = silu(g[i]) * u[i];
  return matvec(w.down, g);
}

Tensor swiglu_ffn(const Tensor& x, const FfnWeights& w) {
  w.validate();
  if (x.last_dim() != w.hidden()) {
    throw DimensionError("swiglu_ffn: input " + shape_str(x.shape()) + " vs gate " + shape_str(w.gate.shape()));
  }
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto out = swiglu_ffn(x.row(r), w);
    std::copy(out.begin(), out.end(), y.row(r).begin());
  }
  return y;
}

Tensor swiglu_ffn(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down) {
  return swiglu_ffn(x, FfnWeights{w_gate, w_up, w_down});
}

Tensor rope_freqs(const RopeParams& params) {
  if (params.head_dim == 0 || params.head_dim % 2 != 0) {
    throw ParameterError("rope_freqs: head_dim must be positive and even, got " +
                         std::to_string(params.head_dim));
  }
  if (!(params.base >= 1.0)) throw ParameterError("rope_freqs: base must be >= 1");
  const std::size_t half = params.head_dim / 2;
  Tensor f({half});
  for (std::size_t i = 0; i < half; ++i) {
    f[i] = static_cast<float>(
        std::pow(params.base, -2.0 * static_cast<double>(i) / static_cast<double>(params.head_dim)));
  }
  return f;
}

void rotate_half_pairs(std::span<float> v, double position, std::span<const float> inv_freq) {
  if (v.size() != 2 * inv_freq.size()) {
    throw DimensionError("rope: head width " + std::to_string(v.size()) + " vs " +
                         std::to_string(inv_freq.size()) + " frequencies");
  }
  for (std::size_t i = 0; i < inv_freq.size(); ++i) {
    const double angle = position * static_cast<double>(inv_freq[i]);
    const auto c = static_cast<float>(std::cos(angle));
    const auto s = static_cast<float>(std::sin(angle));
    const float a = v[2 * i], b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions, const Tensor& inv_freq) {
  if (x.rank() != 3) throw DimensionError("apply_rope: expected [heads x seq x head_dim], got " + shape_str(x.shape()));
  const std::size_t heads = x.dim(0), seq = x.dim(1);
  if (positions.size() != seq) {
    throw DimensionError("apply_rope: " + std::to_string(positions.size()) + " positions for sequence of " +
                         std::to_string(seq));
  }
  Tensor y = x;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < seq; ++t)
      rotate_half_pairs(y.row(h * seq + t), static_cast<double>(positions[t]), inv_freq.data());
  return y;
}

float attention_logit(std::span<const float> q, std::span<const float> k, float scale_mult) {
  return scale_mult * dot(q, k) / std::sqrt(static_cast<float>(q.size()));
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params) {
  params.validate();
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("attention expects rank-3 q/k/v, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const Shape q_expect{params.n_q_heads, q.dim(1), params.head_dim};
  const Shape kv_expect{params.n_kv_heads, q.dim(1), params.head_dim};
  if (q.shape() != q_expect || k.shape() != kv_expect || v.shape() != kv_expect) {
    throw DimensionError("attention shapes q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " do not match heads " + std::to_string(params.n_q_heads) + "/" +
                         std::to_string(params.n_kv_heads) + " x " + std::to_string(params.head_dim));
  }
}

}  // namespace

Tensor causal_attention(const Tensor& q_rot, const Tensor& k_rot, const Tensor& v,
                        const AttentionParams& params, float scale_mult, Tensor* probs) {
  check_qkv(q_rot, k_rot, v, params);
  const std::size_t seq = q_rot.dim(1), hd = params.head_dim, g = params.group_size();
  Tensor out({seq, params.n_q_heads * hd});
  if (probs) *probs = Tensor({params.n_q_heads, seq, seq});
  std::vector<float> scores(seq);
  for (std::size_t h = 0; h < params.n_q_heads; ++h) {
    const std::size_t kvh = h / g;
    for (std::size_t i = 0; i < seq; ++i) {
      const auto qi = q_rot.row(h * seq + i);
      for (std::size_t j = 0; j < seq; ++j)
        scores[j] = j <= i ? attention_logit(qi, k_rot.row(kvh * seq + j), scale_mult) : kMaskedLogit;
      softmax_inplace(scores);
      auto o = out.row(i).subspan(h * hd, hd);
      for (std::size_t j = 0; j < seq; ++j) {
        const auto vj = v.row(kvh * seq + j);
        for (std::size_t c = 0; c < hd; ++c) o[c] += scores[j] * vj[c];
      }
      if (probs) std::copy(scores.begin(), scores.end(), probs->row(h * seq + i).begin());
    }
  }
  return out;
}

Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     std::span<const std::size_t> positions, const Tensor& inv_freq, float scale_mult) {
  check_qkv(q, k, v, params);
  return causal_attention(apply_rope(q, positions, inv_freq), apply_rope(k, positions, inv_freq), v, params,
                          scale_mult);
}

Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     std::span<const std::size_t> positions, const RopeParams& rope, float scale_mult) {
  return gqa_attention(q, k, v, params, positions, rope_freqs(rope), scale_mult);
}

KvCache::KvCache(std::size_t n_layers, std::size_t n_kv_heads, std::size_t head_dim)
    : n_kv_heads_(n_kv_heads), head_dim_(head_dim), keys_(n_layers), values_(n_layers) {}

void KvCache::check_layer(std::size_t layer) const {
  if (layer >= keys_.size()) {
    throw StateError("kv cache has " + std::to_string(keys_.size()) + " layers, asked for layer " +
                     std::to_string(layer));
  }
}

std::size_t KvCache::length(std::size_t layer) const {
  check_layer(layer);
  return keys_[layer].size() / values_per_token();
}

void KvCache::append(std::size_t layer, std::size_t position, std::span<const float> k,
                     std::span<const float> v) {
  check_layer(layer);
  if (position != length(layer)) {
    throw StateError("kv cache layer " + std::to_string(layer) + " holds " + std::to_string(length(layer)) +
                     " positions; cannot append position " + std::to_string(position));
  }
  if (k.size() != values_per_token() || v.size() != values_per_token()) {
    throw DimensionError("kv cache append: expected " + std::to_string(values_per_token()) + " values, got " +
                         std::to_string(k.size()) + "/" + std::to_string(v.size()));
  }
  keys_[layer].insert(keys_[layer].end(), k.begin(), k.end());
  values_[layer].insert(values_[layer].end(), v.begin(), v.end());
}

std::span<const float> KvCache::key(std::size_t layer, std::size_t pos, std::size_t kv_head) const {
  return std::span<const float>(keys_[layer]).subspan((pos * n_kv_heads_ + kv_head) * head_dim_, head_dim_);
}

std::span<const float> KvCache::value(std::size_t layer, std::size_t pos, std::size_t kv_head) const {
  return std::span<const float>(values_[layer]).subspan((pos * n_kv_heads_ + kv_head) * head_dim_, head_dim_);
}

std::size_t KvCache::stored_floats(std::size_t layer) const {
  check_layer(layer);
  return keys_[layer].size() + values_[layer].size();
}

std::vector<float> decode_step(KvCache& cache, std::size_t layer, const Tensor& new_q, const Tensor& new_k,
                               const Tensor& new_v, std::size_t position, const AttentionParams& params,
                               const Tensor& inv_freq, float scale_mult) {
  params.validate();
  const std::size_t hd = params.head_dim, g = params.group_size();
  if (new_q.numel() != params.n_q_heads * hd || new_k.numel() != params.n_kv_heads * hd ||
      new_v.numel() != params.n_kv_heads * hd) {
    throw DimensionError("decode_step: q " + shape_str(new_q.shape()) + ", k " + shape_str(new_k.shape()) +
                         ", v " + shape_str(new_v.shape()));
  }
  if (cache.n_kv_heads() != params.n_kv_heads || cache.head_dim() != hd) {
    throw StateError("decode_step: cache geometry does not match attention params");
  }
  if (position != cache.length(layer)) {
    throw StateError("decode_step: position " + std::to_string(position) + " but cache layer " +
                     std::to_string(layer) + " holds " + std::to_string(cache.length(layer)));
  }
  std::vector<float> k_rot(new_k.values());
  for (std::size_t h = 0; h < params.n_kv_heads; ++h)
    rotate_half_pairs(std::span<float>(k_rot).subspan(h * hd, hd), static_cast<double>(position), inv_freq.data());
  cache.append(layer, position, k_rot, new_v.data());

  const std::size_t len = position + 1;
  std::vector<float> out(params.n_q_heads * hd, 0.0f);
  std::vector<float> q(hd), scores(len);
  for (std::size_t h = 0; h < params.n_q_heads; ++h) {
    const std::size_t kvh = h / g;
    std::copy_n(new_q.data().begin() + static_cast<std::ptrdiff_t>(h * hd), hd, q.begin());
    rotate_half_pairs(q, static_cast<double>(position), inv_freq.data());
    for (std::size_t j = 0; j < len; ++j) scores[j] = attention_logit(q, cache.key(layer, j, kvh), scale_mult);
    softmax_inplace(scores);
    for (std::size_t j = 0; j < len; ++j) {
      const auto vj = cache.value(layer, j, kvh);
      for (std::size_t c = 0; c < hd; ++c) out[h * hd + c] += scores[j] * vj[c];
    }
  }
  return out;
}

}  // namespace qwen2
