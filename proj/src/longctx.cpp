// SPDX-License-Identifier: Apache-2.0
#include "qwen2/longctx.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qwen2/errors.hpp"

namespace qwen2 {

void YarnParams::validate() const {
  if (!(scale >= 1.0)) throw ParameterError("yarn scale must be >= 1, got " + std::to_string(scale));
  if (native_ctx == 0) throw ParameterError("yarn native_ctx must be positive");
  if (!(beta_slow > 0.0) || !(beta_fast > beta_slow)) {
    throw ParameterError("yarn requires beta_fast > beta_slow > 0");
  }
}

YarnAdjusted yarn_adjust(const RopeParams& rope, const YarnParams& yarn) {
  yarn.validate();
  YarnAdjusted out{rope_freqs(rope), 1.0f};
  if (yarn.scale == 1.0) return out;

  for (auto& f : out.inv_freq.data()) {
    const double wavelength = 2.0 * std::numbers::pi / static_cast<double>(f);
    const double rotations = static_cast<double>(yarn.native_ctx) / wavelength;
    const double gamma = std::clamp((rotations - yarn.beta_slow) / (yarn.beta_fast - yarn.beta_slow), 0.0, 1.0);
    if (gamma == 1.0) continue;  // high-frequency dims keep their rotation
    f = static_cast<float>(static_cast<double>(f) * (gamma + (1.0 - gamma) / yarn.scale));
  }
  const double m = yarn.mscale_coeff * std::log(yarn.scale) + 1.0;
  out.attn_mult = static_cast<float>(m * m);
  return out;
}

void DcaParams::validate() const {
  if (chunk_size == 0) throw ParameterError("dca chunk_size must be positive");
  if (local_window == 0 || local_window > chunk_size) {
    throw ParameterError("dca local_window must satisfy 0 < w <= chunk_size, got w=" + std::to_string(local_window) +
                         " chunk=" + std::to_string(chunk_size));
  }
}

DcaBranch dca_branch(std::size_t i, std::size_t j, const DcaParams& dca) {
  if (j > i) {
    throw OrderingError("dca: key position " + std::to_string(j) + " after query position " + std::to_string(i));
  }
  const std::size_t ci = i / dca.chunk_size, cj = j / dca.chunk_size;
  if (ci == cj) return DcaBranch::kIntra;
  if (cj + 1 == ci && i - j <= dca.local_window) return DcaBranch::kSuccessive;
  return DcaBranch::kInter;
}

std::size_t dca_query_position(std::size_t i, DcaBranch branch, const DcaParams& dca) {
  switch (branch) {
    case DcaBranch::kIntra:
      return i % dca.chunk_size;
    case DcaBranch::kSuccessive:
      return i % dca.chunk_size + dca.chunk_size;
    case DcaBranch::kInter:
      return dca.chunk_size - 1;
  }
  return 0;
}

std::size_t dca_relpos(std::size_t i, std::size_t j, const DcaParams& dca) {
  dca.validate();
  return dca_query_position(i, dca_branch(i, j, dca), dca) - j % dca.chunk_size;
}

std::size_t rope_position_range(const RopeParams& rope, const std::optional<YarnParams>& yarn) {
  if (yarn) return static_cast<std::size_t>(static_cast<double>(yarn->native_ctx) * yarn->scale);
  return rope.max_positions;
}

namespace {

struct DcaSetup {
  Tensor inv_freq;
  float scale_mult;
};

DcaSetup prepare(const AttentionParams& params, const DcaParams& dca, const RopeParams& rope,
                 const std::optional<YarnParams>& yarn) {
  params.validate();
  dca.validate();
  const std::size_t range = rope_position_range(rope, yarn);
  if (range != 0 && 2 * dca.chunk_size > range) {
    throw ParameterError("dca: chunk size " + std::to_string(dca.chunk_size) + " needs positions up to " +
                         std::to_string(2 * dca.chunk_size - 1) + " but rope covers only " + std::to_string(range));
  }
  if (yarn) {
    auto adj = yarn_adjust(rope, *yarn);
    return {std::move(adj.inv_freq), adj.attn_mult};
  }
  return {rope_freqs(rope), 1.0f};
}

}  // namespace

Tensor dca_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                     const DcaParams& dca, const RopeParams& rope, const std::optional<YarnParams>& yarn,
                     Tensor* probs) {
  const auto setup = prepare(params, dca, rope, yarn);
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != params.n_q_heads ||
      k.dim(0) != params.n_kv_heads || v.shape() != k.shape() || q.dim(1) != k.dim(1) ||
      q.dim(2) != params.head_dim || k.dim(2) != params.head_dim) {
    throw DimensionError("dca_attention shapes q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  const std::size_t seq = q.dim(1), hd = params.head_dim, g = params.group_size(), sc = dca.chunk_size;

  std::vector<std::size_t> key_pos(seq), intra_pos(seq), succ_pos(seq), inter_pos(seq, sc - 1);
  for (std::size_t t = 0; t < seq; ++t) {
    key_pos[t] = intra_pos[t] = t % sc;
    succ_pos[t] = t % sc + sc;
  }
  const Tensor k_rot = apply_rope(k, key_pos, setup.inv_freq);
  const Tensor q_intra = apply_rope(q, intra_pos, setup.inv_freq);
  const Tensor q_succ = apply_rope(q, succ_pos, setup.inv_freq);
  const Tensor q_inter = apply_rope(q, inter_pos, setup.inv_freq);

  Tensor out({seq, params.n_q_heads * hd});
  if (probs) *probs = Tensor({params.n_q_heads, seq, seq});
  std::vector<float> scores(seq);
  for (std::size_t h = 0; h < params.n_q_heads; ++h) {
    const std::size_t kvh = h / g;
    for (std::size_t i = 0; i < seq; ++i) {
      const std::size_t r = h * seq + i;
      for (std::size_t j = 0; j < seq; ++j) {
        if (j > i) {
          scores[j] = kMaskedLogit;
          continue;
        }
        std::span<const float> qi;
        switch (dca_branch(i, j, dca)) {
          case DcaBranch::kIntra: qi = q_intra.row(r); break;
          case DcaBranch::kSuccessive: qi = q_succ.row(r); break;
          case DcaBranch::kInter: qi = q_inter.row(r); break;
        }
        scores[j] = attention_logit(qi, k_rot.row(kvh * seq + j), setup.scale_mult);
      }
      softmax_inplace(scores);
      auto o = out.row(i).subspan(h * hd, hd);
      for (std::size_t j = 0; j < seq; ++j) {
        const auto vj = v.row(kvh * seq + j);
        for (std::size_t c = 0; c < hd; ++c) o[c] += scores[j] * vj[c];
      }
      if (probs) std::copy(scores.begin(), scores.end(), probs->row(r).begin());
    }
  }
  return out;
}

std::vector<float> dca_decode_step(KvCache& cache, std::size_t layer, const Tensor& new_q, const Tensor& new_k,
                                   const Tensor& new_v, std::size_t position, const AttentionParams& params,
                                   const DcaParams& dca, const Tensor& inv_freq, float scale_mult) {
  params.validate();
  dca.validate();
  const std::size_t hd = params.head_dim, g = params.group_size();
  if (new_q.numel() != params.n_q_heads * hd || new_k.numel() != params.n_kv_heads * hd ||
      new_v.numel() != params.n_kv_heads * hd) {
    throw DimensionError("dca_decode_step: q " + shape_str(new_q.shape()) + ", k " + shape_str(new_k.shape()) +
                         ", v " + shape_str(new_v.shape()));
  }
  if (position != cache.length(layer)) {
    throw StateError("dca_decode_step: position " + std::to_string(position) + " but cache layer " +
                     std::to_string(layer) + " holds " + std::to_string(cache.length(layer)));
  }
  std::vector<float> k_rot(new_k.values());
  const auto key_pos = static_cast<double>(position % dca.chunk_size);
  for (std::size_t h = 0; h < params.n_kv_heads; ++h)
    rotate_half_pairs(std::span<float>(k_rot).subspan(h * hd, hd), key_pos, inv_freq.data());
  cache.append(layer, position, k_rot, new_v.data());

  const std::size_t len = position + 1;
  std::vector<float> out(params.n_q_heads * hd, 0.0f);
  std::vector<float> scores(len);
  std::vector<float> q_branch[3];
  for (std::size_t h = 0; h < params.n_q_heads; ++h) {
    const std::size_t kvh = h / g;
    for (int b = 0; b < 3; ++b) {
      q_branch[b].assign(new_q.data().begin() + static_cast<std::ptrdiff_t>(h * hd),
                         new_q.data().begin() + static_cast<std::ptrdiff_t>((h + 1) * hd));
      const auto qpos = dca_query_position(position, static_cast<DcaBranch>(b), dca);
      rotate_half_pairs(q_branch[b], static_cast<double>(qpos), inv_freq.data());
    }
    for (std::size_t j = 0; j < len; ++j) {
      const auto b = static_cast<int>(dca_branch(position, j, dca));
      scores[j] = attention_logit(q_branch[b], cache.key(layer, j, kvh), scale_mult);
    }
    softmax_inplace(scores);
    for (std::size_t j = 0; j < len; ++j) {
      const auto vj = cache.value(layer, j, kvh);
      for (std::size_t c = 0; c < hd; ++c) out[h * hd + c] += scores[j] * vj[c];
    }
  }
  return out;
}

}  // namespace qwen2
