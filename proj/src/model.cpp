// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "qwen2/errors.hpp"
#include "qwen2/model.hpp"
#include "qwen2/rng.hpp"

namespace qwen2 {

namespace {

constexpr float kInitStd = 0.02f;

FfnWeights zero_ffn(std::size_t inter, std::size_t hidden) {
  return {Tensor({inter, hidden}), Tensor({inter, hidden}), Tensor({hidden, inter})};
}

bool is_norm(const std::string& name) { return name.ends_with("_norm"); }

void add_ffn(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix, FfnWeights& f) {
  out.emplace_back(prefix + ".down", &f.down);
  out.emplace_back(prefix + ".gate", &f.gate);
  out.emplace_back(prefix + ".up", &f.up);
}

}  // namespace

ModelWeights allocate_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden, qw = cfg.q_width(), kw = cfg.kv_width();
  ModelWeights w;
  w.embedding = Tensor({cfg.vocab_size, d});
  w.final_norm = Tensor({d}, 1.0f);
  if (!cfg.tie_embeddings) w.lm_head = Tensor({cfg.vocab_size, d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = Tensor({d}, 1.0f);
    lw.ffn_norm = Tensor({d}, 1.0f);
    lw.wq = Tensor({qw, d});
    lw.wk = Tensor({kw, d});
    lw.wv = Tensor({kw, d});
    lw.wo = Tensor({d, qw});
    if (cfg.qkv_bias) {
      lw.bq = Tensor({qw});
      lw.bk = Tensor({kw});
      lw.bv = Tensor({kw});
    }
    if (cfg.moe) {
      ExpertBank bank;
      for (std::size_t e = 0; e < cfg.moe->n_routed; ++e) bank.routed.push_back(zero_ffn(cfg.moe->expert_dim, d));
      for (std::size_t e = 0; e < cfg.moe->n_shared; ++e) bank.shared.push_back(zero_ffn(cfg.moe->expert_dim, d));
      bank.router = Tensor({cfg.moe->n_routed, d});
      lw.experts = std::move(bank);
    } else {
      lw.ffn = zero_ffn(cfg.ffn_intermediate, d);
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelWeights& w) {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed_tokens", &w.embedding);
  out.emplace_back("final_norm", &w.final_norm);
  if (w.lm_head) out.emplace_back("lm_head", &*w.lm_head);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm", &lw.attn_norm);
    out.emplace_back(p + "ffn_norm", &lw.ffn_norm);
    out.emplace_back(p + "wq", &lw.wq);
    out.emplace_back(p + "wk", &lw.wk);
    out.emplace_back(p + "wv", &lw.wv);
    out.emplace_back(p + "wo", &lw.wo);
    if (!lw.bq.empty()) {
      out.emplace_back(p + "bq", &lw.bq);
      out.emplace_back(p + "bk", &lw.bk);
      out.emplace_back(p + "bv", &lw.bv);
    }
    if (lw.ffn) add_ffn(out, p + "ffn", *lw.ffn);
    if (lw.experts) {
      out.emplace_back(p + "experts.router", &lw.experts->router);
      for (std::size_t e = 0; e < lw.experts->routed.size(); ++e)
        add_ffn(out, p + "experts.routed." + std::to_string(e), lw.experts->routed[e]);
      for (std::size_t e = 0; e < lw.experts->shared.size(); ++e)
        add_ffn(out, p + "experts.shared." + std::to_string(e), lw.experts->shared[e]);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelWeights& w) {
  auto mut = named_tensors(const_cast<ModelWeights&>(w));
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(std::move(n), t);
  return out;
}

ModelWeights build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelWeights w = allocate_weights(cfg);
  Rng rng(seed);
  for (auto& [name, t] : named_tensors(w)) {
    if (is_norm(name)) continue;
    *t = sample_normal(rng, t->shape(), 0.0f, kInitStd);
  }
  return w;
}

std::pair<ModelConfig, ModelWeights> upcycle_model(const ModelConfig& dense_cfg, const ModelWeights& dense,
                                                   MoeConfig moe, std::uint64_t seed, float reinit_std) {
  if (dense_cfg.moe) throw ConfigError("upcycle_model: source model '" + dense_cfg.name + "' is already MoE");
  moe.hidden = dense_cfg.hidden;
  ModelConfig cfg = dense_cfg;
  cfg.moe = moe;
  cfg.name = dense_cfg.name + "-moe";
  cfg.validate();

  ModelWeights w;
  w.embedding = dense.embedding;
  w.final_norm = dense.final_norm;
  w.lm_head = dense.lm_head;
  Rng rng(seed);
  for (const auto& src : dense.layers) {
    if (!src.ffn) throw ConfigError("upcycle_model: dense layer without FFN weights");
    LayerWeights lw = src;
    lw.ffn.reset();
    lw.experts = upcycle_from_dense(*src.ffn, moe, rng, reinit_std);
    w.layers.push_back(std::move(lw));
  }
  return {cfg, std::move(w)};
}

namespace {

void check_ids(const ModelConfig& cfg, std::span<const std::size_t> ids) {
  if (ids.size() > cfg.max_ctx) {
    throw InputError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_ctx " +
                     std::to_string(cfg.max_ctx));
  }
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(ids[t]) + " at position " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
}

/// [seq x heads*hd] -> [heads x seq x hd]
Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t hd) {
  const std::size_t seq = x.dim(0);
  Tensor y({heads, seq, hd});
  for (std::size_t t = 0; t < seq; ++t)
    for (std::size_t h = 0; h < heads; ++h)
      std::copy_n(x.row(t).begin() + static_cast<std::ptrdiff_t>(h * hd), hd, y.row(h * seq + t).begin());
  return y;
}

const Tensor* bias(const Tensor& b) { return b.empty() ? nullptr : &b; }

struct RopeSetup {
  Tensor inv_freq;
  float attn_mult;
};

RopeSetup rope_setup(const ModelConfig& cfg) {
  if (cfg.yarn) {
    auto adj = yarn_adjust(cfg.rope(), *cfg.yarn);
    return {std::move(adj.inv_freq), adj.attn_mult};
  }
  return {rope_freqs(cfg.rope()), 1.0f};
}

Tensor ffn_block(const LayerWeights& lw, const ModelConfig& cfg, const Tensor& h) {
  if (lw.experts) return moe_forward(h, *cfg.moe, *lw.experts);
  return swiglu_ffn(h, *lw.ffn);
}

}  // namespace

Tensor forward_hidden(const ModelWeights& w, const ModelConfig& cfg, std::span<const std::size_t> token_ids) {
  check_ids(cfg, token_ids);
  if (token_ids.empty()) throw InputError("forward: empty token sequence");
  const std::size_t seq = token_ids.size(), d = cfg.hidden;
  const auto ap = cfg.attention();
  const auto rope = rope_setup(cfg);
  std::vector<std::size_t> positions(seq);
  for (std::size_t t = 0; t < seq; ++t) positions[t] = t;

  Tensor x({seq, d});
  for (std::size_t t = 0; t < seq; ++t) std::copy_n(w.embedding.row(token_ids[t]).begin(), d, x.row(t).begin());

  for (const auto& lw : w.layers) {
    const Tensor h = rms_norm(x, lw.attn_norm, cfg.rms_eps);
    const Tensor q = split_heads(linear(h, lw.wq, bias(lw.bq)), cfg.n_q_heads, cfg.head_dim);
    const Tensor k = split_heads(linear(h, lw.wk, bias(lw.bk)), cfg.n_kv_heads, cfg.head_dim);
    const Tensor v = split_heads(linear(h, lw.wv, bias(lw.bv)), cfg.n_kv_heads, cfg.head_dim);
    const Tensor attn = cfg.dca ? dca_attention(q, k, v, ap, *cfg.dca, cfg.rope(), cfg.yarn)
                                : gqa_attention(q, k, v, ap, positions, rope.inv_freq, rope.attn_mult);
    x = add(x, linear(attn, lw.wo));
    x = add(x, ffn_block(lw, cfg, rms_norm(x, lw.ffn_norm, cfg.rms_eps)));
  }
  return rms_norm(x, w.final_norm, cfg.rms_eps);
}

Tensor forward(const ModelWeights& w, const ModelConfig& cfg, std::span<const std::size_t> token_ids) {
  return linear(forward_hidden(w, cfg, token_ids), w.output_projection());
}

DecodeSession::DecodeSession(const ModelWeights& w, const ModelConfig& cfg)
    : w_(w), cfg_(cfg), cache_(cfg.n_layers, cfg.n_kv_heads, cfg.head_dim) {
  cfg.validate();
  auto rope = rope_setup(cfg);
  inv_freq_ = std::move(rope.inv_freq);
  attn_mult_ = rope.attn_mult;
  if (cfg.dca) {
    const auto range = rope_position_range(cfg.rope(), cfg.yarn);
    if (range != 0 && 2 * cfg.dca->chunk_size > range) {
      throw ParameterError("dca chunk size exceeds the rope range of model '" + cfg.name + "'");
    }
  }
}

std::vector<float> DecodeSession::step(std::size_t token_id) {
  const std::size_t ids[1] = {token_id};
  if (position_ >= cfg_.max_ctx) throw InputError("decode session is at max_ctx " + std::to_string(cfg_.max_ctx));
  check_ids(cfg_, ids);
  const std::size_t d = cfg_.hidden;
  const auto ap = cfg_.attention();
  Tensor x({1, d});
  std::copy_n(w_.embedding.row(token_id).begin(), d, x.row(0).begin());

  for (std::size_t l = 0; l < w_.layers.size(); ++l) {
    const auto& lw = w_.layers[l];
    const Tensor h = rms_norm(x, lw.attn_norm, cfg_.rms_eps);
    const Tensor q = linear(h, lw.wq, bias(lw.bq)).reshaped({cfg_.n_q_heads, cfg_.head_dim});
    const Tensor k = linear(h, lw.wk, bias(lw.bk)).reshaped({cfg_.n_kv_heads, cfg_.head_dim});
    const Tensor v = linear(h, lw.wv, bias(lw.bv)).reshaped({cfg_.n_kv_heads, cfg_.head_dim});
    auto attn = cfg_.dca ? dca_decode_step(cache_, l, q, k, v, position_, ap, *cfg_.dca, inv_freq_, attn_mult_)
                         : decode_step(cache_, l, q, k, v, position_, ap, inv_freq_, attn_mult_);
    const std::size_t width = attn.size();
    const Tensor attn_t({1, width}, std::move(attn));
    x = add(x, linear(attn_t, lw.wo));
    x = add(x, ffn_block(lw, cfg_, rms_norm(x, lw.ffn_norm, cfg_.rms_eps)));
  }
  ++position_;
  const Tensor logits = linear(rms_norm(x, w_.final_norm, cfg_.rms_eps), w_.output_projection());
  return logits.values();
}

std::size_t argmax(std::span<const float> v) {
  if (v.empty()) throw DimensionError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<std::size_t> greedy_decode(const ModelWeights& w, const ModelConfig& cfg,
                                       std::span<const std::size_t> prompt, std::size_t max_new) {
  if (prompt.empty()) throw InputError("greedy_decode: prompt must be nonempty");
  check_ids(cfg, prompt);
  std::vector<std::size_t> out(prompt.begin(), prompt.end());
  if (max_new == 0) return out;

  DecodeSession session(w, cfg);
  std::vector<float> logits;
  for (auto id : prompt) logits = session.step(id);
  for (std::size_t n = 0; n < max_new; ++n) {
    const std::size_t next = argmax(logits);
    out.push_back(next);
    if (next == cfg.eos_id || out.size() >= cfg.max_ctx || n + 1 == max_new) break;
    logits = session.step(next);
  }
  return out;
}

}  // namespace qwen2
