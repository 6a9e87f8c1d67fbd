// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qwen2/layers.hpp"
#include "qwen2/longctx.hpp"
#include "qwen2/moe.hpp"
#include "qwen2/tensor.hpp"

namespace qwen2 {

/// Decoder configuration. Field names double as keys of the text config format.
struct ModelConfig {
  std::string name = "custom";
  std::size_t hidden = 64;
  std::size_t n_layers = 2;
  std::size_t n_q_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t head_dim = 16;
  std::size_t ffn_intermediate = 128;
  std::optional<MoeConfig> moe;
  bool tie_embeddings = true;
  std::size_t vocab_size = 512;
  std::size_t regular_tokens = 509;
  std::size_t control_tokens = 3;
  std::size_t eos_id = 511;
  double rope_base = 1000000.0;
  float rms_eps = kDefaultRmsEps;
  bool qkv_bias = true;
  std::optional<YarnParams> yarn;
  std::optional<DcaParams> dca;
  std::size_t max_ctx = 256;
  /// Pre-training token budget, metadata only (e.g. "7T").
  std::string trained_tokens;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  AttentionParams attention() const { return {n_q_heads, n_kv_heads, head_dim, qkv_bias}; }
  RopeParams rope() const { return {rope_base, head_dim, max_ctx}; }
  std::size_t q_width() const { return n_q_heads * head_dim; }
  std::size_t kv_width() const { return n_kv_heads * head_dim; }
};

/// Names of every shipped preset.
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ModelConfig preset(const std::string& name);

/// Reference copy of one published architecture row, kept apart from the
/// presets so validation compares two independent sources.
struct ArchitectureRow {
  std::string name;
  std::size_t hidden, layers, q_heads, kv_heads, head_size, intermediate;
  std::size_t routed_experts, activated_experts, shared_experts;  // 0 for dense
  bool embedding_tying;
  std::size_t vocab_size;
  std::string trained_tokens;
};

const std::vector<ArchitectureRow>& published_architectures();

struct FieldCheck {
  std::string field;
  std::string expected;
  std::string actual;
  bool ok;
};

/// Compares a config field by field with its published row, plus derived
/// consistency checks. Throws ConfigError if no published row has cfg.name.
std::vector<FieldCheck> check_against_published(const ModelConfig& cfg);

/// key = value text; keys are ModelConfig field names, nested ones dotted
/// (moe.n_routed, yarn.scale, dca.chunk_size). Unknown keys are errors.
std::string config_to_text(const ModelConfig& cfg);
ModelConfig config_from_text(const std::string& text);

struct LayerWeights {
  Tensor attn_norm;
  Tensor wq, bq;  // [q_width x hidden], [q_width]
  Tensor wk, bk;  // [kv_width x hidden], [kv_width]
  Tensor wv, bv;
  Tensor wo;      // [hidden x q_width], no bias
  Tensor ffn_norm;
  std::optional<FfnWeights> ffn;
  std::optional<ExpertBank> experts;
};

struct ModelWeights {
  Tensor embedding;  // [vocab x hidden]
  std::vector<LayerWeights> layers;
  Tensor final_norm;
  /// Absent when embeddings are tied.
  std::optional<Tensor> lm_head;

  const Tensor& output_projection() const { return lm_head ? *lm_head : embedding; }
};

/// Zero-filled weights with the canonical shapes for cfg (norm gammas are 1).
ModelWeights allocate_weights(const ModelConfig& cfg);

/// Every tensor keyed by canonical name, sorted by name.
std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelWeights& w);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelWeights& w);

/// Random weights ~ Normal(0, 0.02) drawn in canonical name order; norm gammas stay 1.
ModelWeights build_model(const ModelConfig& cfg, std::uint64_t seed);

/// MoE model whose FFNs are upcycled from a dense source; attention,
/// embeddings and norms are copied.
std::pair<ModelConfig, ModelWeights> upcycle_model(const ModelConfig& dense_cfg, const ModelWeights& dense,
                                                   MoeConfig moe, std::uint64_t seed,
                                                   float reinit_std = kDefaultReinitStd);

/// Final-normed hidden states [seq x hidden].
Tensor forward_hidden(const ModelWeights& w, const ModelConfig& cfg, std::span<const std::size_t> token_ids);

/// Logits [seq x vocab].
Tensor forward(const ModelWeights& w, const ModelConfig& cfg, std::span<const std::size_t> token_ids);

/// Token-by-token decoding over a KV cache. One session per sequence.
class DecodeSession {
 public:
  DecodeSession(const ModelWeights& w, const ModelConfig& cfg);

  /// Feeds one token and returns the logits at its position.
  std::vector<float> step(std::size_t token_id);
  std::size_t position() const { return position_; }
  const KvCache& cache() const { return cache_; }

 private:
  const ModelWeights& w_;
  const ModelConfig& cfg_;
  Tensor inv_freq_;
  float attn_mult_ = 1.0f;
  KvCache cache_;
  std::size_t position_ = 0;
};

/// Index of the largest value, ties toward the lower index.
std::size_t argmax(std::span<const float> v);

/// Greedy continuation using the KV cache. Returns prompt + generated ids;
/// stops after max_new tokens, after emitting cfg.eos_id, or at max_ctx.
std::vector<std::size_t> greedy_decode(const ModelWeights& w, const ModelConfig& cfg,
                                       std::span<const std::size_t> prompt, std::size_t max_new);

inline constexpr char kWeightMagic[4] = {'Q', 'W', '2', 'T'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

/// Container bytes: magic, u32 version, u64 header length, header text,
/// payload of little-endian float32 tensors in manifest order, u32 CRC32 of payload.
std::vector<std::uint8_t> serialize_weights(const ModelWeights& w, const ModelConfig& cfg);
std::pair<ModelWeights, ModelConfig> deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelWeights& w, const ModelConfig& cfg, const std::filesystem::path& path);
std::pair<ModelWeights, ModelConfig> load_weights(const std::filesystem::path& path);

}  // namespace qwen2
