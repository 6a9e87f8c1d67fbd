// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace qwen2 {

using TokenId = std::uint32_t;
using Bytes = std::string;  // arbitrary bytes, not necessarily UTF-8

inline constexpr std::size_t kByteTokens = 256;

/// Control token names used when none are given.
const std::vector<std::string>& default_control_tokens();

/// Byte-level BPE vocabulary.
/// Ids: 0..255 single bytes, then one id per merge in training order, then control tokens.
class BpeVocab {
 public:
  BpeVocab() : BpeVocab(default_control_tokens()) {}
  explicit BpeVocab(std::vector<std::string> control_names);

  /// Appends a merge of two existing tokens; returns the new id.
  /// Throws ParameterError if an id is unknown or the merged bytes already name a token.
  TokenId add_merge(TokenId left, TokenId right);

  std::size_t regular_size() const { return tokens_.size(); }
  std::size_t size() const { return tokens_.size() + controls_.size(); }
  std::size_t merge_count() const { return merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  const std::vector<std::string>& control_names() const { return controls_; }
  TokenId control_id(std::size_t index) const;
  bool is_control(TokenId id) const { return id >= tokens_.size() && id < size(); }

  /// Bytes of a regular token; empty for a control token. Throws InputError on unknown ids.
  const Bytes& token_bytes(TokenId id) const;
  /// Id of a regular token with exactly these bytes, or -1.
  std::int64_t find(std::string_view bytes) const;
  /// Merge rank of the pair, or -1 when the pair never merges.
  std::int64_t merge_rank(TokenId left, TokenId right) const;

  /// UTF-8 text: header, merge lines as hex byte strings, control names.
  std::string to_text() const;
  static BpeVocab from_text(const std::string& text);

  friend bool operator==(const BpeVocab& a, const BpeVocab& b) {
    return a.merges_ == b.merges_ && a.controls_ == b.controls_;
  }

 private:
  std::vector<Bytes> tokens_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::vector<std::string> controls_;
  std::unordered_map<Bytes, TokenId> by_bytes_;
  std::map<std::pair<TokenId, TokenId>, std::size_t> rank_;
  static const Bytes kEmpty;
};

/// Splits at whitespace transitions; a whitespace run attaches to the word after it.
std::vector<std::string_view> pretokenize(std::string_view text);

/// Greedy BPE trainer. target_vocab counts bytes, merges and control tokens.
BpeVocab bpe_train(std::span<const Bytes> corpus, std::size_t target_vocab,
                   std::vector<std::string> control_names = default_control_tokens());

std::vector<TokenId> encode(const BpeVocab& vocab, std::string_view text);
Bytes decode(const BpeVocab& vocab, std::span<const TokenId> ids);

/// Total bytes / total tokens over the corpus.
double compression_rate(const BpeVocab& vocab, std::span<const Bytes> corpus);

}  // namespace qwen2
