// SPDX-License-Identifier: Apache-2.0
#include "qwen2/tokenizer.hpp"

#include <algorithm>
#include <sstream>

#include "qwen2/errors.hpp"

namespace qwen2 {

const Bytes BpeVocab::kEmpty;

const std::vector<std::string>& default_control_tokens() {
  static const std::vector<std::string> names = {"<|endoftext|>", "<|im_start|>", "<|im_end|>"};
  return names;
}

BpeVocab::BpeVocab(std::vector<std::string> control_names) : controls_(std::move(control_names)) {
  tokens_.reserve(kByteTokens);
  for (std::size_t b = 0; b < kByteTokens; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    by_bytes_.emplace(tokens_.back(), static_cast<TokenId>(b));
  }
}

TokenId BpeVocab::add_merge(TokenId left, TokenId right) {
  if (left >= tokens_.size() || right >= tokens_.size()) {
    throw ParameterError("merge (" + std::to_string(left) + ", " + std::to_string(right) +
                         ") references an undefined token");
  }
  Bytes merged = tokens_[left] + tokens_[right];
  if (by_bytes_.contains(merged)) throw ParameterError("merge produces an existing token");
  const auto id = static_cast<TokenId>(tokens_.size());
  rank_.emplace(std::make_pair(left, right), merges_.size());
  merges_.emplace_back(left, right);
  by_bytes_.emplace(merged, id);
  tokens_.push_back(std::move(merged));
  return id;
}

TokenId BpeVocab::control_id(std::size_t index) const {
  if (index >= controls_.size()) throw InputError("no control token #" + std::to_string(index));
  return static_cast<TokenId>(tokens_.size() + index);
}

const Bytes& BpeVocab::token_bytes(TokenId id) const {
  if (id < tokens_.size()) return tokens_[id];
  if (id < size()) return kEmpty;
  throw InputError("unknown token id " + std::to_string(id) + " (vocabulary has " + std::to_string(size()) + ")");
}

std::int64_t BpeVocab::find(std::string_view bytes) const {
  const auto it = by_bytes_.find(Bytes(bytes));
  return it == by_bytes_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::int64_t BpeVocab::merge_rank(TokenId left, TokenId right) const {
  const auto it = rank_.find({left, right});
  return it == rank_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

namespace {

constexpr char kHex[] = "0123456789abcdef";
constexpr std::string_view kVocabHeader = "qwen2-bpe 1";

std::string to_hex(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

Bytes from_hex(const std::string& hex, std::size_t lineno) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw FormatError("vocab line " + std::to_string(lineno) + ": bad hex digit", lineno);
  };
  if (hex.empty() || hex.size() % 2) throw FormatError("vocab line " + std::to_string(lineno) + ": bad hex string", lineno);
  Bytes out;
  for (std::size_t i = 0; i < hex.size(); i += 2) out += static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1]));
  return out;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r'; }

using Word = std::vector<TokenId>;

/// Merge every non-overlapping (left, right) occurrence, scanning left to right.
bool merge_pair(Word& w, TokenId left, TokenId right, TokenId merged) {
  bool changed = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < w.size();) {
    if (i + 1 < w.size() && w[i] == left && w[i + 1] == right) {
      w[out++] = merged;
      i += 2;
      changed = true;
    } else {
      w[out++] = w[i++];
    }
  }
  w.resize(out);
  return changed;
}

Word bytes_to_word(std::string_view s) {
  Word w;
  w.reserve(s.size());
  for (unsigned char c : s) w.push_back(c);
  return w;
}

}  // namespace

std::string BpeVocab::to_text() const {
  std::ostringstream os;
  os << kVocabHeader << '\n' << "merges " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) os << to_hex(tokens_[l]) << ' ' << to_hex(tokens_[r]) << '\n';
  os << "controls " << controls_.size() << '\n';
  for (const auto& c : controls_) os << c << '\n';
  return os.str();
}

BpeVocab BpeVocab::from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(is, line)) throw FormatError("vocab file ends early", lineno);
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  auto count_after = [&](const std::string& l, std::string_view key) {
    if (!l.starts_with(std::string(key) + " ")) throw FormatError("expected '" + std::string(key) + " <n>'", lineno);
    try {
      return static_cast<std::size_t>(std::stoull(l.substr(key.size() + 1)));
    } catch (const std::exception&) {
      throw FormatError("bad count in '" + l + "'", lineno);
    }
  };
  if (next() != kVocabHeader) throw FormatError("not a vocab file (missing '" + std::string(kVocabHeader) + "')", 1);
  const std::size_t n_merges = count_after(next(), "merges");
  std::vector<std::pair<Bytes, Bytes>> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    const auto l = next();
    const auto sp = l.find(' ');
    if (sp == std::string::npos) throw FormatError("merge line needs two hex strings", lineno);
    merges.emplace_back(from_hex(l.substr(0, sp), lineno), from_hex(l.substr(sp + 1), lineno));
  }
  const std::size_t n_controls = count_after(next(), "controls");
  std::vector<std::string> controls;
  for (std::size_t i = 0; i < n_controls; ++i) controls.push_back(next());

  BpeVocab v(std::move(controls));
  for (const auto& [l, r] : merges) {
    const auto li = v.find(l), ri = v.find(r);
    if (li < 0 || ri < 0) throw FormatError("merge references a token defined later", lineno);
    try {
      v.add_merge(static_cast<TokenId>(li), static_cast<TokenId>(ri));
    } catch (const ParameterError& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  return v;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    words.push_back(text.substr(start, i - start));
  }
  return words;
}

BpeVocab bpe_train(std::span<const Bytes> corpus, std::size_t target_vocab, std::vector<std::string> control_names) {
  const std::size_t floor = kByteTokens + control_names.size();
  if (target_vocab < floor) {
    throw ParameterError("target vocabulary " + std::to_string(target_vocab) + " below " + std::to_string(floor) +
                         " (256 bytes + control tokens)");
  }
  BpeVocab vocab(std::move(control_names));

  std::map<Bytes, std::size_t> word_freq;
  for (const auto& doc : corpus)
    for (auto w : pretokenize(doc)) ++word_freq[Bytes(w)];
  std::vector<Word> words;
  std::vector<std::size_t> freqs;
  for (const auto& [w, f] : word_freq) {
    words.push_back(bytes_to_word(w));
    freqs.push_back(f);
  }

  while (vocab.size() < target_vocab) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> counts;
    for (std::size_t wi = 0; wi < words.size(); ++wi)
      for (std::size_t i = 0; i + 1 < words[wi].size(); ++i) counts[{words[wi][i], words[wi][i + 1]}] += freqs[wi];

    const std::pair<TokenId, TokenId>* best = nullptr;
    std::size_t best_count = 0;
    Bytes best_bytes;
    for (const auto& [pair, count] : counts) {
      if (count < 2 || count < best_count) continue;
      Bytes merged = vocab.token_bytes(pair.first) + vocab.token_bytes(pair.second);
      if (vocab.find(merged) >= 0) continue;
      // Pairs iterate in ascending id order, so equal bytes keep the lower pair.
      if (count > best_count || merged < best_bytes) {
        best = &pair;
        best_count = count;
        best_bytes = std::move(merged);
      }
    }
    if (!best) break;
    const auto [l, r] = *best;
    const TokenId id = vocab.add_merge(l, r);
    for (auto& w : words) merge_pair(w, l, r, id);
  }
  return vocab;
}

std::vector<TokenId> encode(const BpeVocab& vocab, std::string_view text) {
  std::vector<TokenId> out;
  std::unordered_map<std::string_view, Word> cache;
  for (auto piece : pretokenize(text)) {
    auto it = cache.find(piece);
    if (it == cache.end()) {
      Word w = bytes_to_word(piece);
      for (;;) {
        std::int64_t best_rank = -1;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
          const auto r = vocab.merge_rank(w[i], w[i + 1]);
          if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
        }
        if (best_rank < 0) break;
        const auto [l, r] = vocab.merges()[static_cast<std::size_t>(best_rank)];
        merge_pair(w, l, r, static_cast<TokenId>(kByteTokens + static_cast<std::size_t>(best_rank)));
      }
      it = cache.emplace(piece, std::move(w)).first;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

Bytes decode(const BpeVocab& vocab, std::span<const TokenId> ids) {
  Bytes out;
  for (auto id : ids) out += vocab.token_bytes(id);
  return out;
}

double compression_rate(const BpeVocab& vocab, std::span<const Bytes> corpus) {
  std::size_t bytes = 0, tokens = 0;
  for (const auto& doc : corpus) {
    bytes += doc.size();
    tokens += encode(vocab, doc).size();
  }
  if (corpus.empty() || tokens == 0) throw ParameterError("compression_rate needs a nonempty corpus");
  return static_cast<double>(bytes) / static_cast<double>(tokens);
}

}  // namespace qwen2
