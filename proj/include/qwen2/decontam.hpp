// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qwen2 {

class BpeVocab;

/// Normalized word tokens of one document.
struct TokenSeq {
  std::vector<std::string> tokens;
  std::string source_id;

  std::size_t size() const { return tokens.size(); }
};

struct NormalizeOptions {
  bool lowercase = true;
  /// When set, normalized words are re-tokenized with this BPE vocabulary and
  /// each BPE id becomes one token.
  const BpeVocab* bpe = nullptr;
};

/// Lowercase, drop Unicode punctuation (P*) and symbol (S*) code points,
/// split on whitespace runs. Invalid UTF-8 bytes are dropped.
TokenSeq normalize(std::string_view text, const NormalizeOptions& opts = {}, std::string source_id = {});

std::size_t lcs_len(const TokenSeq& a, const TokenSeq& b);

struct LcsCriterion {
  std::size_t min_len = 13;
  double min_ratio = 0.6;
};

/// |LCS| >= min_len and |LCS| >= min_ratio * min(|train|, |test|).
bool lcs_contaminated(const TokenSeq& train, const TokenSeq& test, const LcsCriterion& crit = {});
bool lcs_passes(std::size_t lcs, std::size_t len_a, std::size_t len_b, const LcsCriterion& crit = {});

struct NgramMatch {
  std::size_t test_start;   // first token of the matched window in the test sample
  std::size_t train_doc;    // index of the training document
  std::size_t train_start;  // first token of the window in that document
  std::size_t length;
};

/// Hash index of every contiguous n-token window of a training corpus.
/// Hash hits are confirmed token by token, so lookups have no false positives.
class NgramIndex {
 public:
  explicit NgramIndex(std::size_t n = 13) : n_(n) {}

  void add(const TokenSeq& doc);
  std::size_t n() const { return n_; }
  std::size_t doc_count() const { return docs_.size(); }

  /// First window of `test` present in the index. Samples shorter than n
  /// match only when the whole sample occurs contiguously in some document.
  std::optional<NgramMatch> find(const TokenSeq& test) const;

 private:
  std::size_t n_;
  std::vector<std::vector<std::uint32_t>> docs_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::unordered_multimap<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> windows_;

  std::vector<std::uint32_t> lookup(const TokenSeq& seq) const;
};

bool ngram_contaminated(const TokenSeq& test, const NgramIndex& index);

enum class FilterMode { kTrainSideLcs, kTestSideNgram };

struct TestSet {
  std::string name;
  std::vector<TokenSeq> samples;
};

struct Verdict {
  std::string doc_id;
  std::string rule;  // "lcs" or "ngram"
  std::size_t window_start = 0;
  std::string matched_id;
};

struct ReportRow {
  std::string name;
  std::size_t total = 0;
  std::size_t removed = 0;

  /// removed / total as a percentage, 0 for an empty row.
  double percent() const;
};

struct ContaminationReport {
  FilterMode mode = FilterMode::kTestSideNgram;
  std::vector<ReportRow> rows;
  std::vector<Verdict> verdicts;

  /// Tab-separated: test_set, total, removed, percent (one decimal).
  std::string to_tsv() const;
  std::string to_text() const;
  std::string verdicts_tsv() const;
};

struct FilterOptions {
  std::size_t ngram = 13;
  LcsCriterion lcs;
};

struct FilterResult {
  std::vector<std::string> kept;     // document ids
  std::vector<std::string> removed;  // document ids
  ContaminationReport report;
};

/// Train-side mode drops training documents with an LCS hit against any test
/// sample; test-side mode drops test samples with an n-gram hit in training.
FilterResult filter_corpus(const std::vector<TokenSeq>& train, const std::vector<TestSet>& tests, FilterMode mode,
                           const FilterOptions& opts = {});

/// Sorted regular files of a directory, or the path itself if it is a file.
std::vector<std::filesystem::path> list_text_files(const std::filesystem::path& path);

/// Documents of a path: one per file, or one per nonempty line when `records`.
std::vector<TokenSeq> load_documents(const std::filesystem::path& path, bool records,
                                     const NormalizeOptions& opts = {});

/// Every entry of `dir` is one test set named after its file stem or directory
/// name: a file holds one sample per line, a subdirectory one sample per file.
std::vector<TestSet> load_test_sets(const std::filesystem::path& dir, const NormalizeOptions& opts = {});

}  // namespace qwen2
