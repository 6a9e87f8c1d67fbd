// SPDX-License-Identifier: Apache-2.0
#include "qwen2/decontam.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "qwen2/errors.hpp"
#include "qwen2/tokenizer.hpp"

namespace qwen2 {

namespace {

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool err = false;
  U8_APPEND(buf, len, U8_MAX_LENGTH, c, err);
  if (!err) out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

TokenSeq normalize(std::string_view text, const NormalizeOptions& opts, std::string source_id) {
  TokenSeq seq;
  seq.source_id = std::move(source_id);
  std::string current;
  auto flush = [&] {
    if (!current.empty()) seq.tokens.push_back(std::move(current));
    current.clear();
  };
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) continue;
    if (u_isUWhiteSpace(c)) {
      flush();
      continue;
    }
    if (U_GET_GC_MASK(c) & (U_GC_P_MASK | U_GC_S_MASK)) continue;
    append_utf8(current, opts.lowercase ? u_tolower(c) : c);
  }
  flush();

  if (opts.bpe) {
    std::vector<std::string> words = std::move(seq.tokens);
    seq.tokens.clear();
    for (const auto& w : words)
      for (auto id : encode(*opts.bpe, w)) seq.tokens.push_back(std::to_string(id));
  }
  return seq;
}

std::size_t lcs_len(const TokenSeq& a, const TokenSeq& b) {
  const auto& x = a.tokens;
  const auto& y = b.tokens;
  std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

bool lcs_passes(std::size_t lcs, std::size_t len_a, std::size_t len_b, const LcsCriterion& crit) {
  // Small slack so that e.g. 0.6 * 30 compares as exactly 18.
  constexpr double kSlack = 1e-9;
  return lcs >= crit.min_len &&
         static_cast<double>(lcs) + kSlack >= crit.min_ratio * static_cast<double>(std::min(len_a, len_b));
}

bool lcs_contaminated(const TokenSeq& train, const TokenSeq& test, const LcsCriterion& crit) {
  if (std::min(train.size(), test.size()) < crit.min_len) return false;
  return lcs_passes(lcs_len(train, test), train.size(), test.size(), crit);
}

namespace {

constexpr std::uint32_t kUnknownToken = 0xFFFFFFFFu;

std::uint64_t window_hash(const std::uint32_t* ids, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= ids[i];
    h *= 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return h;
}

}  // namespace

void NgramIndex::add(const TokenSeq& doc) {
  std::vector<std::uint32_t> ids;
  ids.reserve(doc.size());
  for (const auto& t : doc.tokens) {
    const auto [it, inserted] = ids_.emplace(t, static_cast<std::uint32_t>(ids_.size()));
    ids.push_back(it->second);
  }
  const auto d = static_cast<std::uint32_t>(docs_.size());
  if (ids.size() >= n_) {
    for (std::size_t s = 0; s + n_ <= ids.size(); ++s)
      windows_.emplace(window_hash(ids.data() + s, n_), std::make_pair(d, static_cast<std::uint32_t>(s)));
  }
  docs_.push_back(std::move(ids));
}

std::vector<std::uint32_t> NgramIndex::lookup(const TokenSeq& seq) const {
  std::vector<std::uint32_t> ids;
  ids.reserve(seq.size());
  for (const auto& t : seq.tokens) {
    const auto it = ids_.find(t);
    ids.push_back(it == ids_.end() ? kUnknownToken : it->second);
  }
  return ids;
}

std::optional<NgramMatch> NgramIndex::find(const TokenSeq& test) const {
  if (test.tokens.empty() || n_ == 0) return std::nullopt;
  const auto ids = lookup(test);
  if (ids.size() < n_) {
    if (std::find(ids.begin(), ids.end(), kUnknownToken) != ids.end()) return std::nullopt;
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      const auto it = std::search(docs_[d].begin(), docs_[d].end(), ids.begin(), ids.end());
      if (it != docs_[d].end()) {
        return NgramMatch{0, d, static_cast<std::size_t>(it - docs_[d].begin()), ids.size()};
      }
    }
    return std::nullopt;
  }
  for (std::size_t s = 0; s + n_ <= ids.size(); ++s) {
    const auto* w = ids.data() + s;
    const auto [lo, hi] = windows_.equal_range(window_hash(w, n_));
    for (auto it = lo; it != hi; ++it) {
      const auto [d, start] = it->second;
      if (std::equal(w, w + n_, docs_[d].begin() + start)) return NgramMatch{s, d, start, n_};
    }
  }
  return std::nullopt;
}

bool ngram_contaminated(const TokenSeq& test, const NgramIndex& index) { return index.find(test).has_value(); }

double ReportRow::percent() const {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(removed) / static_cast<double>(total);
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

const char* mode_name(FilterMode m) { return m == FilterMode::kTrainSideLcs ? "train-lcs" : "test-ngram"; }

/// Start in `a` of the leftmost canonical LCS alignment with `b`.
std::size_t lcs_first_match(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::uint32_t> suffix((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return suffix[i * (m + 1) + j]; };
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      at(i, j) = a[i] == b[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));
  std::size_t i = 0, j = 0;
  while (i < n && j < m && at(i, j) > 0) {
    if (a[i] == b[j]) return i;
    if (at(i + 1, j) == at(i, j)) ++i;
    else ++j;
  }
  return 0;
}

std::size_t lcs_ids(const std::vector<std::uint32_t>& x, const std::vector<std::uint32_t>& y) {
  std::vector<std::uint32_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

/// Size of the multiset intersection of two sorted id lists; an upper bound on LCS.
std::size_t shared_multiset(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++n;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return n;
}

struct Interned {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> sorted;
};

}  // namespace

std::string ContaminationReport::to_tsv() const {
  std::ostringstream os;
  os << "test_set\ttotal\tremoved\tpercent\n";
  for (const auto& r : rows) os << r.name << '\t' << r.total << '\t' << r.removed << '\t' << pct(r.percent()) << '\n';
  return os.str();
}

std::string ContaminationReport::to_text() const {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  const int w = static_cast<int>(width) + 2;
  std::ostringstream os;
  os << "mode: " << mode_name(mode) << '\n';
  os << std::left << std::setw(w) << "Test set" << std::right << std::setw(8) << "Total" << std::setw(10) << "Removed"
     << std::setw(27) << "Percent of Contamination" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(w) << r.name << std::right << std::setw(8) << r.total << std::setw(10) << r.removed
       << std::setw(26) << pct(r.percent()) << "%\n";
  }
  return os.str();
}

std::string ContaminationReport::verdicts_tsv() const {
  std::ostringstream os;
  os << "doc_id\trule\twindow_start\tmatched\n";
  for (const auto& v : verdicts) os << v.doc_id << '\t' << v.rule << '\t' << v.window_start << '\t' << v.matched_id << '\n';
  return os.str();
}

FilterResult filter_corpus(const std::vector<TokenSeq>& train, const std::vector<TestSet>& tests, FilterMode mode,
                           const FilterOptions& opts) {
  if (train.empty() || tests.empty()) throw ParameterError("filter_corpus needs nonempty training and test inputs");
  FilterResult res;
  res.report.mode = mode;

  if (mode == FilterMode::kTestSideNgram) {
    NgramIndex index(opts.ngram);
    for (const auto& d : train) index.add(d);
    for (const auto& set : tests) {
      ReportRow row{set.name, set.samples.size(), 0};
      for (const auto& s : set.samples) {
        if (const auto m = index.find(s)) {
          ++row.removed;
          res.removed.push_back(s.source_id);
          res.report.verdicts.push_back({s.source_id, "ngram", m->test_start, train[m->train_doc].source_id});
        } else {
          res.kept.push_back(s.source_id);
        }
      }
      res.report.rows.push_back(row);
    }
    return res;
  }

  std::unordered_map<std::string, std::uint32_t> vocab;
  auto intern = [&](const TokenSeq& s) {
    Interned out;
    for (const auto& t : s.tokens) out.ids.push_back(vocab.emplace(t, static_cast<std::uint32_t>(vocab.size())).first->second);
    out.sorted = out.ids;
    std::sort(out.sorted.begin(), out.sorted.end());
    return out;
  };
  std::vector<std::vector<Interned>> test_ids;
  for (const auto& set : tests) {
    auto& v = test_ids.emplace_back();
    for (const auto& s : set.samples) v.push_back(intern(s));
  }

  std::vector<ReportRow> per_set;
  for (const auto& set : tests) per_set.push_back({set.name, train.size(), 0});
  ReportRow all{"ALL", train.size(), 0};

  for (const auto& doc : train) {
    const auto d = intern(doc);
    bool hit = false;
    for (std::size_t si = 0; si < tests.size(); ++si) {
      bool set_hit = false;
      for (std::size_t k = 0; k < tests[si].samples.size() && !set_hit; ++k) {
        const auto& t = test_ids[si][k];
        if (std::min(d.ids.size(), t.ids.size()) < opts.lcs.min_len) continue;
        const auto bound = shared_multiset(d.sorted, t.sorted);
        if (!lcs_passes(bound, d.ids.size(), t.ids.size(), opts.lcs)) continue;
        if (!lcs_passes(lcs_ids(d.ids, t.ids), d.ids.size(), t.ids.size(), opts.lcs)) continue;
        set_hit = true;
        if (!hit) {
          res.report.verdicts.push_back(
              {doc.source_id, "lcs", lcs_first_match(d.ids, t.ids), tests[si].samples[k].source_id});
        }
        hit = true;
      }
      if (set_hit) ++per_set[si].removed;
    }
    if (hit) {
      ++all.removed;
      res.removed.push_back(doc.source_id);
    } else {
      res.kept.push_back(doc.source_id);
    }
  }
  res.report.rows = std::move(per_set);
  res.report.rows.push_back(all);
  return res;
}

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error("I/O error reading '" + p.string() + "'");
  return s;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

}  // namespace

std::vector<std::filesystem::path> list_text_files(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) return {path};
  if (!fs::is_directory(path, ec)) throw Error("no such file or directory '" + path.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(path, ec))
    if (e.is_regular_file()) out.push_back(e.path());
  if (ec) throw Error("cannot list '" + path.string() + "': " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TokenSeq> load_documents(const std::filesystem::path& path, bool records, const NormalizeOptions& opts) {
  std::vector<TokenSeq> docs;
  for (const auto& f : list_text_files(path)) {
    const auto text = read_file(f);
    const auto name = f.filename().string();
    if (!records) {
      docs.push_back(normalize(text, opts, name));
      continue;
    }
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
      docs.push_back(normalize(lines[i], opts, name + ":" + std::to_string(i + 1)));
    }
  }
  return docs;
}

std::vector<TestSet> load_test_sets(const std::filesystem::path& dir, const NormalizeOptions& opts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error("test set path '" + dir.string() + "' is not a directory");
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir, ec)) entries.push_back(e.path());
  if (ec) throw Error("cannot list '" + dir.string() + "': " + ec.message());
  std::sort(entries.begin(), entries.end());

  std::vector<TestSet> sets;
  for (const auto& e : entries) {
    const bool is_dir = fs::is_directory(e);
    TestSet set{is_dir ? e.filename().string() : e.stem().string(), {}};
    if (is_dir) {
      for (auto& d : load_documents(e, false, opts)) {
        d.source_id = set.name + "/" + d.source_id;
        set.samples.push_back(std::move(d));
      }
    } else if (fs::is_regular_file(e)) {
      set.samples = load_documents(e, true, opts);
    } else {
      continue;
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace qwen2
