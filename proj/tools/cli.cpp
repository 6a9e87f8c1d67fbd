// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "qwen2/decontam.hpp"
#include "qwen2/errors.hpp"
#include "qwen2/layers.hpp"
#include "qwen2/longctx.hpp"
#include "qwen2/model.hpp"
#include "qwen2/moe.hpp"
#include "qwen2/rng.hpp"
#include "qwen2/tokenizer.hpp"

namespace qwen2::cli {

namespace {

/// Diagnostics verbosity, from QWEN2CTL_LOG=quiet|info|debug.
class Log {
 public:
  enum Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

  explicit Log(std::ostream& err) : err_(err) {
    if (const char* v = std::getenv("QWEN2CTL_LOG")) {
      const std::string s(v);
      if (s == "quiet") level_ = kQuiet;
      else if (s == "debug") level_ = kDebug;
    }
  }

  void info(const std::string& msg) const {
    if (level_ >= kInfo) err_ << "[info] " << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (level_ >= kDebug) err_ << "[debug] " << msg << '\n';
  }
  void error(const std::string& msg) const { err_ << "error: " << msg << '\n'; }

 private:
  std::ostream& err_;
  Level level_ = kInfo;
};

/// Thrown for bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << data;
}

std::vector<std::size_t> parse_id_list(const std::string& s) {
  std::vector<std::size_t> ids;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    try {
      std::size_t used = 0;
      ids.push_back(std::stoull(cur, &used));
      if (used != cur.size()) throw std::invalid_argument(cur);
    } catch (const std::exception&) {
      throw UsageError("'" + cur + "' is not a token id");
    }
    cur.clear();
  };
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\n') flush();
    else cur += c;
  }
  flush();
  return ids;
}

std::string join_ids(const auto& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
  return os.str();
}

ModelConfig resolve_config(const std::string& preset_name, const std::string& config_path) {
  if (!config_path.empty()) return config_from_text(read_file(config_path));
  return preset(preset_name);
}

// ---- model ------------------------------------------------------------------

struct ModelDemoArgs {
  std::string preset = "nano";
  std::string weights;
  std::string prompt_ids;
  std::size_t max_new = 8;
  std::uint64_t seed = 0;
};

int model_demo(const ModelDemoArgs& a, std::ostream& out, const Log& log) {
  const auto prompt = parse_id_list(a.prompt_ids);
  if (prompt.empty()) throw UsageError("--prompt-ids must list at least one id");
  ModelConfig cfg;
  ModelWeights w;
  if (!a.weights.empty()) {
    std::tie(w, cfg) = load_weights(a.weights);
    out << "# seed=" << a.seed << " weights=" << a.weights << '\n';
  } else {
    cfg = preset(a.preset);
    out << "# seed=" << a.seed << " preset=" << cfg.name << '\n';
    log.info("building '" + cfg.name + "' with seed " + std::to_string(a.seed));
    w = build_model(cfg, a.seed);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto ids = greedy_decode(w, cfg, prompt, a.max_new);
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  log.debug("decoded " + std::to_string(ids.size() - prompt.size()) + " tokens in " + std::to_string(ms) + " ms");
  out << join_ids(ids) << '\n';
  return kOk;
}

int model_validate(const std::string& preset_name, const std::string& config_path, std::ostream& out) {
  const auto cfg = resolve_config(preset_name, config_path);
  const bool published = std::any_of(published_architectures().begin(), published_architectures().end(),
                                     [&](const auto& r) { return r.name == cfg.name; });
  if (!published) {
    cfg.validate();
    out << cfg.name << ": config valid (no published architecture row to compare)\n";
    return kOk;
  }
  bool all_ok = true;
  out << std::left << std::setw(26) << "field" << std::setw(12) << "expected" << std::setw(12) << "actual"
      << "status\n";
  for (const auto& c : check_against_published(cfg)) {
    all_ok &= c.ok;
    out << std::left << std::setw(26) << c.field << std::setw(12) << c.expected << std::setw(12) << c.actual
        << (c.ok ? "ok" : "MISMATCH") << '\n';
  }
  out << cfg.name << ": " << (all_ok ? "all fields match" : "validation FAILED") << '\n';
  return all_ok ? kOk : kValidationFailure;
}

int model_init(const std::string& preset_name, const std::string& config_path, std::uint64_t seed,
               const std::string& path, std::ostream& out, const Log& log) {
  const auto cfg = resolve_config(preset_name, config_path);
  out << "# seed=" << seed << " preset=" << cfg.name << '\n';
  log.info("building '" + cfg.name + "'");
  save_weights(build_model(cfg, seed), cfg, path);
  out << "wrote " << path << '\n';
  return kOk;
}

int config_show(const std::string& preset_name, const std::string& config_path, const std::string& format,
                std::ostream& out) {
  const auto cfg = resolve_config(preset_name, config_path);
  const auto text = config_to_text(cfg);
  if (format == "text") {
    out << text;
    return kOk;
  }
  out << "key\tvalue\n";
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    out << line.substr(0, eq) << '\t' << line.substr(eq + 3) << '\n';
  }
  return kOk;
}

// ---- tok --------------------------------------------------------------------

std::vector<Bytes> read_corpus(const std::vector<std::string>& paths) {
  std::vector<Bytes> docs;
  for (const auto& p : paths)
    for (const auto& f : list_text_files(p)) docs.push_back(read_file(f.string()));
  return docs;
}

struct TokTrainArgs {
  std::vector<std::string> corpus;
  std::size_t vocab_size = 512;
  std::string out_path;
  std::string controls;
};

int tok_train(const TokTrainArgs& a, std::ostream& out, const Log& log) {
  const auto corpus = read_corpus(a.corpus);
  auto controls = default_control_tokens();
  if (!a.controls.empty()) {
    controls.clear();
    std::istringstream is(a.controls);
    std::string name;
    while (std::getline(is, name, ',')) controls.push_back(name);
  }
  log.info("training on " + std::to_string(corpus.size()) + " documents");
  const auto vocab = bpe_train(corpus, a.vocab_size, controls);
  write_file(a.out_path, vocab.to_text());
  out << "merges\t" << vocab.merge_count() << '\n' << "vocab_size\t" << vocab.size() << '\n';
  if (!corpus.empty()) out << "compression_rate\t" << std::fixed << std::setprecision(4) << compression_rate(vocab, corpus) << '\n';
  return kOk;
}

int tok_encode(const std::string& vocab_path, const std::string& text, const std::string& in_path, std::ostream& out) {
  if (text.empty() == in_path.empty()) throw UsageError("give exactly one of --text or --in");
  const auto vocab = BpeVocab::from_text(read_file(vocab_path));
  out << join_ids(encode(vocab, in_path.empty() ? text : read_file(in_path))) << '\n';
  return kOk;
}

int tok_decode(const std::string& vocab_path, const std::string& ids_str, std::ostream& out) {
  const auto vocab = BpeVocab::from_text(read_file(vocab_path));
  std::vector<TokenId> ids;
  for (auto id : parse_id_list(ids_str)) {
    if (id > std::numeric_limits<TokenId>::max()) throw InputError("unknown token id " + std::to_string(id));
    ids.push_back(static_cast<TokenId>(id));
  }
  out << decode(vocab, ids);
  return kOk;
}

int tok_stats(const std::string& vocab_path, const std::vector<std::string>& corpus_paths, const std::string& format,
              std::ostream& out) {
  const auto vocab = BpeVocab::from_text(read_file(vocab_path));
  std::vector<std::pair<std::string, std::string>> rows = {
      {"vocab_size", std::to_string(vocab.size())},
      {"merges", std::to_string(vocab.merge_count())},
      {"control_tokens", std::to_string(vocab.control_names().size())},
  };
  if (!corpus_paths.empty()) {
    const auto corpus = read_corpus(corpus_paths);
    std::size_t bytes = 0, tokens = 0;
    for (const auto& d : corpus) {
      bytes += d.size();
      tokens += encode(vocab, d).size();
    }
    std::ostringstream rate;
    rate << std::fixed << std::setprecision(4) << compression_rate(vocab, corpus);
    rows.emplace_back("bytes", std::to_string(bytes));
    rows.emplace_back("tokens", std::to_string(tokens));
    rows.emplace_back("compression_rate", rate.str());
  }
  for (const auto& [k, v] : rows) out << k << (format == "tsv" ? "\t" : ": ") << v << '\n';
  return kOk;
}

// ---- moe --------------------------------------------------------------------

struct UpcycleArgs {
  std::string in_path, out_path;
  std::size_t experts = 0, expert_dim = 0, active = 0, shared = 0;
  std::uint64_t seed = 0;
  float reinit_std = kDefaultReinitStd;
};

int moe_upcycle(const UpcycleArgs& a, std::ostream& out, const Log& log) {
  auto [dense, dense_cfg] = load_weights(a.in_path);
  const std::size_t active = a.active ? a.active : std::min<std::size_t>(2, a.experts);
  const MoeConfig moe{a.experts, active, a.shared, a.expert_dim, dense_cfg.hidden};
  out << "# seed=" << a.seed << " source=" << dense_cfg.name << '\n';
  log.info("upcycling " + std::to_string(dense_cfg.n_layers) + " layers");
  auto [cfg, w] = upcycle_model(dense_cfg, dense, moe, a.seed, a.reinit_std);
  save_weights(w, cfg, a.out_path);
  out << "replicas\t" << replication_count(moe.n_routed, moe.expert_dim, dense_cfg.ffn_intermediate) << '\n'
      << "expert_params_per_layer\t" << moe.expert_param_count() << '\n'
      << "active_expert_params_per_layer\t" << moe.active_expert_param_count() << '\n'
      << "wrote\t" << a.out_path << '\n';
  return kOk;
}

// ---- decontam ---------------------------------------------------------------

struct ScanArgs {
  std::string train, tests, mode = "test-ngram", vocab, verdicts, format = "text";
  bool records = false, no_lowercase = false;
  std::size_t ngram = 13, lcs_min = 13;
  double lcs_ratio = 0.6;
};

int decontam_scan(const ScanArgs& a, std::ostream& out, const Log& log) {
  NormalizeOptions norm;
  norm.lowercase = !a.no_lowercase;
  std::optional<BpeVocab> vocab;
  if (!a.vocab.empty()) {
    vocab = BpeVocab::from_text(read_file(a.vocab));
    norm.bpe = &*vocab;
  }
  const auto train = load_documents(a.train, a.records, norm);
  const auto tests = load_test_sets(a.tests, norm);
  log.info("loaded " + std::to_string(train.size()) + " training documents and " + std::to_string(tests.size()) +
           " test sets");
  FilterOptions opts;
  opts.ngram = a.ngram;
  opts.lcs = {a.lcs_min, a.lcs_ratio};
  const auto mode = a.mode == "train-lcs" ? FilterMode::kTrainSideLcs : FilterMode::kTestSideNgram;
  const auto res = filter_corpus(train, tests, mode, opts);
  out << (a.format == "tsv" ? res.report.to_tsv() : res.report.to_text());
  if (!a.verdicts.empty()) write_file(a.verdicts, res.report.verdicts_tsv());
  log.debug("removed " + std::to_string(res.removed.size()) + ", kept " + std::to_string(res.kept.size()));
  return kOk;
}

// ---- attn -------------------------------------------------------------------

struct BenchArgs {
  std::size_t seq = 64, chunk = 64, window = 0, q_heads = 4, kv_heads = 2, head_dim = 16, repeat = 3;
  double rope_base = 1000000.0;
  std::uint64_t seed = 0;
  std::string format = "text";
};

int attn_bench(const BenchArgs& a, std::ostream& out) {
  const AttentionParams ap{a.q_heads, a.kv_heads, a.head_dim, true};
  ap.validate();
  const DcaParams dca{a.chunk, a.window ? a.window : std::max<std::size_t>(1, a.chunk / 2)};
  dca.validate();
  const RopeParams rope{a.rope_base, a.head_dim, 0};
  Rng rng(a.seed);
  const auto q = sample_normal(rng, Shape{a.q_heads, a.seq, a.head_dim}, 0.0f, 1.0f);
  const auto k = sample_normal(rng, Shape{a.kv_heads, a.seq, a.head_dim}, 0.0f, 1.0f);
  const auto v = sample_normal(rng, Shape{a.kv_heads, a.seq, a.head_dim}, 0.0f, 1.0f);
  std::vector<std::size_t> pos(a.seq);
  for (std::size_t t = 0; t < a.seq; ++t) pos[t] = t;

  auto time_ms = [&](auto&& fn, Tensor& result) {
    double best = 1e300;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, a.repeat); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      result = fn();
      best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  Tensor vanilla, chunked;
  const double t_vanilla = time_ms([&] { return gqa_attention(q, k, v, ap, pos, rope); }, vanilla);
  const double t_dca = time_ms([&] { return dca_attention(q, k, v, ap, dca, rope, std::nullopt); }, chunked);
  const float diff = max_abs_diff(vanilla, chunked);

  std::ostringstream diff_s;
  diff_s << std::scientific << std::setprecision(3) << diff;
  if (a.format == "tsv") {
    out << "# seed=" << a.seed << '\n'
        << "seq\tchunk\twindow\tvanilla_ms\tdca_ms\tmax_diff\tsingle_chunk\n"
        << a.seq << '\t' << dca.chunk_size << '\t' << dca.local_window << '\t' << std::fixed << std::setprecision(3)
        << t_vanilla << '\t' << t_dca << '\t' << diff_s.str() << '\t' << (a.seq <= a.chunk ? "yes" : "no") << '\n';
  } else {
    out << "# seed=" << a.seed << '\n'
        << "seq " << a.seq << ", chunk " << dca.chunk_size << ", window " << dca.local_window << ", heads "
        << a.q_heads << "/" << a.kv_heads << " x " << a.head_dim << '\n'
        << std::fixed << std::setprecision(3) << "vanilla: " << t_vanilla << " ms\n"
        << "dca:     " << t_dca << " ms\n"
        << "max-diff: " << diff_s.str() << '\n';
    if (a.seq <= a.chunk) out << "single chunk: " << (diff <= 1e-5f ? "identical within 1e-5" : "MISMATCH") << '\n';
  }
  return a.seq <= a.chunk && diff > 1e-5f ? kValidationFailure : kOk;
}

// Depth-first help of every command, each with its full option list.
void print_all_help(const CLI::App& app, const std::string& prev, std::ostream& out) {
  out << app.help(prev);
  const std::string path = prev.empty() ? app.get_name() : prev + " " + app.get_name();
  for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    out << "\n";
    print_all_help(*sub, path, out);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"Qwen2 architecture mechanisms: models, tokenizer, MoE upcycling, decontamination", "qwen2ctl"};
  app.add_flag("--help-all", "Show help for every subcommand and option");
  app.require_subcommand(1);

  auto* model = app.add_subcommand("model", "Build, validate and run decoder models");
  model->require_subcommand(1);
  ModelDemoArgs demo;
  auto* demo_cmd = model->add_subcommand("demo", "Greedy decode with a preset or saved model");
  demo_cmd->add_option("--preset", demo.preset, "Model preset")->capture_default_str();
  demo_cmd->add_option("--weights", demo.weights, "Load weights from a .qw2t file instead of a preset");
  demo_cmd->add_option("--prompt-ids", demo.prompt_ids, "Prompt token ids, comma or space separated")->required();
  demo_cmd->add_option("--max-new", demo.max_new, "Tokens to generate")->capture_default_str();
  demo_cmd->add_option("--seed", demo.seed, "Weight initialization seed")->capture_default_str();

  std::string validate_preset, validate_config;
  auto* validate_cmd = model->add_subcommand("validate", "Check a preset against its published architecture");
  auto* vp = validate_cmd->add_option("--preset", validate_preset, "Model preset");
  auto* vc = validate_cmd->add_option("--config", validate_config, "Config file (key = value lines)");
  vp->excludes(vc);
  validate_cmd->require_option(1);

  std::string init_preset = "nano", init_config, init_out;
  std::uint64_t init_seed = 0;
  auto* init_cmd = model->add_subcommand("init", "Write randomly initialized weights");
  auto* ip = init_cmd->add_option("--preset", init_preset, "Model preset")->capture_default_str();
  init_cmd->add_option("--config", init_config, "Config file instead of a preset")->excludes(ip);
  init_cmd->add_option("--seed", init_seed, "Initialization seed")->capture_default_str();
  init_cmd->add_option("--out", init_out, "Output .qw2t path")->required();

  auto* config = app.add_subcommand("config", "Inspect model configurations");
  config->require_subcommand(1);
  std::string show_preset = "nano", show_config, show_format = "text";
  auto* show_cmd = config->add_subcommand("show", "Print a configuration");
  auto* sp = show_cmd->add_option("--preset", show_preset, "Model preset")->capture_default_str();
  show_cmd->add_option("--config", show_config, "Config file instead of a preset")->excludes(sp);
  show_cmd->add_option("--format", show_format, "Output format")
      ->check(CLI::IsMember({"text", "tsv"}))
      ->capture_default_str();

  auto* tok = app.add_subcommand("tok", "Byte-level BPE tokenizer");
  tok->require_subcommand(1);
  TokTrainArgs train;
  auto* train_cmd = tok->add_subcommand("train", "Train a vocabulary");
  train_cmd->add_option("--corpus", train.corpus, "Corpus files or directories")->required();
  train_cmd->add_option("--vocab-size", train.vocab_size, "Target vocabulary incl. bytes and controls")
      ->capture_default_str();
  train_cmd->add_option("--out", train.out_path, "Output vocab file")->required();
  train_cmd->add_option("--controls", train.controls, "Comma separated control token names");

  std::string enc_vocab, enc_text, enc_in;
  auto* encode_cmd = tok->add_subcommand("encode", "Encode text to ids");
  encode_cmd->add_option("--vocab", enc_vocab, "Vocab file")->required();
  encode_cmd->add_option("--text", enc_text, "Text to encode");
  encode_cmd->add_option("--in", enc_in, "File to encode");

  std::string dec_vocab, dec_ids;
  auto* decode_cmd = tok->add_subcommand("decode", "Decode ids to bytes");
  decode_cmd->add_option("--vocab", dec_vocab, "Vocab file")->required();
  decode_cmd->add_option("--ids", dec_ids, "Token ids, comma or space separated")->required();

  std::string stats_vocab, stats_format = "text";
  std::vector<std::string> stats_corpus;
  auto* stats_cmd = tok->add_subcommand("stats", "Vocabulary statistics and compression rate");
  stats_cmd->add_option("--vocab", stats_vocab, "Vocab file")->required();
  stats_cmd->add_option("--corpus", stats_corpus, "Corpus files or directories");
  stats_cmd->add_option("--format", stats_format, "Output format")
      ->check(CLI::IsMember({"text", "tsv"}))
      ->capture_default_str();

  auto* moe = app.add_subcommand("moe", "Mixture-of-experts tools");
  moe->require_subcommand(1);
  UpcycleArgs up;
  auto* up_cmd = moe->add_subcommand("upcycle", "Initialize an MoE model from a dense one");
  up_cmd->add_option("--in", up.in_path, "Dense .qw2t model")->required();
  up_cmd->add_option("--out", up.out_path, "Output .qw2t model")->required();
  up_cmd->add_option("--experts", up.experts, "Routed experts")->required()->check(CLI::PositiveNumber);
  up_cmd->add_option("--expert-dim", up.expert_dim, "Expert intermediate size")->required()->check(CLI::PositiveNumber);
  up_cmd->add_option("--active", up.active, "Activated experts per token (default min(2, experts))");
  up_cmd->add_option("--shared", up.shared, "Shared experts")->capture_default_str();
  up_cmd->add_option("--seed", up.seed, "Shuffle and re-initialization seed")->capture_default_str();
  up_cmd->add_option("--reinit-std", up.reinit_std, "Std of re-initialized parameters")->capture_default_str();

  auto* decontam = app.add_subcommand("decontam", "Contamination analysis");
  decontam->require_subcommand(1);
  ScanArgs scan;
  auto* scan_cmd = decontam->add_subcommand("scan", "Scan training data against test sets");
  scan_cmd->add_option("--train", scan.train, "Training file or directory")->required();
  scan_cmd->add_option("--tests", scan.tests, "Directory of test sets")->required();
  scan_cmd->add_option("--mode", scan.mode, "train-lcs removes training docs; test-ngram removes test samples")
      ->check(CLI::IsMember({"train-lcs", "test-ngram"}))
      ->capture_default_str();
  scan_cmd->add_flag("--records", scan.records, "Treat each training line as a document");
  scan_cmd->add_flag("--no-lowercase", scan.no_lowercase, "Keep case during normalization");
  scan_cmd->add_option("--ngram", scan.ngram, "n-gram length")->capture_default_str()->check(CLI::PositiveNumber);
  scan_cmd->add_option("--lcs-min", scan.lcs_min, "Minimum LCS length")->capture_default_str();
  scan_cmd->add_option("--lcs-ratio", scan.lcs_ratio, "Minimum LCS / shorter length")->capture_default_str();
  scan_cmd->add_option("--vocab", scan.vocab, "Tokenize normalized text with this BPE vocab");
  scan_cmd->add_option("--verdicts", scan.verdicts, "Write per-sample verdicts (TSV) here");
  scan_cmd->add_option("--format", scan.format, "Report format")
      ->check(CLI::IsMember({"text", "tsv"}))
      ->capture_default_str();

  auto* attn = app.add_subcommand("attn", "Attention micro-benchmarks");
  attn->require_subcommand(1);
  BenchArgs bench;
  auto* bench_cmd = attn->add_subcommand("bench", "Vanilla vs dual chunk attention");
  bench_cmd->add_option("--seq", bench.seq, "Sequence length")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--chunk", bench.chunk, "DCA chunk size")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--window", bench.window, "DCA local window (default chunk/2)");
  bench_cmd->add_option("--q-heads", bench.q_heads, "Query heads")->capture_default_str();
  bench_cmd->add_option("--kv-heads", bench.kv_heads, "KV heads")->capture_default_str();
  bench_cmd->add_option("--head-dim", bench.head_dim, "Head size")->capture_default_str();
  bench_cmd->add_option("--rope-base", bench.rope_base, "RoPE base")->capture_default_str();
  bench_cmd->add_option("--repeat", bench.repeat, "Timing repetitions (best is reported)")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Input seed")->capture_default_str();
  bench_cmd->add_option("--format", bench.format, "Output format")
      ->check(CLI::IsMember({"text", "tsv"}))
      ->capture_default_str();

  if (std::find(args.begin(), args.end(), "--help-all") != args.end()) {
    print_all_help(app, "", out);
    return kOk;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (demo_cmd->parsed()) return model_demo(demo, out, log);
    if (validate_cmd->parsed()) return model_validate(validate_preset, validate_config, out);
    if (init_cmd->parsed()) return model_init(init_preset, init_config, init_seed, init_out, out, log);
    if (show_cmd->parsed()) return config_show(show_preset, show_config, show_format, out);
    if (train_cmd->parsed()) return tok_train(train, out, log);
    if (encode_cmd->parsed()) return tok_encode(enc_vocab, enc_text, enc_in, out);
    if (decode_cmd->parsed()) return tok_decode(dec_vocab, dec_ids, out);
    if (stats_cmd->parsed()) return tok_stats(stats_vocab, stats_corpus, stats_format, out);
    if (up_cmd->parsed()) return moe_upcycle(up, out, log);
    if (scan_cmd->parsed()) return decontam_scan(scan, out, log);
    if (bench_cmd->parsed()) return attn_bench(bench, out);
  } catch (const UsageError& e) {
    log.error(e.what());
    return kUsageError;
  } catch (const ConfigError& e) {
    log.error(e.what());
    return kValidationFailure;
  } catch (const Error& e) {
    log.error(e.what());
    return kValidationFailure;
  }
  return kUsageError;
}

}  // namespace qwen2::cli
