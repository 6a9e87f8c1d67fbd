// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "qwen2/errors.hpp"
#include "qwen2/model.hpp"

namespace qwen2 {

void ModelConfig::validate() const {
  auto fail = [&](const std::string& msg) { throw ConfigError("config '" + name + "': " + msg); };
  if (hidden == 0 || n_layers == 0 || vocab_size == 0 || max_ctx == 0) {
    fail("hidden, n_layers, vocab_size and max_ctx must be positive");
  }
  try {
    attention().validate();
  } catch (const ParameterError& e) {
    fail(e.what());
  }
  if (!moe && ffn_intermediate == 0) fail("ffn_intermediate must be positive for a dense model");
  if (regular_tokens + control_tokens > vocab_size) {
    fail("regular_tokens + control_tokens (" + std::to_string(regular_tokens + control_tokens) +
         ") exceed vocab_size " + std::to_string(vocab_size));
  }
  if (eos_id >= vocab_size) fail("eos_id " + std::to_string(eos_id) + " outside vocabulary");
  if (!(rope_base >= 1.0)) fail("rope_base must be >= 1");
  if (!(rms_eps > 0.0f)) fail("rms_eps must be > 0");
  if (moe) {
    moe->validate();
    if (moe->hidden != hidden) fail("moe.hidden differs from hidden");
  }
  try {
    if (yarn) yarn->validate();
    if (dca) dca->validate();
  } catch (const ParameterError& e) {
    fail(e.what());
  }
}

namespace {

ModelConfig table_preset(std::string name, std::size_t hidden, std::size_t layers, std::size_t q, std::size_t kv,
                         std::size_t head, std::size_t inter, bool tie, std::string tokens) {
  ModelConfig c;
  c.name = std::move(name);
  c.hidden = hidden;
  c.n_layers = layers;
  c.n_q_heads = q;
  c.n_kv_heads = kv;
  c.head_dim = head;
  c.ffn_intermediate = inter;
  c.tie_embeddings = tie;
  c.vocab_size = 151646;
  c.regular_tokens = 151643;
  c.control_tokens = 3;
  c.eos_id = 151645;
  c.rope_base = 1000000.0;
  c.max_ctx = 32768;
  c.trained_tokens = std::move(tokens);
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"qwen2-0.5b", "qwen2-1.5b", "qwen2-7b", "qwen2-72b", "qwen2-57b-a14b", "nano", "nano-moe"};
}

ModelConfig preset(const std::string& name) {
  if (name == "qwen2-0.5b") return table_preset(name, 896, 24, 14, 2, 64, 4864, true, "12T");
  if (name == "qwen2-1.5b") return table_preset(name, 1536, 28, 12, 2, 128, 8960, true, "7T");
  if (name == "qwen2-7b") return table_preset(name, 3584, 28, 28, 4, 128, 18944, false, "7T");
  if (name == "qwen2-72b") return table_preset(name, 8192, 80, 64, 8, 128, 29568, false, "7T");
  if (name == "qwen2-57b-a14b") {
    // Intermediate size of the MoE row is per expert; the dense FFN slot is unused.
    auto c = table_preset(name, 3584, 28, 28, 4, 128, 2560, false, "4.5T");
    c.moe = MoeConfig{64, 8, 8, 2560, 3584};
    return c;
  }
  if (name == "nano" || name == "nano-moe") {
    ModelConfig c;
    c.name = name;
    c.trained_tokens = "0";
    if (name == "nano-moe") {
      c.moe = MoeConfig{4, 2, 1, 32, c.hidden};
      c.tie_embeddings = false;
    }
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

const std::vector<ArchitectureRow>& published_architectures() {
  static const std::vector<ArchitectureRow> rows = {
      {"qwen2-0.5b", 896, 24, 14, 2, 64, 4864, 0, 0, 0, true, 151646, "12T"},
      {"qwen2-1.5b", 1536, 28, 12, 2, 128, 8960, 0, 0, 0, true, 151646, "7T"},
      {"qwen2-7b", 3584, 28, 28, 4, 128, 18944, 0, 0, 0, false, 151646, "7T"},
      {"qwen2-72b", 8192, 80, 64, 8, 128, 29568, 0, 0, 0, false, 151646, "7T"},
      {"qwen2-57b-a14b", 3584, 28, 28, 4, 128, 2560, 64, 8, 8, false, 151646, "4.5T"},
  };
  return rows;
}

std::vector<FieldCheck> check_against_published(const ModelConfig& cfg) {
  const ArchitectureRow* row = nullptr;
  for (const auto& r : published_architectures())
    if (r.name == cfg.name) row = &r;
  if (!row) throw ConfigError("no published architecture named '" + cfg.name + "'");

  std::vector<FieldCheck> out;
  auto num = [&](const char* field, std::size_t expected, std::size_t actual) {
    out.push_back({field, std::to_string(expected), std::to_string(actual), expected == actual});
  };
  num("hidden", row->hidden, cfg.hidden);
  num("layers", row->layers, cfg.n_layers);
  num("query_heads", row->q_heads, cfg.n_q_heads);
  num("kv_heads", row->kv_heads, cfg.n_kv_heads);
  num("head_size", row->head_size, cfg.head_dim);
  const bool is_moe = row->routed_experts > 0;
  num("intermediate", row->intermediate, is_moe && cfg.moe ? cfg.moe->expert_dim : cfg.ffn_intermediate);
  num("routed_experts", row->routed_experts, cfg.moe ? cfg.moe->n_routed : 0);
  num("activated_experts", row->activated_experts, cfg.moe ? cfg.moe->k_active : 0);
  num("shared_experts", row->shared_experts, cfg.moe ? cfg.moe->n_shared : 0);
  out.push_back({"embedding_tying", row->embedding_tying ? "true" : "false", cfg.tie_embeddings ? "true" : "false",
                 row->embedding_tying == cfg.tie_embeddings});
  num("vocab_size", row->vocab_size, cfg.vocab_size);
  out.push_back({"trained_tokens", row->trained_tokens, cfg.trained_tokens, row->trained_tokens == cfg.trained_tokens});
  num("query_width==hidden", cfg.hidden, cfg.q_width());
  num("regular+control<=vocab", 1, cfg.regular_tokens + cfg.control_tokens <= cfg.vocab_size ? 1 : 0);
  bool valid = true;
  std::string why = "ok";
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    valid = false;
    why = e.what();
  }
  out.push_back({"config_valid", "ok", why, valid});
  return out;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

std::string fmt_float(float v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<float>::max_digits10);
  os << v;
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace

std::string config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "name = " << c.name << '\n'
     << "hidden = " << c.hidden << '\n'
     << "n_layers = " << c.n_layers << '\n'
     << "n_q_heads = " << c.n_q_heads << '\n'
     << "n_kv_heads = " << c.n_kv_heads << '\n'
     << "head_dim = " << c.head_dim << '\n'
     << "ffn_intermediate = " << c.ffn_intermediate << '\n'
     << "tie_embeddings = " << (c.tie_embeddings ? "true" : "false") << '\n'
     << "vocab_size = " << c.vocab_size << '\n'
     << "regular_tokens = " << c.regular_tokens << '\n'
     << "control_tokens = " << c.control_tokens << '\n'
     << "eos_id = " << c.eos_id << '\n'
     << "rope_base = " << fmt_double(c.rope_base) << '\n'
     << "rms_eps = " << fmt_float(c.rms_eps) << '\n'
     << "qkv_bias = " << (c.qkv_bias ? "true" : "false") << '\n'
     << "max_ctx = " << c.max_ctx << '\n'
     << "trained_tokens = " << c.trained_tokens << '\n';
  if (c.moe) {
    os << "moe.n_routed = " << c.moe->n_routed << '\n'
       << "moe.k_active = " << c.moe->k_active << '\n'
       << "moe.n_shared = " << c.moe->n_shared << '\n'
       << "moe.expert_dim = " << c.moe->expert_dim << '\n';
  }
  if (c.yarn) {
    os << "yarn.scale = " << fmt_double(c.yarn->scale) << '\n'
       << "yarn.native_ctx = " << c.yarn->native_ctx << '\n'
       << "yarn.beta_fast = " << fmt_double(c.yarn->beta_fast) << '\n'
       << "yarn.beta_slow = " << fmt_double(c.yarn->beta_slow) << '\n'
       << "yarn.mscale_coeff = " << fmt_double(c.yarn->mscale_coeff) << '\n';
  }
  if (c.dca) {
    os << "dca.chunk_size = " << c.dca->chunk_size << '\n' << "dca.local_window = " << c.dca->local_window << '\n';
  }
  return os.str();
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig c;
  std::set<std::string> seen;
  MoeConfig moe;
  YarnParams yarn;
  DcaParams dca;
  bool has_moe = false, has_yarn = false, has_dca = false;
  std::set<std::string> moe_keys;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size_field = [](std::size_t& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_number<std::size_t>(k, v); };
  };
  auto dbl_field = [](double& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_number<double>(k, v); };
  };
  auto bool_field = [](bool& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_bool(k, v); };
  };
  auto str_field = [](std::string& f) -> Setter { return [&f](const std::string&, const std::string& v) { f = v; }; };

  const std::map<std::string, Setter> setters = {
      {"name", str_field(c.name)},
      {"hidden", size_field(c.hidden)},
      {"n_layers", size_field(c.n_layers)},
      {"n_q_heads", size_field(c.n_q_heads)},
      {"n_kv_heads", size_field(c.n_kv_heads)},
      {"head_dim", size_field(c.head_dim)},
      {"ffn_intermediate", size_field(c.ffn_intermediate)},
      {"tie_embeddings", bool_field(c.tie_embeddings)},
      {"vocab_size", size_field(c.vocab_size)},
      {"regular_tokens", size_field(c.regular_tokens)},
      {"control_tokens", size_field(c.control_tokens)},
      {"eos_id", size_field(c.eos_id)},
      {"rope_base", dbl_field(c.rope_base)},
      {"rms_eps", [&c](const std::string& k, const std::string& v) { c.rms_eps = parse_number<float>(k, v); }},
      {"qkv_bias", bool_field(c.qkv_bias)},
      {"max_ctx", size_field(c.max_ctx)},
      {"trained_tokens", str_field(c.trained_tokens)},
      {"moe.n_routed", size_field(moe.n_routed)},
      {"moe.k_active", size_field(moe.k_active)},
      {"moe.n_shared", size_field(moe.n_shared)},
      {"moe.expert_dim", size_field(moe.expert_dim)},
      {"yarn.scale", dbl_field(yarn.scale)},
      {"yarn.native_ctx", size_field(yarn.native_ctx)},
      {"yarn.beta_fast", dbl_field(yarn.beta_fast)},
      {"yarn.beta_slow", dbl_field(yarn.beta_slow)},
      {"yarn.mscale_coeff", dbl_field(yarn.mscale_coeff)},
      {"dca.chunk_size", size_field(dca.chunk_size)},
      {"dca.local_window", size_field(dca.local_window)},
  };

  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    it->second(key, value);
    if (key.starts_with("moe.")) {
      has_moe = true;
      moe_keys.insert(key);
    }
    has_yarn |= key.starts_with("yarn.");
    has_dca |= key.starts_with("dca.");
  }
  if (has_moe) {
    if (moe_keys.size() != 4) throw ConfigError("config: moe section needs all of n_routed, k_active, n_shared, expert_dim");
    moe.hidden = c.hidden;
    c.moe = moe;
  }
  if (has_yarn) c.yarn = yarn;
  if (has_dca) {
    if (!seen.contains("dca.local_window")) dca.local_window = dca.chunk_size / 2;
    c.dca = dca;
  }
  c.validate();
  return c;
}

}  // namespace qwen2
