#include "cytocap/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cytocap/errors.hpp"
#include "cytocap/hash.hpp"
#include "cytocap/text.hpp"

namespace cytocap {

namespace {

enum class Kind { Str, Int, Real, Bool };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* value;
};

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"run.seed", Kind::Int, "1"},
      {"run.out", Kind::Str, "out"},
      {"run.areas", Kind::Int, "57"},

      {"corpus.dir", Kind::Str, "data/corpus"},
      {"corpus.citations", Kind::Str, "data/corpus/citations.tsv"},
      {"corpus.seeds", Kind::Str, "data/corpus/seeds.lst"},
      {"corpus.depth", Kind::Int, "1"},
      {"corpus.chunk_chars", Kind::Int, "1000"},
      {"corpus.overlap_chars", Kind::Int, "100"},

      {"llm.mode", Kind::Str, "stub"},
      {"llm.endpoint", Kind::Str, "http://127.0.0.1:8000/v1/chat/completions"},
      {"llm.model", Kind::Str, "local-model"},
      {"llm.timeout_s", Kind::Real, "30"},
      {"llm.max_retries", Kind::Int, "3"},
      {"llm.api_key_env", Kind::Str, ""},
      {"llm.max_in_flight", Kind::Int, "4"},

      {"synth.dim", Kind::Int, "64"},
      {"synth.classes", Kind::Int, "159"},
      {"synth.min_angle_deg", Kind::Real, "60"},
      {"synth.sigma", Kind::Real, "0.1"},
      {"synth.patches_per_area", Kind::Int, "300"},
      {"synth.patches_per_other_class", Kind::Int, "20"},

      {"pairs.ratio", Kind::Int, "10"},
      {"pairs.statements_per_caption", Kind::Int, "3"},
      {"pairs.composer", Kind::Str, "template"},

      {"split.train", Kind::Int, "1920"},
      {"split.val", Kind::Int, "96"},
      {"split.test", Kind::Int, "300"},

      {"model.hidden_dim", Kind::Int, "64"},
      {"model.blocks", Kind::Int, "8"},
      {"model.heads", Kind::Int, "4"},
      {"model.max_seq_len", Kind::Int, "96"},
      {"model.mlp_ratio", Kind::Int, "4"},
      {"model.vision_tokens", Kind::Int, "4"},
      {"model.insert_every", Kind::Int, "4"},
      {"model.proj_hidden_dim", Kind::Int, "256"},
      {"model.xattn_heads", Kind::Int, "1"},
      {"model.pretrain_steps", Kind::Int, "0"},

      {"train.epochs", Kind::Int, "6"},
      {"train.lr", Kind::Real, "1e-3"},
      {"train.batch_size", Kind::Int, "32"},
      {"train.clip_norm", Kind::Real, "1.0"},
      {"train.threads", Kind::Int, "1"},

      {"eval.max_new_tokens", Kind::Int, "80"},
      {"eval.bootstrap_iterations", Kind::Int, "10000"},
      {"eval.level", Kind::Real, "0.95"},
      {"eval.options", Kind::Int, "8"},
      {"eval.statements_per_option", Kind::Int, "5"},
      {"eval.judge", Kind::Str, "oracle"},

      {"qa.options", Kind::Int, "4"},
      {"qa.generator", Kind::Str, "stub"},
      {"qa.filter_positional", Kind::Bool, "true"},
      {"qa.filter_duplicates", Kind::Bool, "true"},
      {"qa.filter_answer_in_stem", Kind::Bool, "true"},
      {"qa.answerers", Kind::Str, "answer-key,random"},
      {"qa.scoreboard_reference", Kind::Str, "data/reference/qa_published.json"},
  };
  return specs;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : key_specs())
    if (key == s.key) return &s;
  return nullptr;
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

bool parse_int(const std::string& v, std::int64_t& out) {
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && p == v.data() + v.size();
}

bool parse_real(const std::string& v, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    return used == v.size();
  } catch (const std::exception&) {
    return false;
  }
}

// Sections read by each stage (run.out never enters a hash).
const std::map<std::string, std::vector<std::string>>& stage_sections() {
  static const std::map<std::string, std::vector<std::string>> m = {
      {"distill", {"run.seed", "run.areas", "corpus.", "llm."}},
      {"synth", {"run.seed", "run.areas", "synth."}},
      {"pair", {"pairs.", "split."}},
      {"train", {"model.", "train."}},
      {"eval", {"eval."}},
      {"qa-gen", {"qa.options", "qa.generator", "qa.filter_"}},
      {"qa-score", {"qa.answerers", "qa.scoreboard_reference"}},
  };
  return m;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : key_specs()) values_[s.key] = s.value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw ValidationError("unknown config key '" + key + "'");
  bool b;
  std::int64_t i;
  double d;
  switch (spec->kind) {
    case Kind::Int:
      if (!parse_int(value, i) || i < 0) {
        throw ValidationError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
      }
      break;
    case Kind::Real:
      if (!parse_real(value, d)) throw ValidationError("config key '" + key + "' expects a number, got '" + value + "'");
      break;
    case Kind::Bool:
      if (!parse_bool(value, b)) throw ValidationError("config key '" + key + "' expects true/false, got '" + value + "'");
      break;
    case Kind::Str:
      break;
  }
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
  set(text::trim(assignment.substr(0, eq)), text::trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::parse(const std::string& source) {
  RunConfig cfg;
  std::istringstream in(source);
  std::string section;
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    std::string line = raw;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = text::trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + "unterminated section header");
      section = text::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected key = value");
    std::string key = text::trim(line.substr(0, eq));
    std::string value = text::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (!value.empty() && value.front() == '"') {
      throw ValidationError(where + "unterminated string");
    }
    if (!section.empty()) key = section + "." + key;
    try {
      cfg.set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  std::int64_t v = 0;
  parse_int(str(key), v);
  return v;
}

std::size_t RunConfig::size(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) throw ValidationError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::u64(const std::string& key) const { return static_cast<std::uint64_t>(integer(key)); }

double RunConfig::real(const std::string& key) const {
  double v = 0;
  parse_real(str(key), v);
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  bool b = false;
  parse_bool(str(key), b);
  return b;
}

std::filesystem::path RunConfig::path(const std::string& key) const { return std::filesystem::path(str(key)); }

std::string RunConfig::to_text() const {
  std::string out, section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    const KeySpec* spec = find_spec(k);
    out += k.substr(dot + 1) + " = " + (spec->kind == Kind::Str ? "\"" + v + "\"" : v) + "\n";
  }
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

const std::vector<std::string>& RunConfig::stages() {
  static const std::vector<std::string> s = {"distill", "synth", "pair", "train", "eval", "qa-gen", "qa-score"};
  return s;
}

const std::vector<std::string>& RunConfig::upstream(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> m = {
      {"distill", {}},         {"synth", {}},          {"pair", {"distill", "synth"}}, {"train", {"pair"}},
      {"eval", {"train"}},     {"qa-gen", {"distill"}}, {"qa-score", {"qa-gen"}},
  };
  const auto it = m.find(stage);
  if (it == m.end()) throw ValidationError("unknown stage '" + stage + "'");
  return it->second;
}

std::string RunConfig::stage_hash(const std::string& stage) const {
  std::string material = "stage=" + stage + "\n";
  for (const auto& up : upstream(stage)) material += "upstream " + up + "=" + stage_hash(up) + "\n";
  for (const auto& prefix : stage_sections().at(stage)) {
    for (const auto& [k, v] : values_) {
      if (k.compare(0, prefix.size(), prefix) == 0 && (prefix.back() == '.' || prefix.back() == '_' || k == prefix)) {
        material += k + "=" + v + "\n";
      }
    }
  }
  return sha256_hex(material).substr(0, 16);
}

nlohmann::json output_header(const RunConfig& config, const std::string& stage) {
  return {{"stage", stage}, {"config_hash", config.stage_hash(stage)}, {"config", config.to_json()}};
}

void check_header(const nlohmann::json& header, const RunConfig& config, const std::string& stage,
                  const std::filesystem::path& source) {
  if (!header.is_object() || !header.contains("config_hash") || !header.contains("stage")) {
    throw ValidationError("'" + source.string() + "' has no provenance header");
  }
  if (header["stage"] != stage) {
    throw ValidationError("'" + source.string() + "' was written by stage '" + header["stage"].get<std::string>() +
                          "', expected '" + stage + "'");
  }
  const std::string expected = config.stage_hash(stage);
  const std::string found = header["config_hash"].get<std::string>();
  if (found != expected) {
    throw ValidationError("'" + source.string() + "' was produced with config hash " + found +
                          " but the current configuration expects " + expected + "; rerun '" + stage + "'");
  }
}

}  // namespace cytocap
