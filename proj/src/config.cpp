#include "kernatt/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace kernatt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(KEY, MEMBER)                                            \
  Field {                                                                  \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_size(v); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }        \
  }
#define REAL_FIELD(KEY, MEMBER)                                            \
  Field {                                                                  \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_real(v); }, \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                   \
  }
#define BOOL_FIELD(KEY, MEMBER)                                            \
  Field {                                                                  \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(v); }, \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                   \
  }
#define ENUM_FIELD(KEY, MEMBER, PARSE)                                   \
  Field {                                                                \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = PARSE(v); }, \
        [](const RunConfig& c) { return to_string(c.MEMBER); }           \
  }

FreqDenominator parse_freq(const std::string& v) {
  if (v == "512") return FreqDenominator::Fixed512;
  if (v == "dk") return FreqDenominator::Dk;
  throw ConfigError("expected 512 or dk, got '" + v + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ENUM_FIELD("task.kind", task.kind, parse_task_kind),
      SIZE_FIELD("task.vocab_size", task.vocab_size),
      SIZE_FIELD("task.seq_len", task.seq_len),
      SIZE_FIELD("task.offset", task.offset),
      Field{"task.corpus_path", [](RunConfig& c, const std::string& v) { c.task.corpus_path = v; },
            [](const RunConfig& c) { return c.task.corpus_path; }},
      SIZE_FIELD("task.eval_sequences", task.eval_sequences),
      Field{"task.eval_seed",
            [](RunConfig& c, const std::string& v) { c.task.eval_seed = to_u64(v); },
            [](const RunConfig& c) { return std::to_string(c.task.eval_seed); }},
      SIZE_FIELD("model.d_model", model.block.d_model),
      SIZE_FIELD("model.d_ff", model.block.d_ff),
      SIZE_FIELD("model.n_layers", model.block.n_layers),
      SIZE_FIELD("model.n_heads", model.block.n_heads),
      SIZE_FIELD("model.d_k", model.block.attention.d_k),
      SIZE_FIELD("model.d_v", model.block.attention.d_v),
      REAL_FIELD("model.dropout", model.block.dropout),
      ENUM_FIELD("model.encoder_filter", model.encoder_filter.kind, parse_filter_kind),
      ENUM_FIELD("model.cross_filter", model.cross_filter.kind, parse_filter_kind),
      ENUM_FIELD("attention.kernel", model.block.attention.kernel, parse_kernel_form),
      BOOL_FIELD("attention.symmetric", model.block.attention.symmetric),
      REAL_FIELD("attention.eps", model.block.attention.eps),
      BOOL_FIELD("attention.log_domain", model.block.attention.log_domain),
      ENUM_FIELD("pe.mode", model.block.attention.pe.mode, parse_pe_mode),
      ENUM_FIELD("pe.table", model.block.attention.pe.table, parse_pe_table),
      Field{"pe.freq_denominator",
            [](RunConfig& c, const std::string& v) {
              c.model.block.attention.pe.freq_denominator = parse_freq(v);
            },
            [](const RunConfig& c) -> std::string {
              return c.model.block.attention.pe.freq_denominator == FreqDenominator::Dk ? "dk"
                                                                                        : "512";
            }},
      SIZE_FIELD("pe.t_max", model.block.attention.pe.t_max),
      ENUM_FIELD("filter.kind", model.block.attention.filter.kind, parse_filter_kind),
      SIZE_FIELD("filter.mem_len", model.block.attention.filter.mem_len),
      SIZE_FIELD("filter.stride", model.block.attention.filter.stride),
      SIZE_FIELD("filter.window", model.block.attention.filter.window),
      BOOL_FIELD("filter.include_self", model.block.attention.filter.include_self),
      ENUM_FIELD("value.mode", model.block.attention.value, parse_value_mode),
      REAL_FIELD("train.lr", train.lr),
      SIZE_FIELD("train.steps", train.steps),
      SIZE_FIELD("train.batch_size", train.batch_size),
      Field{"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      REAL_FIELD("train.grad_clip", train.grad_clip),
      SIZE_FIELD("train.eval_every", train.eval_every),
      REAL_FIELD("train.target_accuracy", train.target_accuracy),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef ENUM_FIELD

}  // namespace

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  if (model.arch != architecture_for(task.kind)) {
    throw ConfigError("task " + to_string(task.kind) + " runs on a " +
                      to_string(architecture_for(task.kind)) + " model");
  }
  const auto& pe = model.block.attention.pe;
  if (pe.table == PETableKind::Learned && pe.mode != PEMode::None && task.seq_len > pe.t_max) {
    throw ConfigError("learned positional table holds " + std::to_string(pe.t_max) +
                          " positions but sequences have " + std::to_string(task.seq_len),
                      0, "pe.t_max");
  }
}

std::vector<ConfigEntry> read_entries(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto hash = raw.find('#');
    auto body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    ConfigEntry e{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), line};
    if (e.key.empty()) throw ConfigError("missing key before '='", line);
    if (e.value.empty()) throw ConfigError("missing value", line, e.key);
    if (!seen.insert(e.key).second) throw ConfigError("key given twice", line, e.key);
    out.push_back(std::move(e));
  }
  return out;
}

void apply_entry(RunConfig& cfg, const ConfigEntry& entry) {
  for (const auto& f : fields()) {
    if (f.key != entry.key) continue;
    try {
      f.set(cfg, entry.value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.message(), entry.line, entry.key);
    }
    return;
  }
  throw ConfigError("unknown key", entry.line, entry.key);
}

void finalize(RunConfig& cfg, const std::set<std::string>& given) {
  if (cfg.task.kind == TaskKind::CharLM && !given.count("task.vocab_size")) {
    cfg.task.vocab_size = 256;
  }
  cfg.model.arch = architecture_for(cfg.task.kind);
  if (!given.count("filter.kind") && cfg.model.arch != Architecture::Tagger) {
    cfg.model.block.attention.filter.kind = FilterKind::Causal;
  }
  cfg.model.vocab_size = cfg.task.vocab_size;
  cfg.validate();
}

RunConfig parse_config(const std::string& text) {
  return config_from_entries(read_entries(text), {});
}

RunConfig config_from_entries(std::vector<ConfigEntry> entries,
                              const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::set<std::string> given;
  for (auto& e : entries) {
    if (e.key == "task.corpus_path" && !base_dir.empty() &&
        std::filesystem::path(e.value).is_relative()) {
      e.value = (base_dir / e.value).string();
    }
    apply_entry(cfg, e);
    given.insert(e.key);
  }
  finalize(cfg, given);
  return cfg;
}

std::string read_text_file(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + what + " '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig load_config(const std::string& path) {
  return config_from_entries(read_entries(read_text_file(path, "config")),
                             std::filesystem::path(path).parent_path());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    auto v = f.get(cfg);
    if (v.empty()) continue;
    out += f.key + " = " + v + "\n";
  }
  return out;
}

}  // namespace kernatt
