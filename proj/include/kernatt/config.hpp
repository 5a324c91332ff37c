#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "kernatt/train.hpp"

namespace kernatt {

/// Everything a command needs: the task, the model built for it and the
/// optimiser settings.
///
/// Text form is one `key = value` per line; `#` starts a comment. Keys:
///
///   task.kind            copy | reverse | position_probe | char_lm
///   task.vocab_size      integer (char_lm: 256)
///   task.seq_len         integer
///   task.offset          integer, position_probe lag
///   task.corpus_path     path, char_lm only; relative to the config file
///   task.eval_sequences  integer, sequences per held-out split
///   task.eval_seed       integer
///   model.d_model, model.d_ff, model.n_layers, model.n_heads    integers
///   model.d_k, model.d_v  integers, total widths over heads (0: d_model)
///   model.dropout        real in [0, 1)
///   model.encoder_filter, model.cross_filter   seq2seq roles, full only
///   attention.kernel     linear | polynomial | exponential | rbf
///   attention.symmetric  bool
///   attention.eps        real, smoother denominator threshold
///   attention.log_domain bool, normalise exponential/rbf scores from logs (default true)
///   pe.mode              none | direct_sum | lookup_table | xl_product | symmetric_product
///   pe.table             sinusoidal | learned
///   pe.freq_denominator  512 | dk
///   pe.t_max             integer
///   filter.kind          full | causal | causal_with_memory | strided
///                        (default: full for position_probe, causal otherwise)
///   filter.mem_len, filter.stride, filter.window   integers
///   filter.include_self  bool
///   value.mode           with_pe | content_only
///   train.lr, train.grad_clip, train.target_accuracy   reals
///   train.steps, train.batch_size, train.seed, train.eval_every   integers
struct RunConfig {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Splits text into entries; rejects malformed lines and repeated keys.
std::vector<ConfigEntry> read_entries(const std::string& text);

/// Sets one field. Unknown keys and unparsable values raise ConfigError
/// carrying the line and key.
void apply_entry(RunConfig& cfg, const ConfigEntry& entry);

/// Derives architecture and vocabulary from the task, defaults the filter of
/// causal architectures to causal unless the keys were given, and validates.
void finalize(RunConfig& cfg, const std::set<std::string>& given);

/// Applies entries to a default config; relative corpus paths resolve
/// against base_dir.
RunConfig config_from_entries(std::vector<ConfigEntry> entries,
                              const std::filesystem::path& base_dir);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

std::string read_text_file(const std::string& path, const std::string& what);

/// All keys in schema order.
std::vector<std::string> config_keys();

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

}  // namespace kernatt
