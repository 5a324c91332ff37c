#include "kernatt/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

namespace kernatt {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::PositionProbe: return "position_probe";
    case TaskKind::CharLM: return "char_lm";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "position_probe") return TaskKind::PositionProbe;
  if (name == "char_lm") return TaskKind::CharLM;
  throw ConfigError("unknown task '" + name +
                    "' (expected copy, reverse, position_probe or char_lm)");
}

Architecture architecture_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse: return Architecture::Seq2Seq;
    case TaskKind::PositionProbe: return Architecture::Tagger;
    case TaskKind::CharLM: return Architecture::LM;
  }
  return Architecture::LM;
}

void TaskSpec::validate() const {
  if (seq_len == 0) throw ConfigError("task.seq_len must be positive");
  if (eval_sequences == 0) throw ConfigError("task.eval_sequences must be positive");
  switch (kind) {
    case TaskKind::CharLM:
      if (corpus_path.empty()) throw ConfigError("char_lm needs task.corpus_path");
      if (vocab_size != 256) throw ConfigError("char_lm works on raw bytes: vocab_size is 256");
      break;
    case TaskKind::PositionProbe:
      if (seq_len > vocab_size) {
        throw ConfigError("position_probe draws distinct tokens: seq_len must not exceed "
                          "vocab_size");
      }
      if (offset == 0 || offset >= seq_len) {
        throw ConfigError("position_probe offset must lie in [1, seq_len)");
      }
      [[fallthrough]];
    default:
      if (vocab_size < 2) throw ConfigError("task.vocab_size must be at least 2");
  }
}

TaskData::TaskData(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind != TaskKind::CharLM) return;
  std::ifstream in(spec_.corpus_path, std::ios::binary);
  if (!in) throw ConfigError("cannot read corpus '" + spec_.corpus_path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  corpus_.reserve(bytes.size());
  for (char c : bytes) corpus_.push_back(static_cast<unsigned char>(c));
  const std::size_t n = corpus_.size();
  train_end_ = n - n / 10;
  valid_end_ = train_end_ + (n - train_end_) / 2;
  const std::size_t window = spec_.seq_len + 1;
  if (train_end_ < window || valid_end_ - train_end_ < window || n - valid_end_ < window) {
    throw ConfigError("corpus '" + spec_.corpus_path + "' (" + std::to_string(n) +
                      " bytes) is too short for seq_len " + std::to_string(spec_.seq_len));
  }
}

std::size_t TaskData::vocab_size() const { return spec_.vocab_size; }

std::vector<int> TaskData::draw(Rng& rng, std::size_t lo, std::size_t hi) const {
  const std::size_t t = spec_.seq_len;
  const int v = static_cast<int>(spec_.vocab_size);
  switch (spec_.kind) {
    case TaskKind::PositionProbe: {
      std::vector<int> perm(spec_.vocab_size);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      perm.resize(t);
      return perm;
    }
    case TaskKind::CharLM: {
      std::uniform_int_distribution<std::size_t> start(lo, hi - t - 1);
      auto s = start(rng);
      return {corpus_.begin() + s, corpus_.begin() + s + t + 1};
    }
    default: {
      std::uniform_int_distribution<int> tok(0, v - 1);
      std::vector<int> seq(t);
      for (auto& x : seq) x = tok(rng);
      return seq;
    }
  }
}

Batch TaskData::make(const std::vector<std::vector<int>>& sequences) const {
  const std::size_t b = sequences.size(), t = spec_.seq_len;
  Batch out;
  out.inputs = {b, t, {}};
  out.targets.reserve(b * t);
  out.weights.assign(b * t, 1.0);
  const int bos = static_cast<int>(spec_.vocab_size);
  switch (spec_.kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
      out.src = {b, t, {}};
      for (const auto& s : sequences) {
        out.src.ids.insert(out.src.ids.end(), s.begin(), s.end());
        std::vector<int> target = s;
        if (spec_.kind == TaskKind::Reverse) std::reverse(target.begin(), target.end());
        out.inputs.ids.push_back(bos);
        out.inputs.ids.insert(out.inputs.ids.end(), target.begin(), target.end() - 1);
        out.targets.insert(out.targets.end(), target.begin(), target.end());
      }
      break;
    case TaskKind::PositionProbe:
      for (std::size_t n = 0; n < b; ++n) {
        const auto& s = sequences[n];
        out.inputs.ids.insert(out.inputs.ids.end(), s.begin(), s.end());
        for (std::size_t i = 0; i < t; ++i) {
          if (i < spec_.offset) {
            out.targets.push_back(0);
            out.weights[n * t + i] = 0.0;
          } else {
            out.targets.push_back(s[i - spec_.offset]);
          }
        }
      }
      break;
    case TaskKind::CharLM:
      for (const auto& s : sequences) {
        out.inputs.ids.insert(out.inputs.ids.end(), s.begin(), s.end() - 1);
        out.targets.insert(out.targets.end(), s.begin() + 1, s.end());
      }
      break;
  }
  return out;
}

Batch TaskData::sample(std::size_t batch, Rng& rng) const {
  if (batch == 0) throw ConfigError("batch size must be positive");
  std::vector<std::vector<int>> seqs;
  seqs.reserve(batch);
  for (std::size_t n = 0; n < batch; ++n) seqs.push_back(draw(rng, 0, train_end_));
  return make(seqs);
}

std::vector<Batch> TaskData::held_out(Split split, std::size_t batch_size) const {
  Rng rng(spec_.eval_seed * 2 + (split == Split::Test ? 1 : 0));
  std::size_t lo = train_end_, hi = valid_end_;
  if (split == Split::Test) {
    lo = valid_end_;
    hi = corpus_.size();
  }
  std::vector<Batch> out;
  std::vector<std::vector<int>> seqs;
  for (std::size_t n = 0; n < spec_.eval_sequences; ++n) {
    seqs.push_back(draw(rng, lo, hi));
    if (seqs.size() == batch_size || n + 1 == spec_.eval_sequences) {
      out.push_back(make(seqs));
      seqs.clear();
    }
  }
  return out;
}

Tensor batch_logits(const Model& model, const Batch& batch, Rng* dropout_rng) {
  Tensor logits;
  switch (model.config().arch) {
    case Architecture::LM: logits = model.lm_forward(batch.inputs, dropout_rng); break;
    case Architecture::Tagger: logits = model.tag_forward(batch.inputs, dropout_rng); break;
    case Architecture::Seq2Seq:
      logits = model.seq2seq_forward(batch.src, batch.inputs, dropout_rng);
      break;
  }
  return reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
}

}  // namespace kernatt
