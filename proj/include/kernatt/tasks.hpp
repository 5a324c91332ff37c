#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kernatt/model.hpp"

namespace kernatt {

enum class TaskKind { Copy, Reverse, PositionProbe, CharLM };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);
Architecture architecture_for(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab_size = 16;
  std::size_t seq_len = 10;
  std::size_t offset = 3;           // PositionProbe: target[i] = input[i - offset]
  std::string corpus_path;          // CharLM
  std::size_t eval_sequences = 256;  // per held-out split
  std::uint64_t eval_seed = 0x5eed;

  void validate() const;
};

enum class Split { Validation, Test };

/// One training or evaluation batch. For seq2seq tasks src is the encoder
/// input and inputs the shifted decoder input; otherwise src is empty.
/// targets and weights are row-major [batch x len] over the logits positions.
struct Batch {
  TokenBatch src;
  TokenBatch inputs;
  std::vector<int> targets;
  std::vector<double> weights;
};

/// Generates batches for a task. CharLM reads the corpus once and keeps the
/// last tenth of it for the held-out splits.
class TaskData {
 public:
  explicit TaskData(TaskSpec spec);

  const TaskSpec& spec() const { return spec_; }
  std::size_t vocab_size() const;

  Batch sample(std::size_t batch, Rng& rng) const;
  /// Fixed held-out sequences drawn from eval_seed, in batches of at most batch_size.
  std::vector<Batch> held_out(Split split, std::size_t batch_size = 64) const;

 private:
  Batch make(const std::vector<std::vector<int>>& sequences) const;
  std::vector<int> draw(Rng& rng, std::size_t lo, std::size_t hi) const;

  TaskSpec spec_;
  std::vector<int> corpus_;
  std::size_t train_end_ = 0;
  std::size_t valid_end_ = 0;
};

/// Logits of the model on the batch, flattened to [positions x vocab].
Tensor batch_logits(const Model& model, const Batch& batch, Rng* dropout_rng = nullptr);

}  // namespace kernatt
