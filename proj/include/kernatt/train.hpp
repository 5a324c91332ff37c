#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "kernatt/tasks.hpp"

namespace kernatt {

struct TrainConfig {
  double lr = 0.5;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::size_t eval_every = 100;
  double target_accuracy = 0.0;  // stop once validation accuracy reaches it; 0 disables

  void validate() const;
};

struct Metrics {
  double cross_entropy = 0.0;
  double perplexity = 0.0;
  double accuracy = 0.0;
  std::size_t tokens = 0;
};

/// Weighted metrics over logits [n x vocab].
Metrics metrics_from_logits(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> weights);

Metrics evaluate(const Model& model, const TaskData& task, Split split = Split::Test);

struct LogRecord {
  std::size_t step = 0;
  double loss = 0.0;    // validation cross-entropy
  double metric = 0.0;  // validation token accuracy
  double wall_ms = 0.0;
};

enum class RunStatus { Completed, ReachedTarget, Diverged, InvalidKernel };

std::string to_string(RunStatus status);

struct TrainResult {
  RunStatus status = RunStatus::Completed;
  std::size_t steps_run = 0;
  std::size_t failed_step = 0;  // set for Diverged / InvalidKernel
  std::string message;
  std::vector<LogRecord> log;
  Metrics validation;
  double wall_s = 0.0;

  bool diverged() const {
    return status == RunStatus::Diverged || status == RunStatus::InvalidKernel;
  }
};

/// Model initialised from the config and seed alone. Every run starts from
/// such a fresh model; nothing is carried over between runs.
Model fresh_model(const ModelConfig& cfg, std::uint64_t seed);

/// Plain SGD on the task's cross-entropy. Records one log line per eval_every
/// steps (and one at step 0) and streams it as JSON lines when log is given.
/// Numerical failures end the run with a status instead of an exception.
TrainResult train(Model& model, const TaskData& task, const TrainConfig& tc,
                  std::ostream* log = nullptr);

}  // namespace kernatt
