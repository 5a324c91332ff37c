#include "kernatt/train.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

#include "kernatt/nn_ops.hpp"

namespace kernatt {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite value >= 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    throw ConfigError("train.target_accuracy must lie in [0, 1]");
  }
}

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Completed: return "completed";
    case RunStatus::ReachedTarget: return "reached_target";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::InvalidKernel: return "invalid_kernel";
  }
  return "?";
}

Metrics metrics_from_logits(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> weights) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || targets.size() != weights.size()) {
    throw DimensionError("metrics_from_logits: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  auto x = logits.data();
  double ce = 0.0, correct = 0.0, total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double* row = x.data() + i * v;
    std::size_t best = 0;
    double mx = row[0];
    for (std::size_t c = 1; c < v; ++c)
      if (row[c] > mx) {
        mx = row[c];
        best = c;
      }
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
    ce += weights[i] * (std::log(z) + mx - row[targets[i]]);
    correct += weights[i] * (static_cast<int>(best) == targets[i] ? 1.0 : 0.0);
    total += weights[i];
    ++tokens;
  }
  if (total <= 0.0) throw DimensionError("metrics_from_logits: all weights are zero");
  Metrics m;
  m.cross_entropy = ce / total;
  m.perplexity = std::exp(m.cross_entropy);
  m.accuracy = correct / total;
  m.tokens = tokens;
  return m;
}

namespace {

Metrics evaluate_batches(const Model& model, const std::vector<Batch>& batches) {
  double ce = 0.0, acc = 0.0, total = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : batches) {
    auto m = metrics_from_logits(batch_logits(model, b), b.targets, b.weights);
    double w = 0.0;
    for (double x : b.weights) w += x;
    ce += m.cross_entropy * w;
    acc += m.accuracy * w;
    total += w;
    tokens += m.tokens;
  }
  Metrics out;
  out.cross_entropy = ce / total;
  out.perplexity = std::exp(out.cross_entropy);
  out.accuracy = acc / total;
  out.tokens = tokens;
  return out;
}

void check_compatible(const Model& model, const TaskData& task) {
  const auto& cfg = model.config();
  if (cfg.arch != architecture_for(task.spec().kind) || cfg.vocab_size != task.vocab_size()) {
    throw ConfigError("model (" + to_string(cfg.arch) + ", vocab " +
                      std::to_string(cfg.vocab_size) + ") does not fit task " +
                      to_string(task.spec().kind) + " with vocab " +
                      std::to_string(task.vocab_size()));
  }
}

}  // namespace

Metrics evaluate(const Model& model, const TaskData& task, Split split) {
  check_compatible(model, task);
  return evaluate_batches(model, task.held_out(split));
}

Model fresh_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return Model::init(cfg, rng);
}

TrainResult train(Model& model, const TaskData& task, const TrainConfig& tc, std::ostream* log) {
  tc.validate();
  check_compatible(model, task);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(clock::now() - start).count();
  };

  TrainResult result;
  const auto validation = task.held_out(Split::Validation);
  Rng data_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(tc.seed ^ 0xd1b54a32d192ed03ULL);

  auto emit = [&](std::size_t step, const Metrics& m, bool first) {
    LogRecord rec{step, m.cross_entropy, m.accuracy, elapsed_ms()};
    result.log.push_back(rec);
    result.validation = m;
    if (!log) return;
    nlohmann::json j{{"step", rec.step}, {"loss", rec.loss}, {"metric", rec.metric},
                     {"wall_ms", rec.wall_ms}};
    if (first) {
      j["seed"] = tc.seed;
      j["init"] = "fresh";
    }
    *log << j.dump() << '\n';
    log->flush();
  };
  auto fail = [&](RunStatus status, std::size_t step, const std::string& what) {
    result.status = status;
    result.failed_step = step;
    result.message = what;
    if (log) {
      *log << nlohmann::json{{"step", step}, {"event", to_string(status)}, {"message", what}}.dump()
           << '\n';
      log->flush();
    }
  };
  auto reached = [&](const Metrics& m) {
    return tc.target_accuracy > 0.0 && m.accuracy >= tc.target_accuracy;
  };

  try {
    auto m0 = evaluate_batches(model, validation);
    emit(0, m0, true);
    if (reached(m0)) result.status = RunStatus::ReachedTarget;
  } catch (const InvalidKernelError& e) {
    fail(RunStatus::InvalidKernel, 0, e.what());
  } catch (const NumericFailure& e) {
    fail(RunStatus::Diverged, 0, e.what());
  }

  for (std::size_t step = 1;
       step <= tc.steps && result.status == RunStatus::Completed; ++step) {
    try {
      auto batch = task.sample(tc.batch_size, data_rng);
      Tape tape;
      Model view = model;
      std::vector<Tensor> leaves;
      view.visit([&](const std::string&, Tensor& t) {
        t = tape.watch(t);
        leaves.push_back(t);
      });
      auto loss = cross_entropy(batch_logits(view, batch, &dropout_rng), batch.targets,
                                batch.weights);
      if (!std::isfinite(loss.item())) throw NonFiniteError("training loss is not finite");
      backward(loss);

      double norm2 = 0.0;
      for (const auto& t : leaves)
        for (double g : t.grad()) norm2 += g * g;
      if (!std::isfinite(norm2)) throw NonFiniteError("gradient norm is not finite");
      const double norm = std::sqrt(norm2);
      double step_size = tc.lr;
      if (tc.grad_clip > 0.0 && norm > tc.grad_clip) step_size *= tc.grad_clip / norm;

      std::size_t k = 0;
      model.visit([&](const std::string&, Tensor& t) {
        auto g = leaves[k++].grad();
        auto w = t.mutable_data();
        if (g.empty()) return;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step_size * g[i];
      });
      result.steps_run = step;

      if (step % tc.eval_every == 0 || step == tc.steps) {
        auto m = evaluate_batches(model, validation);
        emit(step, m, false);
        if (!std::isfinite(m.cross_entropy)) {
          fail(RunStatus::Diverged, step, "validation loss is not finite");
        } else if (reached(m)) {
          result.status = RunStatus::ReachedTarget;
        }
      }
    } catch (const InvalidKernelError& e) {
      fail(RunStatus::InvalidKernel, step, e.what());
    } catch (const NumericFailure& e) {
      fail(RunStatus::Diverged, step, e.what());
    }
  }
  result.wall_s = elapsed_ms() / 1000.0;
  return result;
}

}  // namespace kernatt
