#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "kernatt/train.hpp"

using namespace kernatt;

namespace {

ModelConfig model_for(const TaskSpec& task) {
  ModelConfig cfg;
  cfg.arch = architecture_for(task.kind);
  cfg.vocab_size = task.vocab_size;
  cfg.block.d_model = 16;
  cfg.block.d_ff = 32;
  cfg.block.n_layers = 1;
  cfg.block.n_heads = 2;
  cfg.block.attention.pe.mode = PEMode::SymmetricProduct;
  cfg.block.attention.symmetric = true;
  cfg.block.attention.filter.kind =
      cfg.arch == Architecture::Tagger ? FilterKind::Full : FilterKind::Causal;
  return cfg;
}

TaskSpec copy_task() {
  TaskSpec t;
  t.kind = TaskKind::Copy;
  t.vocab_size = 16;
  t.seq_len = 10;
  t.eval_sequences = 128;
  return t;
}

std::string write_corpus() {
  auto path = std::filesystem::temp_directory_path() / "kernatt_test_corpus.txt";
  std::ofstream out(path, std::ios::binary);
  for (int i = 0; i < 200; ++i) out << "the quick brown fox jumps over the lazy dog " << i << "\n";
  return path.string();
}

}  // namespace

TEST_CASE("uniform logits over 16 classes give perplexity 16") {
  auto logits = Tensor::zeros({5, 16});
  std::vector<int> targets{0, 3, 7, 15, 2};
  std::vector<double> weights(5, 1.0);
  auto m = metrics_from_logits(logits, targets, weights);
  CHECK(m.perplexity == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(m.cross_entropy == doctest::Approx(std::log(16.0)));
}

TEST_CASE("perfect predictions give accuracy 1 and perplexity 1") {
  std::vector<int> targets{1, 0, 2};
  std::vector<double> values(9, -1000.0);
  for (std::size_t i = 0; i < 3; ++i) values[i * 3 + targets[i]] = 1000.0;
  std::vector<double> weights(3, 1.0);
  auto m = metrics_from_logits(Tensor({3, 3}, values), targets, weights);
  CHECK(m.accuracy == 1.0);
  CHECK(m.perplexity == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-weight rows are ignored by the metrics") {
  std::vector<int> targets{0, 1};
  std::vector<double> weights{1.0, 0.0};
  auto m = metrics_from_logits(Tensor({2, 2}, {5, 0, 5, 0}), targets, weights);
  CHECK(m.accuracy == 1.0);
  CHECK(m.tokens == 1);
  std::vector<double> none{0.0, 0.0};
  CHECK_THROWS_AS(metrics_from_logits(Tensor({2, 2}, {5, 0, 5, 0}), targets, none),
                  DimensionError);
}

TEST_CASE("copy and reverse batches") {
  for (auto kind : {TaskKind::Copy, TaskKind::Reverse}) {
    auto spec = copy_task();
    spec.kind = kind;
    spec.seq_len = 4;
    TaskData task(spec);
    Rng rng(1);
    auto b = task.sample(3, rng);
    REQUIRE(b.src.ids.size() == 12);
    for (std::size_t n = 0; n < 3; ++n) {
      std::vector<int> src(b.src.ids.begin() + n * 4, b.src.ids.begin() + n * 4 + 4);
      auto target = src;
      if (kind == TaskKind::Reverse) std::reverse(target.begin(), target.end());
      CHECK(b.inputs.ids[n * 4] == 16);
      for (std::size_t i = 0; i < 4; ++i) CHECK(b.targets[n * 4 + i] == target[i]);
      for (std::size_t i = 1; i < 4; ++i) CHECK(b.inputs.ids[n * 4 + i] == target[i - 1]);
    }
  }
}

TEST_CASE("position probe targets the token offset places back") {
  TaskSpec spec;
  spec.kind = TaskKind::PositionProbe;
  spec.vocab_size = 16;
  spec.seq_len = 8;
  spec.offset = 3;
  TaskData task(spec);
  Rng rng(2);
  auto b = task.sample(4, rng);
  for (std::size_t n = 0; n < 4; ++n) {
    std::set<int> distinct(b.inputs.ids.begin() + n * 8, b.inputs.ids.begin() + n * 8 + 8);
    CHECK(distinct.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
      if (i < 3) {
        CHECK(b.weights[n * 8 + i] == 0.0);
      } else {
        CHECK(b.weights[n * 8 + i] == 1.0);
        CHECK(b.targets[n * 8 + i] == b.inputs.ids[n * 8 + i - 3]);
      }
    }
  }
  spec.offset = 8;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.offset = 3;
  spec.seq_len = 17;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("char lm windows stay inside their split") {
  TaskSpec spec;
  spec.kind = TaskKind::CharLM;
  spec.vocab_size = 256;
  spec.seq_len = 16;
  spec.corpus_path = write_corpus();
  spec.eval_sequences = 20;
  TaskData task(spec);
  Rng rng(3);
  auto b = task.sample(5, rng);
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t i = 0; i + 1 < 16; ++i)
      CHECK(b.targets[n * 16 + i] == b.inputs.ids[n * 16 + i + 1]);
  auto v1 = task.held_out(Split::Validation);
  auto v2 = task.held_out(Split::Validation);
  CHECK(v1[0].inputs.ids == v2[0].inputs.ids);
  auto t1 = task.held_out(Split::Test);
  CHECK(t1[0].inputs.ids != v1[0].inputs.ids);
  spec.corpus_path = "/nonexistent/corpus.txt";
  CHECK_THROWS_AS(TaskData{spec}, ConfigError);
}

TEST_CASE("untrained copy model is at chance") {
  auto spec = copy_task();
  spec.eval_sequences = 256;
  TaskData task(spec);
  auto model = fresh_model(model_for(spec), 11);
  auto m = evaluate(model, task);
  CHECK(m.tokens >= 1000);
  CHECK(std::abs(m.accuracy - 1.0 / 16.0) < 0.05);
}

TEST_CASE("lr = 0 keeps the logged loss bit-identical") {
  auto spec = copy_task();
  TaskData task(spec);
  auto model = fresh_model(model_for(spec), 12);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.steps = 6;
  tc.eval_every = 2;
  tc.batch_size = 8;
  std::ostringstream log;
  auto r = train(model, task, tc, &log);
  REQUIRE(r.log.size() == 4);
  for (const auto& rec : r.log) CHECK(rec.loss == r.log[0].loss);

  std::istringstream lines(log.str());
  std::string line;
  std::getline(lines, line);
  auto first = nlohmann::json::parse(line);
  CHECK(first["step"] == 0);
  CHECK(first["init"] == "fresh");
  CHECK(first["seed"] == tc.seed);
  for (const char* key : {"loss", "metric", "wall_ms"}) CHECK(first.contains(key));
}

TEST_CASE("same config and seed give identical loss curves") {
  auto spec = copy_task();
  TaskData task(spec);
  TrainConfig tc;
  tc.steps = 8;
  tc.eval_every = 4;
  tc.batch_size = 8;
  auto cfg = model_for(spec);
  cfg.block.dropout = 0.1;
  auto a = fresh_model(cfg, tc.seed);
  auto b = fresh_model(cfg, tc.seed);
  auto ra = train(a, task, tc);
  auto rb = train(b, task, tc);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss == rb.log[i].loss);
  CHECK(ra.log.back().loss != ra.log.front().loss);
}

TEST_CASE("linear kernel runs end with a failure status") {
  auto spec = copy_task();
  TaskData task(spec);
  auto cfg = model_for(spec);
  cfg.block.attention.kernel = KernelForm::Linear;
  cfg.block.attention.pe.mode = PEMode::None;
  auto model = fresh_model(cfg, 13);
  TrainConfig tc;
  tc.steps = 20;
  tc.batch_size = 8;
  std::ostringstream log;
  auto r = train(model, task, tc, &log);
  CHECK(r.diverged());
  CHECK((r.status == RunStatus::InvalidKernel || r.status == RunStatus::Diverged));
  auto last = log.str();
  last = last.substr(last.rfind('\n', last.size() - 2) + 1);
  auto rec = nlohmann::json::parse(last);
  CHECK(rec.contains("event"));
  CHECK(rec["step"] == r.failed_step);
}

TEST_CASE("target accuracy stops the run early") {
  auto spec = copy_task();
  TaskData task(spec);
  auto model = fresh_model(model_for(spec), 14);
  TrainConfig tc;
  tc.steps = 50;
  tc.eval_every = 5;
  tc.target_accuracy = 0.01;
  auto r = train(model, task, tc);
  CHECK(r.status == RunStatus::ReachedTarget);
  CHECK(r.steps_run == 0);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.lr = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.target_accuracy = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("a model must match its task") {
  auto spec = copy_task();
  TaskData task(spec);
  auto cfg = model_for(spec);
  cfg.arch = Architecture::LM;
  auto model = fresh_model(cfg, 1);
  CHECK_THROWS_AS(evaluate(model, task), ConfigError);
}
