#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kernatt/checkpoint.hpp"
#include "kernatt/config.hpp"
#include "kernatt/sweep.hpp"

using namespace kernatt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "kernatt_unit";
  fs::create_directories(dir);
  return dir / name;
}

const char* kSmallCopy = R"(
# small copy model
task.kind = copy
task.vocab_size = 8
task.seq_len = 5
task.eval_sequences = 32
model.d_model = 16
model.d_ff = 32
model.n_layers = 1
model.n_heads = 2
attention.symmetric = true
pe.mode = symmetric_product   # trailing comment
train.steps = 4
train.eval_every = 2
train.batch_size = 8
)";

void check_config_error(const std::string& text, int line, const std::string& field) {
  try {
    parse_config(text);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.line() == line);
    CHECK(e.field() == field);
  }
}

}  // namespace

TEST_CASE("config parses with comments and derived fields") {
  auto cfg = parse_config(kSmallCopy);
  CHECK(cfg.task.kind == TaskKind::Copy);
  CHECK(cfg.model.arch == Architecture::Seq2Seq);
  CHECK(cfg.model.vocab_size == 8);
  CHECK(cfg.model.block.attention.pe.mode == PEMode::SymmetricProduct);
  CHECK(cfg.model.block.attention.filter.kind == FilterKind::Causal);
  CHECK(cfg.train.steps == 4);

  auto probe = parse_config("task.kind = position_probe\n");
  CHECK(probe.model.arch == Architecture::Tagger);
  CHECK(probe.model.block.attention.filter.kind == FilterKind::Full);
}

TEST_CASE("config text round-trips") {
  auto cfg = parse_config(kSmallCopy);
  auto text = to_text(cfg);
  auto again = parse_config(text);
  CHECK(to_text(again) == text);
  CHECK(again.model.canonical() == cfg.model.canonical());
  for (const auto& key : config_keys()) {
    if (key == "task.corpus_path") continue;
    CHECK(text.find(key + " = ") != std::string::npos);
  }
}

TEST_CASE("config errors name the line and field") {
  check_config_error("task.kind = copy\nmodel.d_modle = 8\n", 2, "model.d_modle");
  check_config_error("task.kind = copy\ntask.kind = reverse\n", 2, "task.kind");
  check_config_error("task.kind = copy\n\npe.mode = sideways\n", 3, "pe.mode");
  check_config_error("task.kind = copy\ntrain.steps = many\n", 2, "train.steps");
  check_config_error("task.kind = copy\nattention.symmetric = maybe\n", 2, "attention.symmetric");
  check_config_error("task.kind\n", 1, "");
  check_config_error("task.kind = copy\ntrain.lr =\n", 2, "train.lr");
}

TEST_CASE("config validation spans sections") {
  CHECK_THROWS_AS(parse_config("task.kind = copy\nfilter.kind = full\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("task.kind = copy\nmodel.n_heads = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("task.kind = char_lm\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("task.kind = copy\npe.mode = lookup_table\npe.table = learned\n"
                               "pe.t_max = 4\ntask.seq_len = 10\n"),
                  ConfigError);
}

TEST_CASE("corpus paths resolve against the config file") {
  auto corpus = scratch("corpus.txt");
  {
    std::ofstream out(corpus);
    for (int i = 0; i < 100; ++i) out << "line " << i << " of a small corpus\n";
  }
  auto cfg_path = scratch("lm.cfg");
  {
    std::ofstream out(cfg_path);
    out << "task.kind = char_lm\ntask.seq_len = 8\ntask.corpus_path = corpus.txt\n";
  }
  auto cfg = load_config(cfg_path.string());
  CHECK(fs::equivalent(cfg.task.corpus_path, corpus));
  CHECK(cfg.task.vocab_size == 256);
  CHECK_THROWS_AS(load_config(scratch("missing.cfg").string()), ConfigError);
}

TEST_CASE("checkpoint round trip keeps the metrics") {
  auto cfg = parse_config(kSmallCopy);
  TaskData task(cfg.task);
  auto model = fresh_model(cfg.model, 3);
  train(model, task, cfg.train);
  auto path = scratch("model.ckpt").string();
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path, cfg.model);
  auto a = evaluate(model, task);
  auto b = evaluate(loaded, task);
  CHECK(std::abs(a.cross_entropy - b.cross_entropy) <= 1e-6 * std::abs(a.cross_entropy));
  CHECK(std::abs(a.accuracy - b.accuracy) <= 1e-6 * std::abs(a.accuracy));
  CHECK(loaded.param_count() == model.param_count());
}

TEST_CASE("checkpoint errors") {
  auto cfg = parse_config(kSmallCopy);
  auto model = fresh_model(cfg.model, 4);
  auto path = scratch("model.ckpt").string();
  save_checkpoint(model, path);

  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    FAIL("expected a checkpoint error");
    return CheckpointError::Kind::Io;
  };

  CHECK(kind_of([&] { load_checkpoint(scratch("absent.ckpt").string(), cfg.model); }) ==
        CheckpointError::Kind::Io);

  const auto size = fs::file_size(path);
  auto truncated = scratch("truncated.ckpt");
  fs::copy_file(path, truncated, fs::copy_options::overwrite_existing);
  fs::resize_file(truncated, size / 2);
  CHECK(kind_of([&] { load_checkpoint(truncated.string(), cfg.model); }) ==
        CheckpointError::Kind::Malformed);

  auto bad_magic = scratch("magic.ckpt");
  fs::copy_file(path, bad_magic, fs::copy_options::overwrite_existing);
  {
    std::fstream f(bad_magic, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
  }
  CHECK(kind_of([&] { load_checkpoint(bad_magic.string(), cfg.model); }) ==
        CheckpointError::Kind::Malformed);

  auto wide = cfg.model;
  wide.block.d_model = 64;
  wide.block.d_ff = 128;
  auto wide_path = scratch("wide.ckpt").string();
  save_checkpoint(fresh_model(wide, 1), wide_path);
  auto narrow = wide;
  narrow.block.d_model = 32;
  CHECK(kind_of([&] { load_checkpoint(wide_path, narrow); }) ==
        CheckpointError::Kind::DimensionMismatch);

  auto other = cfg.model;
  other.block.attention.kernel = KernelForm::RBF;
  CHECK(kind_of([&] { load_checkpoint(path, other); }) == CheckpointError::Kind::ConfigMismatch);
}

TEST_CASE("config digest tracks the canonical text") {
  auto cfg = parse_config(kSmallCopy).model;
  auto other = cfg;
  CHECK(config_digest(cfg) == config_digest(other));
  other.block.attention.value = ValueMode::WithPE;
  CHECK(config_digest(cfg) != config_digest(other));
}

TEST_CASE("sweep spec parsing") {
  std::string base = kSmallCopy;
  const std::string no_pe = "task.kind = copy\n";
  auto spec = parse_sweep(no_pe + "sweep.axis = pe_removal\nsweep.variants = symmetric_product, none\n"
                                 "sweep.seeds = 1,2\n");
  CHECK(spec.axis == SweepAxis::PERemoval);
  CHECK(spec.variants == std::vector<std::string>{"symmetric_product", "none"});
  CHECK(spec.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(spec.variant_config(1).model.block.attention.pe.mode == PEMode::None);

  // the base may not fix the swept key; kSmallCopy sets pe.mode
  CHECK_THROWS_AS(parse_sweep(base + "sweep.axis = pe_integration\nsweep.variants = none\n"
                                     "sweep.seeds = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.axis = pe_removal\nsweep.variants = direct_sum\n"
                                      "sweep.seeds = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.axis = kernel_type\nsweep.variants = gaussian\n"
                                      "sweep.seeds = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.axis = kernel_type\nsweep.variants = rbf\n"
                                      "sweep.seeds = one\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.axis = widths\nsweep.variants = a\nsweep.seeds = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.variants = rbf\nsweep.seeds = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_sweep(no_pe + "sweep.axis = kernel_type\nsweep.variants = rbf\n"
                                      "sweep.seeds = 1\nsweep.color = red\n"),
                  ConfigError);
}

TEST_CASE("sweep rows are ordered and independent of the job count") {
  std::string base = R"(
task.kind = copy
task.vocab_size = 8
task.seq_len = 4
task.eval_sequences = 16
model.d_model = 8
model.d_ff = 16
model.n_layers = 1
model.n_heads = 2
pe.mode = direct_sum
train.steps = 3
train.eval_every = 3
train.batch_size = 4
sweep.axis = kernel_type
sweep.variants = exponential, linear, rbf
sweep.seeds = 5, 6
)";
  auto spec = parse_sweep(base);
  SweepOptions one;
  auto a = run_sweep(spec, one);
  SweepOptions three;
  three.jobs = 3;
  auto b = run_sweep(spec, three);
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].variant == spec.variants[i / 2]);
    CHECK(a[i].seed == spec.seeds[i % 2]);
    CHECK(a[i].variant == b[i].variant);
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].diverged == b[i].diverged);
    if (!a[i].diverged) CHECK(a[i].loss == b[i].loss);
  }
  CHECK(a[2].diverged);
  CHECK(a[3].diverged);
  CHECK(std::isnan(a[2].accuracy));
  CHECK_FALSE(a[0].diverged);

  auto csv = to_csv(a);
  CHECK(csv.rfind(sweep_csv_header() + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  auto summary = summarize(a);
  REQUIRE(summary.size() == 3);
  CHECK(summary[1].variant == "linear");
  CHECK(summary[1].diverged == 2);
  CHECK_FALSE(summary[1].best.has_value());
  CHECK(summary[0].runs == 2);
  CHECK(summary[0].best.has_value());
  CHECK(summary_csv(summary).find("linear,2,2,") != std::string::npos);
}

TEST_CASE("value_pe sweep keeps one parameter count") {
  auto spec = parse_sweep(R"(
task.kind = copy
pe.mode = direct_sum
sweep.axis = value_pe
sweep.variants = with_pe, content_only
sweep.seeds = 1
)");
  CHECK(fresh_model(spec.variant_config(0).model, 1).param_count() ==
        fresh_model(spec.variant_config(1).model, 1).param_count());
}

TEST_CASE("shipped configs and sweep specs load") {
  const char* dir = std::getenv("KERNATT_CONFIGS");
  if (!dir) return;
  std::size_t configs = 0, sweeps = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& path = entry.path();
    CAPTURE(path.string());
    if (path.extension() == ".cfg") {
      auto cfg = load_config(path);
      CHECK_NOTHROW(TaskData{cfg.task});
      ++configs;
    } else if (path.extension() == ".sweep") {
      auto spec = load_sweep(path);
      for (std::size_t i = 0; i < spec.variants.size(); ++i) CHECK_NOTHROW(spec.variant_config(i));
      ++sweeps;
    }
  }
  CHECK(configs >= 4);
  CHECK(sweeps == 4);
}
