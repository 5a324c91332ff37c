#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "kernatt/checkpoint.hpp"
#include "kernatt/config.hpp"
#include "kernatt/sweep.hpp"
#include "kernatt/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kernatt;

namespace {

constexpr int kPass = 0;
constexpr int kCheckFailed = 1;
constexpr int kInternalError = 2;

// --out beats KERNATT_OUT_DIR, which beats the default.
fs::path output_dir(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KERNATT_OUT_DIR"); env && *env) return env;
  return fallback;
}

json metrics_json(const Metrics& m) {
  return {{"cross_entropy", m.cross_entropy},
          {"perplexity", m.perplexity},
          {"accuracy", m.accuracy},
          {"tokens", m.tokens}};
}

Split parse_split(const std::string& name) {
  if (name == "test") return Split::Test;
  if (name == "validation") return Split::Validation;
  throw ConfigError("unknown split '" + name + "' (expected test or validation)");
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_flag) {
  auto cfg = load_config(config_path);
  if (seed) cfg.train.seed = *seed;
  const auto out = output_dir(out_flag, "kernatt_out");
  fs::create_directories(out);
  {
    std::ofstream resolved(out / "config.txt");
    resolved << to_text(cfg);
  }
  TaskData task(cfg.task);
  auto model = fresh_model(cfg.model, cfg.train.seed);
  std::ofstream log(out / "run.jsonl");
  auto result = train(model, task, cfg.train, &log);
  json summary{{"status", to_string(result.status)},
               {"seed", cfg.train.seed},
               {"steps_run", result.steps_run},
               {"param_count", model.param_count()},
               {"wall_s", result.wall_s},
               {"log", (out / "run.jsonl").string()}};
  if (result.diverged()) {
    summary["failed_step"] = result.failed_step;
    summary["message"] = result.message;
  } else {
    save_checkpoint(model, (out / "model.ckpt").string());
    summary["checkpoint"] = (out / "model.ckpt").string();
    summary["validation"] = metrics_json(result.validation);
    summary["test"] = metrics_json(evaluate(model, task, Split::Test));
  }
  std::cout << summary.dump(2) << '\n';
  return result.diverged() ? kCheckFailed : kPass;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& split) {
  auto cfg = load_config(config_path);
  auto model = load_checkpoint(ckpt, cfg.model);
  TaskData task(cfg.task);
  auto m = evaluate(model, task, parse_split(split));
  json out = metrics_json(m);
  out["split"] = split;
  out["checkpoint"] = ckpt;
  std::cout << out.dump(2) << '\n';
  return kPass;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& out_file) {
  auto reports = run_suite(suite, seed);
  auto text = to_json(reports);
  std::cout << text << '\n';
  if (!out_file.empty()) {
    std::ofstream out(out_file);
    if (!out) throw ConfigError("cannot write '" + out_file + "'");
    out << text << '\n';
  }
  bool all = true;
  for (const auto& r : reports) {
    std::cerr << (r.passed ? "PASS " : "FAIL ") << r.check_name << ": " << r.detail << '\n';
    all = all && r.passed;
  }
  return all ? kPass : kCheckFailed;
}

int cmd_sweep(const std::string& spec_path, std::size_t jobs, const std::string& out_flag) {
  auto spec = load_sweep(spec_path);
  const auto out = output_dir(out_flag, "kernatt_sweep");
  fs::create_directories(out);
  SweepOptions opts;
  opts.jobs = jobs;
  opts.log_dir = out / "runs";
  opts.on_row = [](const SweepRow& row) { std::cerr << to_csv(row) << '\n'; };
  std::cerr << sweep_csv_header() << '\n';
  auto rows = run_sweep(spec, opts);
  auto table = to_csv(rows);
  auto summary = summary_csv(summarize(rows));
  std::ofstream(out / "sweep.csv") << table;
  std::ofstream(out / "summary.csv") << summary;
  std::cout << table << '\n' << summary;
  return kPass;
}

int cmd_param_count(const std::string& config_path) {
  auto cfg = load_config(config_path);
  Rng rng(cfg.train.seed);
  auto model = Model::init(cfg.model, rng);
  json layers = json::array();
  std::size_t attention_total = 0;
  for (const auto& site : attention_sites(cfg.model)) {
    const auto& a = site.config;
    const auto n = attention_param_count(a.pe.mode, a.symmetric, a.d_model, a.d_k, a.pe.t_max);
    attention_total += n;
    layers.push_back({{"layer", site.name}, {"kernel_params", n}});
  }
  json out{{"total", model.param_count()},
           {"attention_kernel_total", attention_total},
           {"attention", layers}};
  std::cout << out.dump(2) << '\n';
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernatt: kernel-smoother attention experiments"};
  app.require_subcommand(1);

  std::string config, ckpt, suite = "all", spec, out, split = "test", verify_out;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes run.jsonl and model.ckpt");
  train_cmd->add_option("--config", config, "config file")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "overrides train.seed");
  train_cmd->add_option("--out", out, "output directory (default $KERNATT_OUT_DIR or kernatt_out)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a held-out split");
  eval_cmd->add_option("--config", config, "config file")->required();
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "test or validation");

  auto* verify_cmd = app.add_subcommand("verify", "run property checks; exit 0 iff all pass");
  verify_cmd->add_option("--suite", suite, "equivalence, equivariance, smoother, gradients, params or all");
  verify_cmd->add_option("--seed", seed, "seed for the random trials");
  verify_cmd->add_option("--json", verify_out, "also write the reports to this file");

  auto* sweep_cmd = app.add_subcommand("sweep", "train every variant x seed and tabulate");
  sweep_cmd->add_option("--spec", spec, "sweep file")->required();
  sweep_cmd->add_option("--jobs", jobs, "concurrent cells")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", out, "output directory (default $KERNATT_OUT_DIR or kernatt_sweep)");

  auto* count_cmd = app.add_subcommand("param-count", "parameter counts for a config");
  count_cmd->add_option("--config", config, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kPass : kInternalError;
  }

  try {
    if (*train_cmd) {
      return cmd_train(config, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt, out);
    }
    if (*eval_cmd) return cmd_eval(config, ckpt, split);
    if (*verify_cmd) return cmd_verify(suite, seed, verify_out);
    if (*sweep_cmd) return cmd_sweep(spec, jobs, out);
    if (*count_cmd) return cmd_param_count(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}
