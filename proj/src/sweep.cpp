#include "kernatt/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace kernatt {

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::PEIntegration: return "pe_integration";
    case SweepAxis::KernelType: return "kernel_type";
    case SweepAxis::PERemoval: return "pe_removal";
    case SweepAxis::ValuePE: return "value_pe";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "pe_integration") return SweepAxis::PEIntegration;
  if (name == "kernel_type") return SweepAxis::KernelType;
  if (name == "pe_removal") return SweepAxis::PERemoval;
  if (name == "value_pe") return SweepAxis::ValuePE;
  throw ConfigError("unknown sweep axis '" + name +
                    "' (expected pe_integration, kernel_type, pe_removal or value_pe)");
}

std::string axis_key(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::PEIntegration:
    case SweepAxis::PERemoval: return "pe.mode";
    case SweepAxis::KernelType: return "attention.kernel";
    case SweepAxis::ValuePE: return "value.mode";
  }
  return "";
}

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

RunConfig SweepSpec::variant_config(std::size_t i) const {
  auto entries = base;
  entries.push_back({axis_key(axis), variants.at(i), 0});
  return config_from_entries(std::move(entries), base_dir);
}

SweepSpec parse_sweep(const std::string& text, const std::filesystem::path& base_dir) {
  SweepSpec spec;
  spec.base_dir = base_dir;
  std::optional<ConfigEntry> axis, variants, seeds;
  for (auto& e : read_entries(text)) {
    if (e.key == "sweep.axis") {
      axis = e;
    } else if (e.key == "sweep.variants") {
      variants = e;
    } else if (e.key == "sweep.seeds") {
      seeds = e;
    } else if (e.key.rfind("sweep.", 0) == 0) {
      throw ConfigError("unknown key", e.line, e.key);
    } else {
      spec.base.push_back(e);
    }
  }
  if (!axis) throw ConfigError("sweep needs sweep.axis", 0, "sweep.axis");
  if (!variants) throw ConfigError("sweep needs sweep.variants", 0, "sweep.variants");
  if (!seeds) throw ConfigError("sweep needs sweep.seeds", 0, "sweep.seeds");
  try {
    spec.axis = parse_sweep_axis(axis->value);
  } catch (const ConfigError& e) {
    throw ConfigError(e.message(), axis->line, axis->key);
  }
  const auto key = axis_key(spec.axis);
  for (const auto& e : spec.base) {
    if (e.key == key) {
      throw ConfigError("the swept key is set per variant, not in the base", e.line, e.key);
    }
  }

  spec.variants = split_list(variants->value);
  if (spec.variants.empty()) throw ConfigError("no variants", variants->line, variants->key);
  for (std::size_t i = 0; i < spec.variants.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (spec.variants[i] == spec.variants[j]) {
        throw ConfigError("variant '" + spec.variants[i] + "' listed twice", variants->line,
                          variants->key);
      }
  if (spec.axis == SweepAxis::PERemoval) {
    bool has_none = false;
    for (const auto& v : spec.variants) has_none = has_none || v == "none";
    if (!has_none) {
      throw ConfigError("pe_removal compares against pe.mode = none; add it to the variants",
                        variants->line, variants->key);
    }
  }

  for (const auto& s : split_list(seeds->value)) {
    try {
      std::size_t used = 0;
      spec.seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("seed '" + s + "' is not an integer", seeds->line, seeds->key);
    }
  }
  if (spec.seeds.empty()) throw ConfigError("no seeds", seeds->line, seeds->key);

  for (std::size_t i = 0; i < spec.variants.size(); ++i) {
    try {
      spec.variant_config(i);
    } catch (const ConfigError& e) {
      throw ConfigError("variant '" + spec.variants[i] + "': " + e.message(), e.line(),
                        e.field().empty() ? axis_key(spec.axis) : e.field());
    }
  }
  return spec;
}

SweepSpec load_sweep(const std::string& path) {
  return parse_sweep(read_text_file(path, "sweep spec"), std::filesystem::path(path).parent_path());
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opts) {
  struct Cell {
    std::size_t variant;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t v = 0; v < spec.variants.size(); ++v)
    for (auto seed : spec.seeds) cells.push_back({v, seed});
  std::vector<RunConfig> configs;
  for (std::size_t v = 0; v < spec.variants.size(); ++v) configs.push_back(spec.variant_config(v));
  std::vector<std::optional<TaskData>> tasks(configs.size());
  for (std::size_t v = 0; v < configs.size(); ++v) tasks[v].emplace(configs[v].task);
  if (opts.log_dir) std::filesystem::create_directories(*opts.log_dir);

  std::vector<SweepRow> rows(cells.size());
  std::mutex report;
  std::atomic<std::size_t> next{0};
  auto run_cell = [&](std::size_t idx) {
    const auto& cell = cells[idx];
    auto cfg = configs[cell.variant];
    cfg.train.seed = cell.seed;
    const auto& task = *tasks[cell.variant];

    SweepRow row;
    row.variant = spec.variants[cell.variant];
    row.seed = cell.seed;
    auto model = fresh_model(cfg.model, cell.seed);
    row.param_count = model.param_count();

    std::ofstream log_file;
    if (opts.log_dir) {
      log_file.open(*opts.log_dir / (row.variant + "_seed" + std::to_string(cell.seed) + ".jsonl"));
    }
    auto result = train(model, task, cfg.train, log_file.is_open() ? &log_file : nullptr);
    row.status = to_string(result.status);
    row.diverged = result.diverged();
    row.wall_s = result.wall_s;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (row.diverged) {
      row.loss = row.perplexity = row.accuracy = row.val_accuracy = nan;
    } else {
      row.val_accuracy = result.validation.accuracy;
      try {
        auto m = evaluate(model, task, Split::Test);
        row.loss = m.cross_entropy;
        row.perplexity = m.perplexity;
        row.accuracy = m.accuracy;
      } catch (const NumericFailure& e) {
        row.diverged = true;
        row.status = to_string(RunStatus::Diverged);
        row.loss = row.perplexity = row.accuracy = nan;
      }
    }
    rows[idx] = row;
    if (opts.on_row) {
      std::lock_guard lock(report);
      opts.on_row(row);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, cells.size()));
  std::vector<std::exception_ptr> errors(jobs);
  auto worker = [&](std::size_t w) {
    try {
      for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
    } catch (...) {
      errors[w] = std::current_exception();
      next = cells.size();
    }
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

namespace {

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  std::ostringstream s;
  s << std::setprecision(10) << x;
  return s.str();
}

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  if (xs.size() < 2) return {mean, std::nan("")};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (xs.size() - 1))};
}

}  // namespace

std::string sweep_csv_header() {
  return "variant,seed,loss,perplexity,accuracy,val_accuracy,diverged,status,param_count,wall_s";
}

std::string to_csv(const SweepRow& r) {
  return r.variant + "," + std::to_string(r.seed) + "," + num(r.loss) + "," + num(r.perplexity) +
         "," + num(r.accuracy) + "," + num(r.val_accuracy) + "," + (r.diverged ? "1" : "0") +
         "," + r.status + "," + std::to_string(r.param_count) + "," + num(r.wall_s);
}

std::string to_csv(const std::vector<SweepRow>& rows) {
  std::string out = sweep_csv_header() + "\n";
  for (const auto& r : rows) out += to_csv(r) + "\n";
  return out;
}

std::vector<VariantSummary> summarize(const std::vector<SweepRow>& rows) {
  std::vector<VariantSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const VariantSummary& s) { return s.variant == r.variant; });
    if (it == out.end()) {
      out.push_back({});
      it = out.end() - 1;
      it->variant = r.variant;
      it->param_count = r.param_count;
    }
    ++it->runs;
    if (r.diverged) {
      ++it->diverged;
    } else if (!it->best || r.val_accuracy > it->best->val_accuracy) {
      it->best = r;
    }
  }
  for (auto& s : out) {
    std::vector<double> acc, loss, ppl;
    for (const auto& r : rows) {
      if (r.variant != s.variant || r.diverged) continue;
      acc.push_back(r.accuracy);
      loss.push_back(r.loss);
      ppl.push_back(r.perplexity);
    }
    std::tie(s.mean_accuracy, s.sd_accuracy) = mean_sd(acc);
    std::tie(s.mean_loss, s.sd_loss) = mean_sd(loss);
    std::tie(s.mean_perplexity, s.sd_perplexity) = mean_sd(ppl);
  }
  return out;
}

std::string summary_csv(const std::vector<VariantSummary>& summary) {
  std::string out =
      "variant,runs,diverged,mean_accuracy,sd_accuracy,mean_loss,sd_loss,mean_perplexity,"
      "sd_perplexity,best_seed,best_val_accuracy,best_accuracy,param_count\n";
  for (const auto& s : summary) {
    out += s.variant + "," + std::to_string(s.runs) + "," + std::to_string(s.diverged) + "," +
           num(s.mean_accuracy) + "," + num(s.sd_accuracy) + "," + num(s.mean_loss) + "," +
           num(s.sd_loss) + "," + num(s.mean_perplexity) + "," + num(s.sd_perplexity) + ",";
    if (s.best) {
      out += std::to_string(s.best->seed) + "," + num(s.best->val_accuracy) + "," +
             num(s.best->accuracy);
    } else {
      out += ",,";
    }
    out += "," + std::to_string(s.param_count) + "\n";
  }
  return out;
}

}  // namespace kernatt
