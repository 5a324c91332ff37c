#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kernatt/config.hpp"

namespace kernatt {

enum class SweepAxis { PEIntegration, KernelType, PERemoval, ValuePE };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

/// Config key a sweep axis varies.
std::string axis_key(SweepAxis axis);

/// A sweep file is a config file plus three keys:
///
///   sweep.axis     = pe_integration | kernel_type | pe_removal | value_pe
///   sweep.variants = comma-separated values for the axis key
///   sweep.seeds    = comma-separated integers
///
/// Every other key is the base config shared by all variants. The base may
/// not set the axis key itself.
struct SweepSpec {
  SweepAxis axis = SweepAxis::PEIntegration;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<ConfigEntry> base;
  std::filesystem::path base_dir;

  /// Base config with the axis key set to variants[i], seed not yet applied.
  RunConfig variant_config(std::size_t i) const;
};

SweepSpec parse_sweep(const std::string& text, const std::filesystem::path& base_dir = {});
SweepSpec load_sweep(const std::string& path);

struct SweepRow {
  std::string variant;
  std::uint64_t seed = 0;
  double loss = 0.0;  // test-split cross-entropy; NaN when the run diverged
  double perplexity = 0.0;
  double accuracy = 0.0;
  double val_accuracy = 0.0;
  bool diverged = false;
  std::string status;
  std::size_t param_count = 0;
  double wall_s = 0.0;
};

struct SweepOptions {
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> log_dir;  // one JSON-lines log per cell
  std::function<void(const SweepRow&)> on_row;   // called as cells finish, under a lock
};

/// Trains every (variant, seed) cell from a fresh model. Rows come back in
/// (variant, seed) order whatever the job count.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opts = {});

std::string sweep_csv_header();
std::string to_csv(const SweepRow& row);
std::string to_csv(const std::vector<SweepRow>& rows);

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double mean_accuracy = 0.0, sd_accuracy = 0.0;  // over non-diverged runs
  double mean_loss = 0.0, sd_loss = 0.0;
  double mean_perplexity = 0.0, sd_perplexity = 0.0;
  std::optional<SweepRow> best;  // highest validation accuracy
  std::size_t param_count = 0;
};

std::vector<VariantSummary> summarize(const std::vector<SweepRow>& rows);
std::string summary_csv(const std::vector<VariantSummary>& summary);

}  // namespace kernatt
