#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kernatt/tensor.hpp"

namespace kernatt {

/// A permutation together with the input it was applied to and the
/// resulting deviation from permuted outputs.
struct Witness {
  std::vector<std::size_t> permutation;
  Shape input_shape;
  std::vector<double> input;
  double deviation = 0.0;
};

struct VerifyReport {
  std::string check_name;
  std::size_t trials = 0;
  bool passed = false;
  std::uint64_t seed = 0;
  std::map<std::string, double> tolerances;
  double max_deviation = 0.0;
  std::string detail;
  std::optional<Witness> witness;
};

std::string to_json(const VerifyReport& report);
std::string to_json(const std::vector<VerifyReport>& reports);

/// Attention-as-kernel-smoother output against literal scaled dot-product
/// softmax on x = f + t, {exponential, asymmetric, direct_sum, with_pe}.
VerifyReport check_equivalence(std::uint64_t seed, bool causal, std::size_t trials = 100,
                               double tol = 1e-6);

/// Full-filter equivariance: permuting (f, t) pairs permutes the outputs.
VerifyReport check_full_equivariance(std::uint64_t seed, std::size_t trials = 100,
                                     double tol = 1e-10);

/// For each parameter draw, searches for a permutation under the causal
/// filter whose output deviates from the permuted output by more than tol.
/// Adjacent transpositions go first, then random permutations, up to
/// max_attempts per draw.
VerifyReport check_causal_witness(std::uint64_t seed, std::size_t draws = 20, double tol = 1e-3,
                                  std::size_t max_attempts = 1000);

/// Non-negative, row-normalised weights for every valid kernel, symmetry,
/// PE mode and filter combination.
VerifyReport check_row_stochastic(std::uint64_t seed, std::size_t trials_per_cell = 20,
                                  double tol = 1e-10);

/// Fraction of random linear-kernel draws that are rejected as invalid.
VerifyReport check_linear_rejected(std::uint64_t seed, std::size_t trials = 100,
                                   std::size_t required = 99);

/// Backward against central differences through attention_forward for every
/// differentiable configuration cell at T = 4, d_model = 8.
VerifyReport check_attention_gradients(std::uint64_t seed, double tol = 1e-4, double h = 1e-5);

/// Closed-form kernel-side parameter counts against allocated tensors, and
/// the 3:2 ratio between the xl and symmetric product modes.
VerifyReport check_param_counts();

std::vector<std::string> verify_suites();

/// Runs a named suite: equivalence, equivariance, smoother, gradients,
/// params, or all.
std::vector<VerifyReport> run_suite(const std::string& name, std::uint64_t seed);

}  // namespace kernatt
