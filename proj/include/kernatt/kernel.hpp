#pragma once

#include <string>

#include "kernatt/tensor.hpp"

namespace kernatt {

/// Non-positional kernel forms on the feature space.
enum class KernelForm { Linear, Polynomial, Exponential, RBF };

std::string to_string(KernelForm form);
KernelForm parse_kernel_form(const std::string& name);

struct KernelSpec {
  KernelForm form = KernelForm::Exponential;
  bool symmetric = false;  // W_q and W_k are one parameter
  std::size_t d_model = 0;
  std::size_t d_k = 0;  // projected width; exponential/RBF scale by sqrt(d_k)
  int poly_degree = 2;

  void validate() const;
};

/// Projection pair. When the spec is symmetric, w_k aliases w_q so both roles
/// accumulate into one gradient.
struct KernelParams {
  Tensor w_q;
  Tensor w_k;

  static KernelParams init(const KernelSpec& spec, Rng& rng);
  bool shared() const { return w_q.id() == w_k.id(); }
};

/// Scores on already projected features q [g x tq x dk], k [g x tk x dk]:
///   Linear       <q, k>
///   Polynomial   <q, k>^2
///   Exponential  exp(<q, k> / sqrt(dk))
///   RBF          exp(-||q - k||^2 / sqrt(dk))
/// For symmetric kernels pass the same projection for both arguments.
Tensor form_scores(KernelForm form, const Tensor& q, const Tensor& k, std::size_t d_k);

/// Forms of the shape exp(g(q, k)).
bool exp_family(KernelForm form);

/// log of form_scores for exp-family forms: g(q, k) itself.
Tensor form_log_scores(KernelForm form, const Tensor& q, const Tensor& k, std::size_t d_k);

/// k(f_q, f_k) for every query/key row pair: [tq x d_model], [tk x d_model] -> [tq x tk].
Tensor kernel_scores(const KernelSpec& spec, const KernelParams& params, const Tensor& f_q,
                     const Tensor& f_k);

/// True for forms whose scores cannot be negative, which the smoother needs.
bool is_valid_smoother_kernel(const KernelSpec& spec);

}  // namespace kernatt
