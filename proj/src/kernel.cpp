#include "kernatt/kernel.hpp"

#include <cmath>

#include "kernatt/nn_ops.hpp"

namespace kernatt {

std::string to_string(KernelForm form) {
  switch (form) {
    case KernelForm::Linear: return "linear";
    case KernelForm::Polynomial: return "polynomial";
    case KernelForm::Exponential: return "exponential";
    case KernelForm::RBF: return "rbf";
  }
  return "?";
}

KernelForm parse_kernel_form(const std::string& name) {
  if (name == "linear") return KernelForm::Linear;
  if (name == "polynomial") return KernelForm::Polynomial;
  if (name == "exponential") return KernelForm::Exponential;
  if (name == "rbf") return KernelForm::RBF;
  throw ConfigError("unknown kernel form '" + name +
                    "' (expected linear, polynomial, exponential or rbf)");
}

void KernelSpec::validate() const {
  if (d_model == 0 || d_k == 0) throw ConfigError("kernel widths must be positive");
  if (form == KernelForm::Polynomial && poly_degree != 2) {
    throw ConfigError("polynomial kernel is defined for degree 2 only");
  }
}

KernelParams KernelParams::init(const KernelSpec& spec, Rng& rng) {
  spec.validate();
  const double sd = 1.0 / std::sqrt(static_cast<double>(spec.d_model));
  KernelParams p;
  p.w_q = Tensor::randn({spec.d_model, spec.d_k}, rng, sd);
  p.w_k = spec.symmetric ? p.w_q : Tensor::randn({spec.d_model, spec.d_k}, rng, sd);
  return p;
}

Tensor form_scores(KernelForm form, const Tensor& q, const Tensor& k, std::size_t d_k) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_k));
  switch (form) {
    case KernelForm::Linear: return matmul_nt(q, k);
    case KernelForm::Polynomial: {
      auto s = matmul_nt(q, k);
      return mul(s, s);
    }
    case KernelForm::Exponential: return exp(scale(matmul_nt(q, k), inv_sqrt));
    case KernelForm::RBF: return exp(scale(pairwise_sq_dist(q, k), -inv_sqrt));
  }
  throw Error("unknown kernel form");
}

bool exp_family(KernelForm form) {
  return form == KernelForm::Exponential || form == KernelForm::RBF;
}

Tensor form_log_scores(KernelForm form, const Tensor& q, const Tensor& k, std::size_t d_k) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_k));
  switch (form) {
    case KernelForm::Exponential: return scale(matmul_nt(q, k), inv_sqrt);
    case KernelForm::RBF: return scale(pairwise_sq_dist(q, k), -inv_sqrt);
    default: break;
  }
  throw InvalidKernelError(to_string(form) + " kernel has no log form");
}

Tensor kernel_scores(const KernelSpec& spec, const KernelParams& params, const Tensor& f_q,
                     const Tensor& f_k) {
  spec.validate();
  if (f_q.rank() != 2 || f_k.rank() != 2 || f_q.dim(1) != spec.d_model ||
      f_k.dim(1) != spec.d_model) {
    throw DimensionError("kernel_scores: features must be [T x " + std::to_string(spec.d_model) +
                         "], got " + shape_str(f_q.shape()) + " and " + shape_str(f_k.shape()));
  }
  const Tensor& wk = spec.symmetric ? params.w_q : params.w_k;
  auto q = matmul(f_q, params.w_q);
  auto k = spec.symmetric && f_q.id() == f_k.id() ? q : matmul(f_k, wk);
  const std::size_t tq = f_q.dim(0), tk = f_k.dim(0);
  auto s = form_scores(spec.form, reshape(q, {1, tq, spec.d_k}), reshape(k, {1, tk, spec.d_k}),
                       spec.d_k);
  return reshape(s, {tq, tk});
}

bool is_valid_smoother_kernel(const KernelSpec& spec) { return spec.form != KernelForm::Linear; }

}  // namespace kernatt
