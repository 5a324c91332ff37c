#include "kernatt/positional.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "kernatt/nn_ops.hpp"

namespace kernatt {

std::string to_string(PEMode mode) {
  switch (mode) {
    case PEMode::None: return "none";
    case PEMode::DirectSum: return "direct_sum";
    case PEMode::LookupTable: return "lookup_table";
    case PEMode::XLProduct: return "xl_product";
    case PEMode::SymmetricProduct: return "symmetric_product";
  }
  return "?";
}

PEMode parse_pe_mode(const std::string& name) {
  if (name == "none") return PEMode::None;
  if (name == "direct_sum") return PEMode::DirectSum;
  if (name == "lookup_table") return PEMode::LookupTable;
  if (name == "xl_product") return PEMode::XLProduct;
  if (name == "symmetric_product") return PEMode::SymmetricProduct;
  throw ConfigError("unknown pe mode '" + name +
                    "' (expected none, direct_sum, lookup_table, xl_product or symmetric_product)");
}

std::string to_string(PETableKind kind) {
  return kind == PETableKind::Sinusoidal ? "sinusoidal" : "learned";
}

PETableKind parse_pe_table(const std::string& name) {
  if (name == "sinusoidal") return PETableKind::Sinusoidal;
  if (name == "learned") return PETableKind::Learned;
  throw ConfigError("unknown pe table '" + name + "' (expected sinusoidal or learned)");
}

namespace {

// Interleaved sin/cos row with frequencies 1 / 10000^(2p / denom).
void fill_sinusoid(double position, std::size_t width, double denom, double* out) {
  for (std::size_t p = 0; 2 * p < width; ++p) {
    double freq = std::pow(10000.0, static_cast<double>(2 * p) / denom);
    out[2 * p] = std::sin(position / freq);
    if (2 * p + 1 < width) out[2 * p + 1] = std::cos(position / freq);
  }
}

void require_even(std::size_t d, const char* what) {
  if (d == 0 || d % 2 != 0) {
    throw DimensionError(std::string(what) + " must be a positive even width, got " +
                         std::to_string(d));
  }
}

}  // namespace

std::vector<double> sinusoid_row(double position, std::size_t d_model) {
  require_even(d_model, "sinusoidal embedding");
  std::vector<double> row(d_model);
  fill_sinusoid(position, d_model, static_cast<double>(d_model), row.data());
  return row;
}

PETable sinusoidal_pe(std::size_t t, std::size_t d_model) {
  require_even(d_model, "sinusoidal embedding");
  if (t == 0) throw DimensionError("sinusoidal_pe: table needs at least one position");
  std::vector<double> values(t * d_model);
  for (std::size_t i = 0; i < t; ++i)
    fill_sinusoid(static_cast<double>(i), d_model, static_cast<double>(d_model),
                  values.data() + i * d_model);
  return {PETableKind::Sinusoidal, Tensor({t, d_model}, std::move(values)), t};
}

PEIntegration PEIntegration::init(const PEConfig& config, std::size_t d_model, std::size_t d_k,
                                  Rng& rng) {
  PEIntegration pe;
  pe.config = config;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  if (config.t_max == 0) throw ConfigError("pe.t_max must be positive");
  switch (config.mode) {
    case PEMode::LookupTable:
      pe.params.lookup = Tensor::randn({2 * config.t_max - 1, d_k}, rng, sd);
      break;
    case PEMode::XLProduct:
      require_even(d_model, "relative sine/cosine kernel coefficient vector");
      pe.params.w_r = Tensor::randn({d_model, d_k}, rng, sd);
      break;
    case PEMode::SymmetricProduct:
      pe.params.w_f = Tensor::randn({d_model, d_k}, rng, sd);
      pe.params.w_t = Tensor::randn({d_model, d_k}, rng, sd);
      break;
    default: break;
  }
  if (config.table == PETableKind::Learned) {
    pe.params.learned = Tensor::randn({config.t_max, d_model}, rng, 0.1);
  }
  return pe;
}

Tensor PEIntegration::absolute(std::span<const int> positions, std::size_t d_model) const {
  if (config.table == PETableKind::Learned) {
    std::vector<int> ids(positions.begin(), positions.end());
    for (int p : ids) {
      if (p < 0 || static_cast<std::size_t>(p) >= config.t_max) {
        throw PositionRangeError("position " + std::to_string(p) +
                                 " outside learned table of length " +
                                 std::to_string(config.t_max));
      }
    }
    return embedding(params.learned, ids);
  }
  require_even(d_model, "sinusoidal embedding");
  std::vector<double> rows(positions.size() * d_model);
  for (std::size_t i = 0; i < positions.size(); ++i)
    fill_sinusoid(positions[i], d_model, static_cast<double>(d_model), rows.data() + i * d_model);
  return Tensor({positions.size(), d_model}, std::move(rows));
}

namespace {

// Content factor (log or linear) and time log-factor (undefined when absent).
struct JointParts {
  Tensor content;
  bool content_is_log = false;
  Tensor time_log;
};

JointParts joint_parts(const PEIntegration& pe, const KernelSpec& kspec,
                       const KernelParams& kparams, const Tensor& f_q, const Tensor& f_k,
                       std::span<const int> positions_q, std::span<const int> positions_k,
                       std::size_t batch, std::size_t heads) {
  kspec.validate();
  const std::size_t tq = positions_q.size(), tk = positions_k.size(), d = kspec.d_model;
  if (batch == 0 || tq == 0 || tk == 0) throw DimensionError("joint_scores: empty input");
  if (f_q.rank() != 2 || f_k.rank() != 2 || f_q.dim(0) != batch * tq ||
      f_k.dim(0) != batch * tk || f_q.dim(1) != d || f_k.dim(1) != d) {
    throw DimensionError("joint_scores: features " + shape_str(f_q.shape()) + " / " +
                         shape_str(f_k.shape()) + " do not match positions and d_model " +
                         std::to_string(d));
  }
  if (heads == 0 || kspec.d_k % heads != 0) {
    throw DimensionError("joint_scores: d_k " + std::to_string(kspec.d_k) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = kspec.d_k / heads;
  const PEMode mode = pe.config.mode;
  const bool self = f_q.id() == f_k.id() &&
                    std::equal(positions_q.begin(), positions_q.end(), positions_k.begin(),
                               positions_k.end());

  Tensor xq = f_q, xk = f_k;
  if (mode == PEMode::DirectSum) {
    xq = add(f_q, tile_rows(pe.absolute(positions_q, d), batch));
    xk = self ? xq : add(f_k, tile_rows(pe.absolute(positions_k, d), batch));
  }

  Tensor wq = kparams.w_q;
  Tensor wk = kspec.symmetric ? kparams.w_q : kparams.w_k;
  if (mode == PEMode::SymmetricProduct) {
    wq = pe.params.w_f;
    wk = pe.params.w_f;
  }
  auto q = split_heads(matmul(xq, wq), batch, heads);
  auto k = (self && wq.id() == wk.id()) ? q : split_heads(matmul(xk, wk), batch, heads);
  JointParts parts;
  parts.content_is_log = exp_family(kspec.form);
  parts.content = parts.content_is_log ? form_log_scores(kspec.form, q, k, dh)
                                       : form_scores(kspec.form, q, k, dh);

  auto offsets = [&](int clip) {
    std::vector<std::size_t> idx(tq * tk);
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk; ++j) {
        int rel = std::clamp(positions_q[i] - positions_k[j], -clip, clip);
        idx[i * tk + j] = static_cast<std::size_t>(rel + clip);
      }
    return idx;
  };

  switch (mode) {
    case PEMode::LookupTable: {
      const int clip = static_cast<int>(pe.config.t_max) - 1;
      parts.time_log = relative_logits(q, pe.params.lookup, heads, offsets(clip), tk);
      break;
    }
    case PEMode::XLProduct: {
      int max_rel = 0;
      for (int a : positions_q)
        for (int b : positions_k) max_rel = std::max(max_rel, std::abs(a - b));
      const double denom = pe.config.freq_denominator == FreqDenominator::Fixed512
                               ? 512.0
                               : static_cast<double>(dh);
      require_even(d, "relative sine/cosine kernel coefficient vector");
      const std::size_t rows = 2 * static_cast<std::size_t>(max_rel) + 1;
      std::vector<double> table(rows * d);
      for (std::size_t r = 0; r < rows; ++r)
        fill_sinusoid(static_cast<double>(r) - max_rel, d, denom, table.data() + r * d);
      auto projected = matmul(Tensor({rows, d}, std::move(table)), pe.params.w_r);
      parts.time_log = relative_logits(q, projected, heads, offsets(max_rel), tk);
      break;
    }
    case PEMode::SymmetricProduct: {
      auto tqp = split_heads(tile_rows(matmul(pe.absolute(positions_q, d), pe.params.w_t), batch),
                             batch, heads);
      Tensor tkp = tqp;
      if (!self) {
        tkp = split_heads(tile_rows(matmul(pe.absolute(positions_k, d), pe.params.w_t), batch),
                          batch, heads);
      }
      parts.time_log = scale(matmul_nt(tqp, tkp), 1.0 / std::sqrt(static_cast<double>(dh)));
      break;
    }
    default: break;
  }
  return parts;
}

}  // namespace

Tensor joint_scores_batched(const PEIntegration& pe, const KernelSpec& kspec,
                            const KernelParams& kparams, const Tensor& f_q, const Tensor& f_k,
                            std::span<const int> positions_q, std::span<const int> positions_k,
                            std::size_t batch, std::size_t heads) {
  auto p = joint_parts(pe, kspec, kparams, f_q, f_k, positions_q, positions_k, batch, heads);
  if (p.content_is_log) return exp(p.time_log.defined() ? add(p.content, p.time_log) : p.content);
  return p.time_log.defined() ? mul(p.content, exp(p.time_log)) : p.content;
}

Tensor joint_log_scores_batched(const PEIntegration& pe, const KernelSpec& kspec,
                                const KernelParams& kparams, const Tensor& f_q, const Tensor& f_k,
                                std::span<const int> positions_q,
                                std::span<const int> positions_k, std::size_t batch,
                                std::size_t heads) {
  auto p = joint_parts(pe, kspec, kparams, f_q, f_k, positions_q, positions_k, batch, heads);
  if (!p.content_is_log) throw InvalidKernelError(to_string(kspec.form) + " kernel has no log form");
  return p.time_log.defined() ? add(p.content, p.time_log) : p.content;
}

Tensor joint_scores(const PEIntegration& pe, const KernelSpec& kspec, const KernelParams& kparams,
                    const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                    std::span<const int> positions_k) {
  auto s = joint_scores_batched(pe, kspec, kparams, f_q, f_k, positions_q, positions_k, 1, 1);
  return reshape(s, {positions_q.size(), positions_k.size()});
}

double xl_time_kernel_from_coefficients(std::span<const double> c, int rel, double denom) {
  require_even(c.size(), "relative sine/cosine kernel coefficient vector");
  std::vector<double> basis(c.size());
  fill_sinusoid(rel, c.size(), denom, basis.data());
  double log_k = 0.0;
  for (std::size_t m = 0; m < c.size(); ++m) log_k += c[m] * basis[m];
  if (log_k > kExpOverflowThreshold) {
    throw OverflowError("xl_time_kernel: log kernel " + std::to_string(log_k) + " overflows");
  }
  return std::exp(log_k);
}

double xl_time_kernel(std::span<const double> f_q_row, int rel, const Tensor& w_q,
                      const Tensor& w_r, double denom) {
  if (w_q.rank() != 2 || w_r.rank() != 2 || w_q.dim(0) != f_q_row.size() ||
      w_r.dim(1) != w_q.dim(1)) {
    throw DimensionError("xl_time_kernel: W_q " + shape_str(w_q.shape()) + ", W_R " +
                         shape_str(w_r.shape()) + " for a row of " +
                         std::to_string(f_q_row.size()));
  }
  const std::size_t d = w_q.dim(0), dk = w_q.dim(1), width = w_r.dim(0);
  auto wq = w_q.data();
  auto wr = w_r.data();
  std::vector<double> query(dk, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < dk; ++j) query[j] += f_q_row[i] * wq[i * dk + j];
  std::vector<double> c(width, 0.0);
  for (std::size_t m = 0; m < width; ++m)
    for (std::size_t j = 0; j < dk; ++j) c[m] += query[j] * wr[m * dk + j];
  return xl_time_kernel_from_coefficients(c, rel, denom);
}

std::size_t attention_param_count(PEMode mode, bool symmetric, std::size_t d_model,
                                  std::size_t d_k, std::size_t t_max) {
  const std::size_t proj = d_model * d_k;
  const std::size_t qk = symmetric ? proj : 2 * proj;
  switch (mode) {
    case PEMode::None:
    case PEMode::DirectSum: return qk;
    case PEMode::LookupTable: return qk + (2 * t_max - 1) * d_k;
    case PEMode::XLProduct: return qk + proj;
    case PEMode::SymmetricProduct: return 2 * proj;
  }
  return 0;
}

}  // namespace kernatt
