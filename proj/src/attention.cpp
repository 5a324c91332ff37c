#include "kernatt/attention.hpp"

#include <algorithm>
#include <cmath>

namespace kernatt {

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::Full: return "full";
    case FilterKind::Causal: return "causal";
    case FilterKind::CausalWithMemory: return "causal_with_memory";
    case FilterKind::Strided: return "strided";
  }
  return "?";
}

FilterKind parse_filter_kind(const std::string& name) {
  if (name == "full") return FilterKind::Full;
  if (name == "causal") return FilterKind::Causal;
  if (name == "causal_with_memory") return FilterKind::CausalWithMemory;
  if (name == "strided") return FilterKind::Strided;
  throw ConfigError("unknown filter kind '" + name +
                    "' (expected full, causal, causal_with_memory or strided)");
}

std::string to_string(ValueMode mode) {
  return mode == ValueMode::WithPE ? "with_pe" : "content_only";
}

ValueMode parse_value_mode(const std::string& name) {
  if (name == "with_pe") return ValueMode::WithPE;
  if (name == "content_only") return ValueMode::ContentOnly;
  throw ConfigError("unknown value mode '" + name + "' (expected with_pe or content_only)");
}

void FilterSpec::validate() const {
  if (kind == FilterKind::Strided && (stride == 0 || window == 0)) {
    throw ConfigError("strided filter needs positive stride and window");
  }
}

void AttentionConfig::validate() const {
  if (d_model == 0 || d_k == 0 || d_v == 0 || n_heads == 0) {
    throw ConfigError("attention widths and head count must be positive");
  }
  if (d_model % n_heads != 0 || d_k % n_heads != 0 || d_v % n_heads != 0) {
    throw ConfigError("d_model, d_k and d_v must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  const bool uses_pe = pe.mode != PEMode::None;
  if (uses_pe && d_model % 2 != 0) {
    throw ConfigError("positional embeddings need an even d_model, got " + std::to_string(d_model));
  }
  if (pe.mode == PEMode::SymmetricProduct && pe.table == PETableKind::Learned) {
    throw ConfigError("symmetric_product uses sinusoidal time features; pe.table must be sinusoidal");
  }
  if (filter.kind == FilterKind::CausalWithMemory && pe.table == PETableKind::Learned && uses_pe) {
    throw ConfigError("memory slots sit at negative positions, which a learned table cannot index");
  }
  if (!(eps > 0.0)) throw ConfigError("smoother eps must be positive");
  filter.validate();
  kernel_spec().validate();
}

KernelSpec AttentionConfig::kernel_spec() const {
  KernelSpec spec;
  spec.form = kernel;
  spec.symmetric = symmetric;
  spec.d_model = d_model;
  spec.d_k = d_k;
  return spec;
}

AttentionParams AttentionParams::init(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  AttentionParams p;
  if (cfg.pe.mode != PEMode::SymmetricProduct) p.kernel = KernelParams::init(cfg.kernel_spec(), rng);
  p.pe = PEIntegration::init(cfg.pe, cfg.d_model, cfg.d_k, rng).params;
  p.w_v = Tensor::randn({cfg.d_model, cfg.d_v}, rng, 1.0 / std::sqrt(double(cfg.d_model)));
  p.w_o = Tensor::randn({cfg.d_v, cfg.d_model}, rng, 1.0 / std::sqrt(double(cfg.d_v)));
  return p;
}

void AttentionParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  const bool tied = kernel.w_q.defined() && kernel.shared();
  if (kernel.w_q.defined()) fn("w_q", kernel.w_q);
  if (tied) {
    kernel.w_k = kernel.w_q;
  } else if (kernel.w_k.defined()) {
    fn("w_k", kernel.w_k);
  }
  if (pe.lookup.defined()) fn("pe_lookup", pe.lookup);
  if (pe.w_r.defined()) fn("w_r", pe.w_r);
  if (pe.w_f.defined()) fn("w_f", pe.w_f);
  if (pe.w_t.defined()) fn("w_t", pe.w_t);
  if (pe.learned.defined()) fn("pe_learned", pe.learned);
  fn("w_v", w_v);
  fn("w_o", w_o);
}

VisibilityMask build_mask(const FilterSpec& filter, std::size_t tq, std::size_t tk) {
  filter.validate();
  if (tq == 0 || tk == 0) throw DimensionError("build_mask: empty query or key set");
  if (filter.kind == FilterKind::Full) return VisibilityMask(tq, tk, true);

  if (tk < tq) {
    throw DimensionError("build_mask: causal filters need at least as many keys (" +
                         std::to_string(tk) + ") as queries (" + std::to_string(tq) + ")");
  }
  const std::size_t prefix = tk - tq;
  if (filter.kind == FilterKind::CausalWithMemory && prefix != filter.mem_len) {
    throw DimensionError("build_mask: expected " + std::to_string(filter.mem_len) +
                         " memory keys ahead of the queries, got " + std::to_string(prefix));
  }
  VisibilityMask mask(tq, tk, false);
  for (std::size_t i = 0; i < tq; ++i) {
    const long qi = static_cast<long>(i);
    for (std::size_t j = 0; j < tk; ++j) {
      const long pj = static_cast<long>(j) - static_cast<long>(prefix);
      bool visible = filter.include_self ? pj <= qi : pj < qi;
      switch (filter.kind) {
        case FilterKind::CausalWithMemory:
          if (j < prefix) visible = true;
          break;
        case FilterKind::Strided: {
          const long stride = static_cast<long>(filter.stride);
          const long window = static_cast<long>(filter.window);
          bool strided = ((qi - pj) % stride + stride) % stride == 0;
          bool local = pj > qi - window;
          visible = visible && (strided || local);
          break;
        }
        default: break;
      }
      mask.set(i, j, visible);
    }
    if (mask.row_count(i) == 0) {
      throw EmptyVisibilityError("query " + std::to_string(i) + " sees no keys under filter " +
                                 to_string(filter.kind));
    }
  }
  return mask;
}

Tensor smooth(const Tensor& scores, const VisibilityMask& mask, const Tensor& values, double eps) {
  return matmul(masked_normalize(scores, mask, eps), values);
}

namespace {

// Smoothing weights [b*h x tq x tk].
Tensor weights_for(const AttentionConfig& cfg, const AttentionParams& params, const Tensor& f_q,
                   const Tensor& f_k, std::span<const int> positions_q,
                   std::span<const int> positions_k, std::size_t batch) {
  cfg.validate();
  auto pe = params.pe_integration(cfg);
  auto mask = build_mask(cfg.filter, positions_q.size(), positions_k.size());
  if (cfg.uses_log_domain()) {
    return masked_softmax(joint_log_scores_batched(pe, cfg.kernel_spec(), params.kernel, f_q, f_k,
                                                   positions_q, positions_k, batch, cfg.n_heads),
                          mask);
  }
  auto scores = joint_scores_batched(pe, cfg.kernel_spec(), params.kernel, f_q, f_k, positions_q,
                                     positions_k, batch, cfg.n_heads);
  return masked_normalize(scores, mask, cfg.eps);
}

}  // namespace

Tensor attention_forward_batched(const AttentionConfig& cfg, const AttentionParams& params,
                                 const Tensor& f_q, const Tensor& f_k,
                                 std::span<const int> positions_q,
                                 std::span<const int> positions_k, std::size_t batch) {
  auto weights = weights_for(cfg, params, f_q, f_k, positions_q, positions_k, batch);
  Tensor value_in = f_k;
  if (cfg.value == ValueMode::WithPE && cfg.pe.mode != PEMode::None) {
    auto pe = params.pe_integration(cfg);
    value_in = add(f_k, tile_rows(pe.absolute(positions_k, cfg.d_model), batch));
  }
  auto values = split_heads(matmul(value_in, params.w_v), batch, cfg.n_heads);
  auto mixed = matmul(weights, values);
  return matmul(merge_heads(mixed, batch, cfg.n_heads), params.w_o);
}

Tensor attention_forward(const AttentionConfig& cfg, const AttentionParams& params,
                         const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                         std::span<const int> positions_k) {
  return attention_forward_batched(cfg, params, f_q, f_k, positions_q, positions_k, 1);
}

Tensor attention_weights(const AttentionConfig& cfg, const AttentionParams& params,
                         const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                         std::span<const int> positions_k) {
  return weights_for(cfg, params, f_q, f_k, positions_q, positions_k, 1);
}

Tensor reference_softmax_attention(const AttentionParams& params, std::size_t n_heads,
                                   const Tensor& x_q, const Tensor& x_k,
                                   const VisibilityMask* mask) {
  const Tensor& wq = params.kernel.w_q;
  const Tensor& wk = params.kernel.w_k;
  if (!wq.defined() || !wk.defined()) {
    throw DimensionError("reference_softmax_attention needs W_q and W_k");
  }
  if (x_q.rank() != 2 || x_k.rank() != 2 || x_q.dim(1) != wq.dim(0) || x_k.dim(1) != wk.dim(0)) {
    throw DimensionError("reference_softmax_attention: inputs " + shape_str(x_q.shape()) + ", " +
                         shape_str(x_k.shape()) + " vs W " + shape_str(wq.shape()));
  }
  const std::size_t tq = x_q.dim(0), tk = x_k.dim(0), d = x_q.dim(1);
  const std::size_t dk = wq.dim(1), dv = params.w_v.dim(1), dm = params.w_o.dim(1);
  if (n_heads == 0 || dk % n_heads || dv % n_heads) throw DimensionError("head split");
  if (mask && (mask->rows != tq || mask->cols != tk)) throw DimensionError("mask shape");
  const std::size_t hk = dk / n_heads, hv = dv / n_heads;

  auto project = [](std::span<const double> x, std::size_t rows, std::size_t in,
                    std::span<const double> w, std::size_t out) {
    std::vector<double> y(rows * out, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t c = 0; c < out; ++c) y[r * out + c] += x[r * in + i] * w[i * out + c];
    return y;
  };
  auto q = project(x_q.data(), tq, d, wq.data(), dk);
  auto k = project(x_k.data(), tk, d, wk.data(), dk);
  auto v = project(x_k.data(), tk, d, params.w_v.data(), dv);

  std::vector<double> concat(tq * dv, 0.0);
  std::vector<double> logits(tk);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < tq; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hk; ++c) s += q[i * dk + h * hk + c] * k[j * dk + h * hk + c];
        logits[j] = s / std::sqrt(static_cast<double>(hk));
        if (!mask || (*mask)(i, j)) mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        logits[j] = (!mask || (*mask)(i, j)) ? std::exp(logits[j] - mx) : 0.0;
        z += logits[j];
      }
      for (std::size_t j = 0; j < tk; ++j) {
        double w = logits[j] / z;
        for (std::size_t c = 0; c < hv; ++c) concat[i * dv + h * hv + c] += w * v[j * dv + h * hv + c];
      }
    }
  }
  return Tensor({tq, dm}, project(concat, tq, dv, params.w_o.data(), dm));
}

}  // namespace kernatt
