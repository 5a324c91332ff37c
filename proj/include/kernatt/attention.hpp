#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kernatt/kernel.hpp"
#include "kernatt/nn_ops.hpp"
#include "kernatt/positional.hpp"
#include "kernatt/tensor.hpp"

namespace kernatt {

enum class FilterKind { Full, Causal, CausalWithMemory, Strided };

std::string to_string(FilterKind kind);
FilterKind parse_filter_kind(const std::string& name);

/// Set filtering function: which keys each query may see.
///
/// For the causal family the last tq keys line up with the queries and any
/// extra keys form a prefix (the memory slots for CausalWithMemory). The
/// strided pattern keeps {j : j = i mod stride} and the window (i - window, i],
/// always restricted to positions <= i.
struct FilterSpec {
  FilterKind kind = FilterKind::Full;
  std::size_t mem_len = 0;
  std::size_t stride = 1;
  std::size_t window = 1;
  bool include_self = true;

  bool causal_family() const { return kind != FilterKind::Full; }
  void validate() const;
};

enum class ValueMode { WithPE, ContentOnly };

std::string to_string(ValueMode mode);
ValueMode parse_value_mode(const std::string& name);

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t d_k = 0;  // total projected width, split evenly across heads
  std::size_t d_v = 0;  // total value width, split evenly across heads
  std::size_t n_heads = 1;
  KernelForm kernel = KernelForm::Exponential;
  bool symmetric = false;
  PEConfig pe;
  FilterSpec filter;
  ValueMode value = ValueMode::ContentOnly;
  double eps = 1e-12;  // smoother denominator threshold
  // Normalise exp-family kernels from their log scores. Off: divide the raw
  // scores by their row sum, subject to eps.
  bool log_domain = true;

  void validate() const;
  KernelSpec kernel_spec() const;
  std::size_t head_dk() const { return d_k / n_heads; }
  bool uses_log_domain() const { return log_domain && exp_family(kernel); }
};

struct AttentionParams {
  KernelParams kernel;  // undefined in SymmetricProduct mode, which owns W_F / W_T
  PEParams pe;
  Tensor w_v;  // [d_model x d_v]
  Tensor w_o;  // [d_v x d_model]

  static AttentionParams init(const AttentionConfig& cfg, Rng& rng);

  /// Distinct parameter tensors with stable names. Shared tensors appear once.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  PEIntegration pe_integration(const AttentionConfig& cfg) const { return {cfg.pe, pe}; }
};

/// mask[i][j] is true iff key j is in M(query i, keys). Every row must see at
/// least one key.
VisibilityMask build_mask(const FilterSpec& filter, std::size_t tq, std::size_t tk);

/// out[i] = sum_j w[i][j] values[j] with w the masked, row-normalized scores.
Tensor smooth(const Tensor& scores, const VisibilityMask& mask, const Tensor& values,
              double eps = 1e-12);

/// Kernel-smoother attention for one sequence: f_q [tq x d_model], f_k [tk x d_model].
Tensor attention_forward(const AttentionConfig& cfg, const AttentionParams& params,
                         const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                         std::span<const int> positions_k);

/// Batched variant: f_q [b*tq x d_model], f_k [b*tk x d_model], shared positions.
Tensor attention_forward_batched(const AttentionConfig& cfg, const AttentionParams& params,
                                 const Tensor& f_q, const Tensor& f_k,
                                 std::span<const int> positions_q,
                                 std::span<const int> positions_k, std::size_t batch);

/// Smoothing weights of every head for one sequence: [heads x tq x tk].
Tensor attention_weights(const AttentionConfig& cfg, const AttentionParams& params,
                         const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                         std::span<const int> positions_k);

/// Scaled dot-product softmax attention evaluated literally on x = f + t,
/// with row-max subtraction, per head, followed by the output projection.
/// Masked keys are dropped from the softmax. Plain loops, never on a tape.
Tensor reference_softmax_attention(const AttentionParams& params, std::size_t n_heads,
                                   const Tensor& x_q, const Tensor& x_k,
                                   const VisibilityMask* mask = nullptr);

}  // namespace kernatt
