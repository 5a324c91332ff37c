#pragma once

#include <span>
#include <string>
#include <vector>

#include "kernatt/kernel.hpp"
#include "kernatt/tensor.hpp"

namespace kernatt {

enum class PEMode { None, DirectSum, LookupTable, XLProduct, SymmetricProduct };
enum class PETableKind { Sinusoidal, Learned };

/// Denominator exponent base for the relative sine/cosine kernel:
/// 10000^(2p / 512) as printed, or 10000^(2p / d_k).
enum class FreqDenominator { Fixed512, Dk };

std::string to_string(PEMode mode);
PEMode parse_pe_mode(const std::string& name);
std::string to_string(PETableKind kind);
PETableKind parse_pe_table(const std::string& name);

/// Absolute positional embeddings, one row per position.
struct PETable {
  PETableKind kind = PETableKind::Sinusoidal;
  Tensor values;  // [t_max x d_model]
  std::size_t t_max = 0;
};

/// values[i][2p] = sin(i / 10000^(2p/d)), values[i][2p+1] = cos(i / 10000^(2p/d)).
PETable sinusoidal_pe(std::size_t t, std::size_t d_model);

/// One sinusoidal row for any (possibly negative) position.
std::vector<double> sinusoid_row(double position, std::size_t d_model);

struct PEConfig {
  PEMode mode = PEMode::None;
  PETableKind table = PETableKind::Sinusoidal;
  FreqDenominator freq_denominator = FreqDenominator::Fixed512;
  std::size_t t_max = 64;  // look-up-table span and learned-table length
};

/// Mode-specific parameters. Unused members stay undefined.
struct PEParams {
  Tensor lookup;   // LookupTable: [(2 t_max - 1) x d_k], row r <-> offset r - (t_max - 1)
  Tensor w_r;      // XLProduct: [d_model x d_k]
  Tensor w_f;      // SymmetricProduct: [d_model x d_k], content kernel
  Tensor w_t;      // SymmetricProduct: [d_model x d_k], time kernel
  Tensor learned;  // learned absolute table [t_max x d_model]
};

struct PEIntegration {
  PEConfig config;
  PEParams params;

  static PEIntegration init(const PEConfig& config, std::size_t d_model, std::size_t d_k,
                            Rng& rng);

  /// Absolute embeddings t for the given positions, [n x d_model]. Sinusoidal
  /// rows exist for every integer; learned rows only for [0, t_max).
  Tensor absolute(std::span<const int> positions, std::size_t d_model) const;
};

/// Joint-space kernel k((f_q, t_q), (f_k, t_k)) for every query/key pair.
/// Single head: returns [tq x tk].
Tensor joint_scores(const PEIntegration& pe, const KernelSpec& kspec, const KernelParams& kparams,
                    const Tensor& f_q, const Tensor& f_k, std::span<const int> positions_q,
                    std::span<const int> positions_k);

/// Batched multi-head form used by the attention layer. f_q is [b*tq x d_model],
/// f_k is [b*tk x d_model], kspec.d_k is the total projected width split evenly
/// over heads. Returns [b*heads x tq x tk].
Tensor joint_scores_batched(const PEIntegration& pe, const KernelSpec& kspec,
                            const KernelParams& kparams, const Tensor& f_q, const Tensor& f_k,
                            std::span<const int> positions_q, std::span<const int> positions_k,
                            std::size_t batch, std::size_t heads);

/// log of joint_scores_batched, for exp-family content kernels only.
Tensor joint_log_scores_batched(const PEIntegration& pe, const KernelSpec& kspec,
                                const KernelParams& kparams, const Tensor& f_q, const Tensor& f_k,
                                std::span<const int> positions_q,
                                std::span<const int> positions_k, std::size_t batch,
                                std::size_t heads);

/// exp(sum_p c[2p] sin(rel / 10000^(2p/denom)) + c[2p+1] cos(rel / 10000^(2p/denom))).
double xl_time_kernel_from_coefficients(std::span<const double> c, int rel, double denom = 512.0);

/// The relative time kernel with coefficients c = (f_q W_q) W_R^T inferred from
/// the query. f_q_row has d_model entries, W_q and W_R are [d_model x d_k].
double xl_time_kernel(std::span<const double> f_q_row, int rel, const Tensor& w_q,
                      const Tensor& w_r, double denom = 512.0);

/// Kernel-side projection parameters (value and output projections excluded).
std::size_t attention_param_count(PEMode mode, bool symmetric, std::size_t d_model,
                                  std::size_t d_k, std::size_t t_max = 64);

}  // namespace kernatt
