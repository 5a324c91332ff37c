#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kernatt/tensor.hpp"

namespace kernatt {

/// Boolean [rows x cols] matrix; entry (i, j) says whether key j is visible
/// to query i.
struct VisibilityMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  VisibilityMask() = default;
  VisibilityMask(std::size_t r, std::size_t c, bool value)
      : rows(r), cols(c), bits(r * c, value ? 1 : 0) {}

  bool operator()(std::size_t i, std::size_t j) const { return bits[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits[i * cols + j] = v ? 1 : 0; }
  std::size_t row_count(std::size_t i) const;
  bool operator==(const VisibilityMask&) const = default;
};

/// Layer normalization over the last dimension of x [n x d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Rows of table [v x d] selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Weighted mean of per-row cross-entropy, -log softmax(logits[i])[targets[i]].
/// Rows with zero weight are ignored; the weights must not all be zero.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> weights);

/// [b*t x h*dk] -> [b*h x t x dk], batch-major then head.
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
/// Inverse of split_heads: [b*h x t x dk] -> [b*t x h*dk].
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

/// Prepends the same prefix [m x d] to each of the batch sequences in x [b*t x d].
Tensor concat_prefix(const Tensor& prefix, const Tensor& x, std::size_t batch);

/// Repeats x [t x d] batch times: [b*t x d].
Tensor tile_rows(const Tensor& x, std::size_t batch);

/// out[g][i][j] = ||q[g][i] - k[g][j]||^2 for q [g x tq x d], k [g x tk x d].
Tensor pairwise_sq_dist(const Tensor& q, const Tensor& k);

/// out[g][i][j] = <q[g][i], table[index[i][j]] restricted to head g % heads>,
/// for q [g x tq x dk] and table [r x heads*dk]. index is row-major [tq x tk].
Tensor relative_logits(const Tensor& q, const Tensor& table, std::size_t heads,
                       std::span<const std::size_t> index, std::size_t tk);

/// Kernel-smoother weights: w[i][j] = s[i][j] / sum_{visible j'} s[i][j'] on
/// visible entries, 0 elsewhere. scores is [tq x tk] or [g x tq x tk]; the mask
/// is shared across g. Negative visible scores raise InvalidKernelError and a
/// row sum below eps raises DegenerateDenominatorError.
Tensor masked_normalize(const Tensor& scores, const VisibilityMask& mask, double eps = 1e-12);

/// Same weights computed from log scores: exp(l[i][j] - m_i) normalised over
/// the visible keys of row i, with m_i the largest visible log score.
Tensor masked_softmax(const Tensor& log_scores, const VisibilityMask& mask);

}  // namespace kernatt
