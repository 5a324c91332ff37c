#pragma once

// Backward-vs-central-difference comparison.
// The finite-difference side only ever sees detached tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kernatt/tensor.hpp"

namespace kernatt {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
};

/// Gradient of f with respect to every input, by tape and by finite differences.
inline GradCheck check_gradients(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                 double h = 1e-5) {
  Tape tape;
  std::vector<Tensor> watched;
  for (const auto& x : inputs) watched.push_back(tape.watch(x));
  backward(f(watched));

  GradCheck out;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    auto numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          auto args = inputs;
          args[n] = probe;
          return f(args).item();
        },
        inputs[n], h);
    double err = relative_error(watched[n].grad(), numeric.data());
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst_input = n;
    }
  }
  return out;
}

/// Scalar probe: sum(y * r) for a fixed random r of y's shape, so every output
/// entry carries a distinct weight.
inline Tensor weighted_sum(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

}  // namespace kernatt
