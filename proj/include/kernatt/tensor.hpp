#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kernatt/errors.hpp"

namespace kernatt {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// exp() arguments above this are reported as overflow instead of saturating.
inline constexpr double kExpOverflowThreshold = 700.0;

namespace detail {
struct TensorImpl;
struct TapeState;
}  // namespace detail

class Tape;

/// Dense row-major array of doubles. Copies share storage; the contents never
/// change after construction except the gradient buffer during backward and
/// explicit parameter updates through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Gradient accumulated by the last backward pass; empty when the tensor is
  /// not on a tape.
  std::span<const double> grad() const;
  bool has_grad() const;

  bool on_tape() const;
  /// Same values, no tape attachment.
  Tensor detach() const;

  /// In-place access for optimizers and checkpoint loading. Never call while
  /// the tensor participates in an unfinished tape.
  std::span<double> mutable_data();

  /// Identity of the underlying storage; aliases compare equal.
  const void* id() const { return impl_.get(); }

 private:
  friend class Tape;
  friend struct OpAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records primitive operations for one forward pass. Single use: once
/// backward has run the tape is frozen and rejects further recording.
class Tape {
 public:
  Tape();

  /// Registers a leaf that receives gradients. Returns a new tensor holding a
  /// copy of the values.
  Tensor watch(const Tensor& value);

  bool frozen() const;
  std::size_t size() const;

 private:
  friend struct OpAccess;
  std::shared_ptr<detail::TapeState> state_;
};

/// Reverse pass from a scalar tape-attached tensor. Every ancestor on the tape
/// ends up holding d root / d ancestor.
void backward(const Tensor& root);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a
/// time, on detached copies of x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

// ---------------------------------------------------------------------------
// Primitive operations. Each records itself on the tape of its attached
// inputs; inputs attached to different tapes are an error.

enum class ElementwiseOp { Add, Sub, Mul, Exp, Scale };

/// Binary ops accept equal shapes, a scalar b, or b of shape [n] broadcast over
/// the rows of a (last dimension n).
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr,
                   double c = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);

/// [m x k] * [k x n], or batched [g x m x k] * [g x k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T over the last two dimensions (2-D or batched 3-D).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Internal hook used by the op implementations in this library.
struct OpAccess;

}  // namespace kernatt
