#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kernatt/tensor.hpp"

namespace kernatt {
namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::weak_ptr<TapeState> tape;
  bool attached = false;
};

using ImplPtr = std::shared_ptr<TensorImpl>;

struct Node {
  ImplPtr out;
  std::vector<ImplPtr> parents;
  // Receives d root / d out and accumulates into the parents.
  std::function<void(const std::vector<double>&)> backward;
};

struct TapeState {
  std::vector<Node> nodes;
  bool frozen = false;
};

}  // namespace detail

struct OpAccess {
  using ImplPtr = detail::ImplPtr;
  using BackwardFn = std::function<void(const std::vector<double>&)>;

  static const ImplPtr& impl(const Tensor& t) { return t.impl_; }

  /// Grad buffer of an input, allocated on first use. Returns nullptr for
  /// constants that are not on a tape.
  static std::vector<double>* grad_of(const ImplPtr& p) {
    if (!p->attached) return nullptr;
    if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
    return &p->grad;
  }

  /// Wraps freshly computed values; records a tape node when any input is
  /// attached. The backward closure should capture the inputs it needs.
  static Tensor make(Shape shape, std::vector<double> data,
                     std::initializer_list<const Tensor*> inputs, const char* op,
                     BackwardFn fn);

  /// Throws OverflowError when data holds a non-finite value.
  static void check_finite(const std::vector<double>& data, const char* op);
};

}  // namespace kernatt
