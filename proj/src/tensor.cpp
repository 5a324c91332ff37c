#include "kernatt/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tensor_internal.hpp"

namespace kernatt {

using detail::ImplPtr;
using detail::TapeState;
using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

ImplPtr new_impl(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

void require(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(new_impl(std::move(shape), std::move(data))) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

const Shape& Tensor::shape() const {
  require(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  require(*this, "data");
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const { return {data().begin(), data().end()}; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

std::span<const double> Tensor::grad() const {
  require(*this, "grad");
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

bool Tensor::on_tape() const { return impl_ && impl_->attached; }

Tensor Tensor::detach() const {
  require(*this, "detach");
  return Tensor(impl_->shape, impl_->data);
}

std::span<double> Tensor::mutable_data() {
  require(*this, "mutable_data");
  return impl_->data;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : state_(std::make_shared<TapeState>()) {}

Tensor Tape::watch(const Tensor& value) {
  require(value, "watch");
  if (state_->frozen) throw TapeError("tape is frozen after backward");
  auto impl = new_impl(value.shape(), value.to_vector());
  impl->attached = true;
  impl->tape = state_;
  impl->grad.assign(impl->data.size(), 0.0);
  state_->nodes.push_back({impl, {}, {}});
  return Tensor(impl);
}

bool Tape::frozen() const { return state_->frozen; }
std::size_t Tape::size() const { return state_->nodes.size(); }

Tensor OpAccess::make(Shape shape, std::vector<double> data,
                      std::initializer_list<const Tensor*> inputs, const char* op,
                      BackwardFn fn) {
  std::shared_ptr<TapeState> tape;
  std::vector<ImplPtr> parents;
  for (const Tensor* in : inputs) {
    if (in == nullptr || !in->defined()) continue;
    const auto& p = in->impl_;
    parents.push_back(p);
    if (!p->attached) continue;
    auto t = p->tape.lock();
    if (!t) throw TapeError(std::string(op) + ": input's tape no longer exists");
    if (tape && tape != t) throw TapeError(std::string(op) + ": inputs live on different tapes");
    tape = std::move(t);
  }
  auto impl = new_impl(std::move(shape), std::move(data));
  if (tape) {
    if (tape->frozen) throw TapeError(std::string(op) + ": tape is frozen after backward");
    impl->attached = true;
    impl->tape = tape;
    tape->nodes.push_back({impl, std::move(parents), std::move(fn)});
  }
  return Tensor(impl);
}

void OpAccess::check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw OverflowError(std::string(op) + ": non-finite result");
  }
}

void backward(const Tensor& root) {
  require(root, "backward");
  if (root.numel() != 1) {
    throw TapeError("backward requires a scalar, got shape " + shape_str(root.shape()));
  }
  const auto& impl = OpAccess::impl(root);
  if (!impl->attached) throw TapeError("backward on a tensor that is not on a tape");
  auto tape = impl->tape.lock();
  if (!tape) throw TapeError("backward: tape no longer exists");
  if (tape->frozen) throw TapeError("backward: tape already consumed");

  impl->grad.assign(1, 1.0);
  for (auto it = tape->nodes.rbegin(); it != tape->nodes.rend(); ++it) {
    if (!it->backward || it->out->grad.empty()) continue;
    it->backward(it->out->grad);
  }
  tape->frozen = true;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  require(x, "finite_diff_grad");
  std::vector<double> base = x.to_vector();
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + h;
    double fp = f(Tensor(x.shape(), probe));
    probe[i] = base[i] - h;
    double fm = f(Tensor(x.shape(), probe));
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteError("finite_diff_grad: non-finite evaluation at coordinate " +
                           std::to_string(i));
    }
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Bcast { Same, Scalar, Row };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.numel() == 1) return Bcast::Scalar;
  if (b.rank() == 1 && a.shape().back() == b.dim(0)) return Bcast::Row;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

inline std::size_t bidx(Bcast k, std::size_t i, std::size_t n) {
  switch (k) {
    case Bcast::Same: return i;
    case Bcast::Scalar: return 0;
    case Bcast::Row: return i % n;
  }
  return i;
}

Tensor binary(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const char* name = op == ElementwiseOp::Add ? "add" : op == ElementwiseOp::Sub ? "sub" : "mul";
  auto kind = broadcast_kind(a, b, name);
  const std::size_t n = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    double y = bd[bidx(kind, i, n)];
    switch (op) {
      case ElementwiseOp::Add: out[i] = ad[i] + y; break;
      case ElementwiseOp::Sub: out[i] = ad[i] - y; break;
      default: out[i] = ad[i] * y; break;
    }
  }
  OpAccess::check_finite(out, name);
  auto pa = OpAccess::impl(a);
  auto pb = OpAccess::impl(b);
  return OpAccess::make(a.shape(), std::move(out), {&a, &b}, name,
                        [pa, pb, kind, n, op](const std::vector<double>& g) {
                          auto* ga = OpAccess::grad_of(pa);
                          auto* gb = OpAccess::grad_of(pb);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            std::size_t j = bidx(kind, i, n);
                            if (op == ElementwiseOp::Mul) {
                              if (ga) (*ga)[i] += g[i] * pb->data[j];
                              if (gb) (*gb)[j] += g[i] * pa->data[i];
                            } else {
                              if (ga) (*ga)[i] += g[i];
                              if (gb) (*gb)[j] += op == ElementwiseOp::Sub ? -g[i] : g[i];
                            }
                          }
                        });
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, double c) {
  require(a, "elementwise");
  switch (op) {
    case ElementwiseOp::Add:
    case ElementwiseOp::Sub:
    case ElementwiseOp::Mul:
      if (b == nullptr) throw DimensionError("binary elementwise op needs two operands");
      return binary(op, a, *b);
    case ElementwiseOp::Exp: {
      auto ad = a.data();
      std::vector<double> out(ad.size());
      for (std::size_t i = 0; i < ad.size(); ++i) {
        if (ad[i] > kExpOverflowThreshold || std::isnan(ad[i])) {
          throw OverflowError("exp: argument " + std::to_string(ad[i]) + " overflows");
        }
        out[i] = std::exp(ad[i]);
      }
      auto pa = OpAccess::impl(a);
      auto vals = std::make_shared<std::vector<double>>(out);
      return OpAccess::make(a.shape(), std::move(out), {&a}, "exp",
                            [pa, vals](const std::vector<double>& g) {
                              auto* ga = OpAccess::grad_of(pa);
                              if (!ga) return;
                              for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*vals)[i];
                            });
    }
    case ElementwiseOp::Scale: {
      auto ad = a.data();
      std::vector<double> out(ad.size());
      for (std::size_t i = 0; i < ad.size(); ++i) out[i] = c * ad[i];
      OpAccess::check_finite(out, "scale");
      auto pa = OpAccess::impl(a);
      return OpAccess::make(a.shape(), std::move(out), {&a}, "scale",
                            [pa, c](const std::vector<double>& g) {
                              auto* ga = OpAccess::grad_of(pa);
                              if (!ga) return;
                              for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
                            });
    }
  }
  throw Error("unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Add, a, &b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Sub, a, &b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Mul, a, &b); }
Tensor exp(const Tensor& a) { return elementwise(ElementwiseOp::Exp, a); }
Tensor scale(const Tensor& a, double c) { return elementwise(ElementwiseOp::Scale, a, nullptr, c); }

Tensor relu(const Tensor& a) {
  require(a, "relu");
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  auto pa = OpAccess::impl(a);
  return OpAccess::make(a.shape(), std::move(out), {&a}, "relu",
                        [pa](const std::vector<double>& g) {
                          auto* ga = OpAccess::grad_of(pa);
                          if (!ga) return;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (pa->data[i] > 0.0) (*ga)[i] += g[i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace {

struct Batched {
  std::size_t batch, m, k;
};

Batched as_batched(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw DimensionError(std::string(op) + ": expected a 2-D or 3-D tensor, got " +
                       shape_str(t.shape()));
}

// C[g] = A[g] * op(B[g]) where op transposes when trans_b is set.
Tensor product(const Tensor& a, const Tensor& b, bool trans_b, const char* name) {
  require(a, name);
  require(b, name);
  if (a.rank() != b.rank()) {
    throw DimensionError(std::string(name) + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  auto A = as_batched(a, name);
  auto B = as_batched(b, name);
  const std::size_t bk = trans_b ? B.k : B.m;
  const std::size_t n = trans_b ? B.m : B.k;
  if (A.batch != B.batch || A.k != bk) {
    throw DimensionError(std::string(name) + ": dimension mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const std::size_t G = A.batch, m = A.m, k = A.k;
  std::vector<double> out(G * m * n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t g = 0; g < G; ++g) {
    MapC Ag(ad.data() + g * m * k, m, k);
    Map Cg(out.data() + g * m * n, m, n);
    if (trans_b) {
      MapC Bg(bd.data() + g * n * k, n, k);
      Cg.noalias() = Ag * Bg.transpose();
    } else {
      MapC Bg(bd.data() + g * k * n, k, n);
      Cg.noalias() = Ag * Bg;
    }
  }
  OpAccess::check_finite(out, name);
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{G, m, n};
  auto pa = OpAccess::impl(a);
  auto pb = OpAccess::impl(b);
  return OpAccess::make(
      std::move(shape), std::move(out), {&a, &b}, name,
      [pa, pb, G, m, k, n, trans_b](const std::vector<double>& gout) {
        auto* ga = OpAccess::grad_of(pa);
        auto* gb = OpAccess::grad_of(pb);
        for (std::size_t g = 0; g < G; ++g) {
          MapC dC(gout.data() + g * m * n, m, n);
          MapC Ag(pa->data.data() + g * m * k, m, k);
          if (trans_b) {
            MapC Bg(pb->data.data() + g * n * k, n, k);
            if (ga) Map(ga->data() + g * m * k, m, k).noalias() += dC * Bg;
            if (gb) Map(gb->data() + g * n * k, n, k).noalias() += dC.transpose() * Ag;
          } else {
            MapC Bg(pb->data.data() + g * k * n, k, n);
            if (ga) Map(ga->data() + g * m * k, m, k).noalias() += dC * Bg.transpose();
            if (gb) Map(gb->data() + g * k * n, k, n).noalias() += Ag.transpose() * dC;
          }
        }
      });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return product(a, b, false, "matmul"); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return product(a, b, true, "matmul_nt"); }

Tensor transpose(const Tensor& a) {
  require(a, "transpose");
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  auto pa = OpAccess::impl(a);
  return OpAccess::make({n, m}, std::move(out), {&a}, "transpose",
                        [pa, m, n](const std::vector<double>& g) {
                          auto* ga = OpAccess::grad_of(pa);
                          if (!ga) return;
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
                        });
}

// ---------------------------------------------------------------------------
// Reductions and views

Tensor sum(const Tensor& a) {
  require(a, "sum");
  auto ad = a.data();
  double s = 0.0;
  for (double v : ad) s += v;
  auto pa = OpAccess::impl(a);
  return OpAccess::make({1}, {s}, {&a}, "sum", [pa](const std::vector<double>& g) {
    auto* ga = OpAccess::grad_of(pa);
    if (!ga) return;
    for (auto& v : *ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  require(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto pa = OpAccess::impl(a);
  return OpAccess::make(std::move(shape), a.to_vector(), {&a}, "reshape",
                        [pa](const std::vector<double>& g) {
                          auto* ga = OpAccess::grad_of(pa);
                          if (!ga) return;
                          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                        });
}

}  // namespace kernatt
