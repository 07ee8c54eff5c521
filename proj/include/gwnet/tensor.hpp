#pragma once

// Dense row-major tensor with tape-based reverse-mode differentiation.
// Values are templated on the scalar type; the project instantiates double
// (see the Tensor/Tape aliases at the bottom). Eigen provides the matrix
// kernels; everything else is plain loops.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/errors.hpp"

namespace gwnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <class Scalar>
struct TensorStorage {
  Shape shape;
  std::vector<Scalar> values;
  std::vector<Scalar> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

template <class Scalar>
class TapeT;

template <class Scalar>
class TensorT {
 public:
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<RowMat>;
  using ConstMatMap = Eigen::Map<const RowMat>;

  TensorT() = default;

  explicit TensorT(Shape shape, Scalar fill = Scalar(0)) {
    d_ = std::make_shared<TensorStorage<Scalar>>();
    d_->shape = std::move(shape);
    d_->values.assign(static_cast<std::size_t>(count(d_->shape)), fill);
  }

  TensorT(Shape shape, std::vector<Scalar> values) {
    if (count(shape) != static_cast<Index>(values.size()))
      throw DimensionError("tensor init: shape " + shape_to_string(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    d_ = std::make_shared<TensorStorage<Scalar>>();
    d_->shape = std::move(shape);
    d_->values = std::move(values);
  }

  static TensorT scalar(Scalar v) { return TensorT({1}, std::vector<Scalar>{v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  Index dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  Index numel() const { return static_cast<Index>(d_->values.size()); }
  bool is_scalar() const { return numel() == 1; }

  Scalar* data() { return d_->values.data(); }
  const Scalar* data() const { return d_->values.data(); }
  std::vector<Scalar>& values() { return d_->values; }
  const std::vector<Scalar>& values() const { return d_->values; }

  Scalar item() const {
    if (!is_scalar()) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return d_->values[0];
  }

  // Flat and multi-index element access (tests and kernels).
  Scalar& operator[](Index i) { return d_->values[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return d_->values[static_cast<std::size_t>(i)]; }

  Scalar& at(std::initializer_list<Index> idx) { return d_->values[static_cast<std::size_t>(offset(idx))]; }
  Scalar at(std::initializer_list<Index> idx) const { return d_->values[static_cast<std::size_t>(offset(idx))]; }

  bool requires_grad() const { return d_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return defined() && !d_->grad.empty(); }

  // Gradient buffer, allocated (zero-filled) on first use.
  std::vector<Scalar>& grad_buffer() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), Scalar(0));
    return d_->grad;
  }
  const std::vector<Scalar>& grad() const {
    if (d_->grad.empty()) throw ContractError("grad(): no gradient has been accumulated");
    return d_->grad;
  }
  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), Scalar(0));
  }

  bool same_storage(const TensorT& o) const { return d_ == o.d_; }

  // Deep copy of values only; grad state and tape history are not copied.
  TensorT clone() const {
    TensorT out;
    out.d_ = std::make_shared<TensorStorage<Scalar>>();
    out.d_->shape = d_->shape;
    out.d_->values = d_->values;
    out.d_->requires_grad = d_->requires_grad;
    return out;
  }

  // Rank-2 Eigen views over values and gradient.
  ConstMatMap mat() const {
    require_rank(2, "mat()");
    return ConstMatMap(data(), dim(0), dim(1));
  }
  MatMap mat_mut() {
    require_rank(2, "mat_mut()");
    return MatMap(data(), dim(0), dim(1));
  }
  MatMap grad_mat() {
    require_rank(2, "grad_mat()");
    return MatMap(grad_buffer().data(), dim(0), dim(1));
  }

  void require_rank(int r, const char* where) const {
    if (rank() != r)
      throw DimensionError(std::string(where) + ": expected rank " + std::to_string(r) + ", got shape " +
                           shape_to_string(shape()));
  }

  static Index count(const Shape& s) {
    Index n = 1;
    for (Index d : s) {
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(s));
      n *= d;
    }
    return n;
  }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw DimensionError("at(): index rank mismatch for shape " + shape_to_string(shape()));
    Index off = 0;
    int i = 0;
    for (Index v : idx) {
      off = off * d_->shape[static_cast<std::size_t>(i)] + v;
      ++i;
    }
    return off;
  }

  std::shared_ptr<TensorStorage<Scalar>> d_;

  friend class TapeT<Scalar>;
};

// Append-only record of one forward pass. Backward replays the closures in
// strict reverse insertion order, which is a valid topological order for a
// graph built front to back. One tape per thread; never shared.
template <class Scalar>
class TapeT {
 public:
  struct Node {
    TensorT<Scalar> result;
    std::function<void()> backward;
  };

  static TapeT& current() {
    thread_local TapeT tape;
    return tape;
  }

  bool enabled() const { return enabled_; }
  void set_enabled(bool v) { enabled_ = v; }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }

  void record(TensorT<Scalar> result, std::function<void()> fn) {
    result.set_requires_grad(true);
    nodes_.push_back(Node{std::move(result), std::move(fn)});
  }

  // True when the result of an op over these inputs should be recorded.
  template <class... Ts>
  bool tracks(const Ts&... inputs) const {
    return enabled_ && (... || inputs.requires_grad());
  }

  // Reverse sweep from a scalar root. Gradients of tensors produced on the
  // tape are pass-local (reset here); leaf gradients accumulate across calls.
  void backward(TensorT<Scalar> root) {
    if (!root.is_scalar()) throw ContractError("backward: root must be scalar, got shape " + shape_to_string(root.shape()));
    for (auto& n : nodes_) {
      n.result.grad_buffer();
      n.result.zero_grad();
    }
    root.grad_buffer()[0] = Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backward) it->backward();
  }

  // RAII guard that suspends recording (evaluation passes).
  struct Pause {
    Pause() : tape_(&current()), prev_(current().enabled()) { tape_->set_enabled(false); }
    ~Pause() { tape_->set_enabled(prev_); }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    TapeT* tape_;
    bool prev_;
  };

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

template <class Scalar>
void backward(const TensorT<Scalar>& root) {
  TapeT<Scalar>::current().backward(root);
}

namespace detail {

template <class Scalar>
void require_same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

template <class Scalar>
void accumulate(TensorT<Scalar>& t, const std::vector<Scalar>& contribution) {
  if (!t.requires_grad()) return;
  auto& g = t.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matrix product

template <class Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  a.require_rank(2, "matmul lhs");
  b.require_rank(2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  TensorT<Scalar> out({a.dim(0), b.dim(1)});
  out.mat_mut().noalias() = a.mat() * b.mat();

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a, b)) {
    TensorT<Scalar> ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc]() mutable {
      typename TensorT<Scalar>::ConstMatMap dz(oc.grad().data(), oc.dim(0), oc.dim(1));
      if (ac.requires_grad()) {
        typename TensorT<Scalar>::MatMap da(ac.grad_buffer().data(), ac.dim(0), ac.dim(1));
        da.noalias() += dz * bc.mat().transpose();
      }
      if (bc.requires_grad()) {
        typename TensorT<Scalar>::MatMap db(bc.grad_buffer().data(), bc.dim(0), bc.dim(1));
        db.noalias() += ac.mat().transpose() * dz;
      }
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> transpose2d(const TensorT<Scalar>& a) {
  a.require_rank(2, "transpose2d");
  TensorT<Scalar> out({a.dim(1), a.dim(0)});
  out.mat_mut() = a.mat().transpose();

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      typename TensorT<Scalar>::ConstMatMap dy(oc.grad().data(), oc.dim(0), oc.dim(1));
      if (ac.requires_grad()) {
        typename TensorT<Scalar>::MatMap da(ac.grad_buffer().data(), ac.dim(0), ac.dim(1));
        da.noalias() += dy.transpose();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise ops

template <class Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a, b)) {
    TensorT<Scalar> ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc]() mutable {
      detail::accumulate(ac, oc.grad());
      detail::accumulate(bc, oc.grad());
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a, b)) {
    TensorT<Scalar> ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc]() mutable {
      const auto& dy = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad_buffer();
        const Scalar* pb2 = bc.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad_buffer();
        const Scalar* pa2 = ac.data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dy[i] * pa2[i];
      }
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> scale(const TensorT<Scalar>& a, Scalar c) {
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) po[i] = c * pa[i];

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc, c]() mutable {
      if (!ac.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& ga = ac.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * dy[i];
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& a) {
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) po[i] = pa[i] > Scalar(0) ? pa[i] : Scalar(0);

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& ga = ac.grad_buffer();
      const Scalar* pa2 = ac.data();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (pa2[i] > Scalar(0)) ga[i] += dy[i];
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> sigmoid(const TensorT<Scalar>& a) {
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) {
    const Scalar x = pa[i];
    if (x >= Scalar(0)) {
      po[i] = Scalar(1) / (Scalar(1) + std::exp(-x));
    } else {
      const Scalar e = std::exp(x);
      po[i] = e / (Scalar(1) + e);
    }
  }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& ga = ac.grad_buffer();
      const Scalar* py = oc.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * py[i] * (Scalar(1) - py[i]);
    });
  }
  return out;
}

template <class Scalar>
TensorT<Scalar> tanh(const TensorT<Scalar>& a) {
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  Scalar* po = out.data();
  for (Index i = 0; i < out.numel(); ++i) po[i] = std::tanh(pa[i]);

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& ga = ac.grad_buffer();
      const Scalar* py = oc.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * (Scalar(1) - py[i] * py[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// row-wise softmax, max-subtracted for stability

template <class Scalar>
TensorT<Scalar> softmax_rows(const TensorT<Scalar>& a) {
  a.require_rank(2, "softmax_rows");
  const Index rows = a.dim(0), cols = a.dim(1);
  TensorT<Scalar> out(a.shape());
  const Scalar* pa = a.data();
  Scalar* po = out.data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = pa + r * cols;
    Scalar* orow = po + r * cols;
    Scalar mx = row[0];
    for (Index c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    Scalar sum = Scalar(0);
    for (Index c = 0; c < cols; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (Index c = 0; c < cols; ++c) orow[c] /= sum;
  }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc, rows, cols]() mutable {
      if (!ac.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& ga = ac.grad_buffer();
      const Scalar* py = oc.data();
      for (Index r = 0; r < rows; ++r) {
        const Scalar* yrow = py + r * cols;
        const Scalar* drow = dy.data() + r * cols;
        Scalar dot = Scalar(0);
        for (Index c = 0; c < cols; ++c) dot += drow[c] * yrow[c];
        Scalar* grow = ga.data() + r * cols;
        for (Index c = 0; c < cols; ++c) grow[c] += yrow[c] * (drow[c] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// full reduction

template <class Scalar>
TensorT<Scalar> sum(const TensorT<Scalar>& a) {
  Scalar s = Scalar(0);
  const Scalar* pa = a.data();
  for (Index i = 0; i < a.numel(); ++i) s += pa[i];
  TensorT<Scalar> out = TensorT<Scalar>::scalar(s);

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(a)) {
    TensorT<Scalar> ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      const Scalar d = oc.grad()[0];
      auto& ga = ac.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// finite-difference gradient verification
//
// Returns max over entries of |analytic - central| / max(1, |central|).
// The central-difference path evaluates f with the tape paused, so it is
// independent of every backward implementation it checks.

template <class Scalar>
Scalar grad_check(const std::function<TensorT<Scalar>(const TensorT<Scalar>&)>& f, TensorT<Scalar> x,
                  Scalar eps = Scalar(1e-6)) {
  if (eps <= Scalar(0)) throw ValidationError("grad_check: eps must be positive");

  x = x.clone();  // leave the caller's tensor untouched
  auto& tape = TapeT<Scalar>::current();
  const std::size_t mark = tape.size();
  x.set_requires_grad(true);
  x.zero_grad();
  TensorT<Scalar> y = f(x);
  if (!y.is_scalar()) throw ContractError("grad_check: f must return a scalar");
  tape.backward(y);
  std::vector<Scalar> analytic = x.grad_buffer();
  tape.truncate(mark);

  Scalar worst = Scalar(0);
  {
    typename TapeT<Scalar>::Pause pause;
    for (Index i = 0; i < x.numel(); ++i) {
      const Scalar orig = x[i];
      x[i] = orig + eps;
      const Scalar up = f(x).item();
      x[i] = orig - eps;
      const Scalar down = f(x).item();
      x[i] = orig;
      const Scalar central = (up - down) / (Scalar(2) * eps);
      const Scalar err = std::abs(analytic[static_cast<std::size_t>(i)] - central) /
                         std::max(Scalar(1), std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

using Tensor = TensorT<double>;
using Tape = TapeT<double>;

}  // namespace gwnet
