#pragma once

// Matrix-valued reverse-mode tape plus forward-mode duals.
//
// Every node holds a dense matrix. Batched evaluation stores one sample per
// row, so a "scalar" in the math is a B x 1 column here; true scalars are 1x1.
// Forward-mode quantities (Dual, Jet) are built out of tape nodes, so a single
// reverse sweep differentiates through state-space partials as well.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "symoden/errors.hpp"

namespace symoden::diffkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAffine,  // a * x + b with scalar a, b
  kTanh,
  kTanhTangent,  // (1 - y^2) * t with y = tanh output
  kSin,
  kCos,
  kSqrt,
  kMatMul,
  kAddRow,  // broadcast a 1 x k row over every row of the lhs
  kCol,
  kHCat,
  kSum,
};

struct Node {
  Matrix value;
  Op op = Op::kLeaf;
  int lhs = -1;
  int rhs = -1;
  double a = 1.0;
  double b = 0.0;
  int index = 0;
  std::vector<int> inputs;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }
  // Constants are leaves too; callers simply never ask for their gradient.
  Var constant(Matrix value) { return variable(std::move(value)); }
  Var constant(double value) { return variable(Matrix::Constant(1, 1, value)); }

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->node(id_).value; }

inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("scalar() on a non-1x1 node");
  }
  return v(0, 0);
}

namespace detail {

inline Tape& common_tape(const Var& x, const Var& y) {
  if (!x.valid() || !y.valid() || x.tape() != y.tape()) {
    throw ContractError("operands live on different tapes");
  }
  return *x.tape();
}

inline void require_same_shape(const Var& x, const Var& y, const char* op) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(x.rows()) + "x" +
                        std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                        std::to_string(y.cols()));
  }
}

inline Var binary(Op op, const Var& x, const Var& y, Matrix value) {
  Tape& t = common_tape(x, y);
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.lhs = x.id();
  n.rhs = y.id();
  return t.push(std::move(n));
}

inline Var unary(Op op, const Var& x, Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.lhs = x.id();
  return x.tape()->push(std::move(n));
}

}  // namespace detail

inline Var operator+(const Var& x, const Var& y) {
  detail::require_same_shape(x, y, "add");
  return detail::binary(Op::kAdd, x, y, x.value() + y.value());
}

inline Var operator-(const Var& x, const Var& y) {
  detail::require_same_shape(x, y, "sub");
  return detail::binary(Op::kSub, x, y, x.value() - y.value());
}

inline Var operator*(const Var& x, const Var& y) {
  detail::require_same_shape(x, y, "mul");
  return detail::binary(Op::kMul, x, y, x.value().cwiseProduct(y.value()));
}

inline Var operator/(const Var& x, const Var& y) {
  detail::require_same_shape(x, y, "div");
  return detail::binary(Op::kDiv, x, y, x.value().cwiseQuotient(y.value()));
}

/// a * x + b, elementwise.
inline Var affine(const Var& x, double a, double b) {
  Node n;
  n.value = (a * x.value().array() + b).matrix();
  n.op = Op::kAffine;
  n.lhs = x.id();
  n.a = a;
  n.b = b;
  return x.tape()->push(std::move(n));
}

inline Var operator-(const Var& x) { return affine(x, -1.0, 0.0); }
inline Var operator*(double s, const Var& x) { return affine(x, s, 0.0); }
inline Var operator*(const Var& x, double s) { return affine(x, s, 0.0); }
inline Var operator/(const Var& x, double s) { return affine(x, 1.0 / s, 0.0); }
inline Var operator+(const Var& x, double s) { return affine(x, 1.0, s); }
inline Var operator+(double s, const Var& x) { return affine(x, 1.0, s); }
inline Var operator-(const Var& x, double s) { return affine(x, 1.0, -s); }
inline Var operator-(double s, const Var& x) { return affine(x, -1.0, s); }

namespace detail {

/// Vectorised tanh: odd Taylor polynomial near zero, 1 - 2 / (exp(2x) + 1)
/// elsewhere. Accurate to a few ulp, and far faster than scalar libm calls.
inline Matrix fast_tanh(const Matrix& x) {
  const auto a = x.array();
  const auto x2 = a.square();
  const auto series = a * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
  Eigen::ArrayXXd wide = (2.0 * a).exp();
  wide = 1.0 - 2.0 / (wide + 1.0);
  return (a.abs() < 0.02).select(series, wide).matrix();
}

/// Fast path: a finite sum proves every entry is finite.
inline bool all_finite(const Matrix& m) { return std::isfinite(m.sum()) || m.allFinite(); }

}  // namespace detail

inline Var tanh(const Var& x) { return detail::unary(Op::kTanh, x, detail::fast_tanh(x.value())); }
/// (1 - y^2) * t, the tangent rule of tanh given its output y.
inline Var tanh_tangent(const Var& y, const Var& t) {
  detail::require_same_shape(y, t, "tanh_tangent");
  return detail::binary(Op::kTanhTangent, y, t,
                        ((1.0 - y.value().array().square()) * t.value().array()).matrix());
}

inline Var sin(const Var& x) { return detail::unary(Op::kSin, x, x.value().array().sin().matrix()); }
inline Var cos(const Var& x) { return detail::unary(Op::kCos, x, x.value().array().cos().matrix()); }
inline Var sqrt(const Var& x) { return detail::unary(Op::kSqrt, x, x.value().array().sqrt().matrix()); }

inline Var matmul(const Var& x, const Var& y) {
  if (x.cols() != y.rows()) {
    throw ContractError("matmul: inner dimensions " + std::to_string(x.cols()) + " vs " +
                        std::to_string(y.rows()));
  }
  return detail::binary(Op::kMatMul, x, y, x.value() * y.value());
}

inline Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ContractError("add_row: bias must be 1 x " + std::to_string(x.cols()));
  }
  return detail::binary(Op::kAddRow, x, row, x.value().rowwise() + row.value().row(0));
}

inline Var col(const Var& x, int j) {
  if (j < 0 || j >= x.cols()) {
    throw ContractError("col: index " + std::to_string(j) + " out of range");
  }
  Node n;
  n.value = x.value().col(j);
  n.op = Op::kCol;
  n.lhs = x.id();
  n.index = j;
  return x.tape()->push(std::move(n));
}

inline Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("hcat: nothing to concatenate");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows || p.tape() != parts.front().tape()) {
      throw ContractError("hcat: row count or tape mismatch");
    }
    cols += p.cols();
  }
  Node n;
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    n.value.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    n.inputs.push_back(p.id());
  }
  n.op = Op::kHCat;
  return parts.front().tape()->push(std::move(n));
}

inline Var hcat(std::initializer_list<Var> parts) {
  return hcat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var sum(const Var& x) {
  return detail::unary(Op::kSum, x, Matrix::Constant(1, 1, x.value().sum()));
}

/// Split a batch matrix into its columns.
inline std::vector<Var> columns(const Var& x) {
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(x.cols()));
  for (int j = 0; j < x.cols(); ++j) out.push_back(col(x, j));
  return out;
}

inline bool all_finite(const Var& x) { return x.value().allFinite(); }

/// Adjoints from one reverse sweep. Only leaves keep their adjoint; interior
/// adjoints are released as the sweep passes them.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Matrix> adjoints) : adj_(std::move(adjoints)) {}

  /// d(output)/d(leaf); zeros if the leaf does not influence the output.
  Matrix operator[](const Var& leaf) const {
    const auto i = static_cast<std::size_t>(leaf.id());
    if (i < adj_.size() && adj_[i].size() != 0) return adj_[i];
    return Matrix::Zero(leaf.rows(), leaf.cols());
  }
  double scalar(const Var& leaf) const { return (*this)[leaf](0, 0); }

 private:
  std::vector<Matrix> adj_;
};

namespace detail {

inline void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g) {
  Matrix& slot = adj[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

}  // namespace detail

/// Reverse sweep from a 1x1 output. Leaves the tape untouched.
inline Gradients backward(const Var& output) {
  if (!output.valid()) throw ContractError("backward on an empty Var");
  if (output.rows() != 1 || output.cols() != 1) {
    throw ContractError("backward needs a 1x1 output");
  }
  const Tape& tape = *output.tape();
  std::vector<Matrix> adj(tape.size());
  adj[static_cast<std::size_t>(output.id())] = Matrix::Ones(1, 1);

  for (int id = output.id(); id >= 0; --id) {
    Matrix& g = adj[static_cast<std::size_t>(id)];
    if (g.size() == 0) continue;
    const Node& n = tape.node(id);
    if (!detail::all_finite(n.value) || !detail::all_finite(g)) {
      throw NumericFault("non-finite value during backward at node " + std::to_string(id), id);
    }
    switch (n.op) {
      case Op::kLeaf:
        continue;  // keep leaf adjoints
      case Op::kAdd:
        detail::accumulate(adj, n.lhs, g);
        detail::accumulate(adj, n.rhs, g);
        break;
      case Op::kSub:
        detail::accumulate(adj, n.lhs, g);
        detail::accumulate(adj, n.rhs, -g);
        break;
      case Op::kMul:
        detail::accumulate(adj, n.lhs, g.cwiseProduct(tape.node(n.rhs).value));
        detail::accumulate(adj, n.rhs, g.cwiseProduct(tape.node(n.lhs).value));
        break;
      case Op::kDiv: {
        const Matrix& num = tape.node(n.lhs).value;
        const Matrix& den = tape.node(n.rhs).value;
        detail::accumulate(adj, n.lhs, g.cwiseQuotient(den));
        detail::accumulate(adj, n.rhs,
                           (-g.array() * num.array() / den.array().square()).matrix());
        break;
      }
      case Op::kAffine:
        detail::accumulate(adj, n.lhs, n.a * g);
        break;
      case Op::kTanh:
        detail::accumulate(adj, n.lhs, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::kTanhTangent: {
        const Matrix& y = tape.node(n.lhs).value;
        const Matrix& t = tape.node(n.rhs).value;
        detail::accumulate(adj, n.lhs, (-2.0 * g.array() * y.array() * t.array()).matrix());
        detail::accumulate(adj, n.rhs, (g.array() * (1.0 - y.array().square())).matrix());
        break;
      }
      case Op::kSin:
        detail::accumulate(adj, n.lhs,
                           (g.array() * tape.node(n.lhs).value.array().cos()).matrix());
        break;
      case Op::kCos:
        detail::accumulate(adj, n.lhs,
                           (-g.array() * tape.node(n.lhs).value.array().sin()).matrix());
        break;
      case Op::kSqrt:
        detail::accumulate(adj, n.lhs, (0.5 * g.array() / n.value.array()).matrix());
        break;
      case Op::kMatMul:
        detail::accumulate(adj, n.lhs, g * tape.node(n.rhs).value.transpose());
        detail::accumulate(adj, n.rhs, tape.node(n.lhs).value.transpose() * g);
        break;
      case Op::kAddRow:
        detail::accumulate(adj, n.lhs, g);
        detail::accumulate(adj, n.rhs, g.colwise().sum());
        break;
      case Op::kCol: {
        const Matrix& parent = tape.node(n.lhs).value;
        Matrix& slot = adj[static_cast<std::size_t>(n.lhs)];
        if (slot.size() == 0) slot = Matrix::Zero(parent.rows(), parent.cols());
        slot.col(n.index) += g;
        break;
      }
      case Op::kHCat: {
        Eigen::Index at = 0;
        for (int in : n.inputs) {
          const Eigen::Index c = tape.node(in).value.cols();
          detail::accumulate(adj, in, g.middleCols(at, c));
          at += c;
        }
        break;
      }
      case Op::kSum: {
        const Matrix& parent = tape.node(n.lhs).value;
        detail::accumulate(adj, n.lhs, Matrix::Constant(parent.rows(), parent.cols(), g(0, 0)));
        break;
      }
    }
    g.resize(0, 0);
  }
  return Gradients(std::move(adj));
}

// ---------------------------------------------------------------------------
// Forward mode

/// primal + tangent * delta with delta^2 = 0. T is double or Var.
template <class T>
struct Dual {
  T primal;
  T tangent;
};

template <class T>
Dual<T> operator+(const Dual<T>& x, const Dual<T>& y) {
  return {x.primal + y.primal, x.tangent + y.tangent};
}
template <class T>
Dual<T> operator-(const Dual<T>& x, const Dual<T>& y) {
  return {x.primal - y.primal, x.tangent - y.tangent};
}
template <class T>
Dual<T> operator*(const Dual<T>& x, const Dual<T>& y) {
  return {x.primal * y.primal, x.tangent * y.primal + x.primal * y.tangent};
}
template <class T>
Dual<T> operator/(const Dual<T>& x, const Dual<T>& y) {
  T q = x.primal / y.primal;
  return {q, (x.tangent - q * y.tangent) / y.primal};
}
template <class T>
Dual<T> operator*(double s, const Dual<T>& x) {
  return {s * x.primal, s * x.tangent};
}
template <class T>
Dual<T> tanh(const Dual<T>& x) {
  using std::tanh;
  T y = tanh(x.primal);
  return {y, (1.0 - y * y) * x.tangent};
}
template <class T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.primal), cos(x.primal) * x.tangent};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.primal), -(sin(x.primal) * x.tangent)};
}
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  T y = sqrt(x.primal);
  return {y, x.tangent / (2.0 * y)};
}

/// (Jf)(x) v by seeding duals with tangent v.
///   f: std::vector<Dual<T>> -> std::vector<Dual<T>>
template <class T, class F>
std::vector<T> jvp(F&& f, std::span<const T> x, std::span<const T> v) {
  if (x.size() != v.size()) {
    throw ContractError("jvp: dim(x)=" + std::to_string(x.size()) +
                        " but dim(v)=" + std::to_string(v.size()));
  }
  std::vector<Dual<T>> seeded;
  seeded.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) seeded.push_back({x[i], v[i]});
  const std::vector<Dual<T>> out = f(seeded);
  std::vector<T> tangents;
  tangents.reserve(out.size());
  for (const auto& d : out) tangents.push_back(d.tangent);
  return tangents;
}

/// A primal with several tangent directions at once. Each tangent has the
/// primal's shape. With zero directions it behaves like a plain Var.
struct Jet {
  Var value;
  std::vector<Var> tangent;

  std::size_t directions() const { return tangent.size(); }
};

/// Seed one tangent per column of `x`: direction j is the one-hot column j.
inline Jet seed_columns(const Var& x) {
  Jet out{x, {}};
  for (int j = 0; j < x.cols(); ++j) {
    Matrix onehot = Matrix::Zero(x.rows(), x.cols());
    onehot.col(j).setOnes();
    out.tangent.push_back(x.tape()->constant(std::move(onehot)));
  }
  return out;
}

/// Constant with `directions` zero tangents.
inline Jet constant_jet(const Var& x, std::size_t directions) {
  Jet out{x, {}};
  if (directions > 0) {
    const Var zero = x.tape()->constant(Matrix::Zero(x.rows(), x.cols()));
    out.tangent.assign(directions, zero);
  }
  return out;
}

namespace detail {
inline void require_same_directions(const Jet& x, const Jet& y) {
  if (x.directions() != y.directions()) throw ContractError("jet direction count mismatch");
}
}  // namespace detail

inline Jet operator+(const Jet& x, const Jet& y) {
  detail::require_same_directions(x, y);
  Jet out{x.value + y.value, {}};
  for (std::size_t i = 0; i < x.directions(); ++i) out.tangent.push_back(x.tangent[i] + y.tangent[i]);
  return out;
}

inline Jet operator-(const Jet& x, const Jet& y) {
  detail::require_same_directions(x, y);
  Jet out{x.value - y.value, {}};
  for (std::size_t i = 0; i < x.directions(); ++i) out.tangent.push_back(x.tangent[i] - y.tangent[i]);
  return out;
}

inline Jet operator*(const Jet& x, const Jet& y) {
  detail::require_same_directions(x, y);
  Jet out{x.value * y.value, {}};
  for (std::size_t i = 0; i < x.directions(); ++i) {
    out.tangent.push_back(x.tangent[i] * y.value + x.value * y.tangent[i]);
  }
  return out;
}

inline Jet operator/(const Jet& x, const Jet& y) {
  detail::require_same_directions(x, y);
  const Var q = x.value / y.value;
  Jet out{q, {}};
  for (std::size_t i = 0; i < x.directions(); ++i) {
    out.tangent.push_back((x.tangent[i] - q * y.tangent[i]) / y.value);
  }
  return out;
}

inline Jet affine(const Jet& x, double a, double b) {
  Jet out{affine(x.value, a, b), {}};
  for (const Var& t : x.tangent) out.tangent.push_back(a * t);
  return out;
}

inline Jet operator*(double s, const Jet& x) { return affine(x, s, 0.0); }
inline Jet operator+(const Jet& x, double s) { return affine(x, 1.0, s); }
inline Jet operator-(double s, const Jet& x) { return affine(x, -1.0, s); }
inline Jet operator-(const Jet& x) { return affine(x, -1.0, 0.0); }

inline Jet tanh(const Jet& x) {
  const Var y = tanh(x.value);
  Jet out{y, {}};
  for (const Var& t : x.tangent) out.tangent.push_back(tanh_tangent(y, t));
  return out;
}

inline Jet sin(const Jet& x) {
  Jet out{sin(x.value), {}};
  if (x.directions() == 0) return out;
  const Var c = cos(x.value);
  for (const Var& t : x.tangent) out.tangent.push_back(c * t);
  return out;
}

inline Jet cos(const Jet& x) {
  Jet out{cos(x.value), {}};
  if (x.directions() == 0) return out;
  const Var s = -sin(x.value);
  for (const Var& t : x.tangent) out.tangent.push_back(s * t);
  return out;
}

inline Jet sqrt(const Jet& x) {
  const Var y = sqrt(x.value);
  Jet out{y, {}};
  if (x.directions() == 0) return out;
  const Var two_y = 2.0 * y;
  for (const Var& t : x.tangent) out.tangent.push_back(t / two_y);
  return out;
}

/// x W with a constant-in-state weight W (tangents pass through W linearly).
inline Jet matmul(const Jet& x, const Var& w) {
  Jet out{matmul(x.value, w), {}};
  for (const Var& t : x.tangent) out.tangent.push_back(matmul(t, w));
  return out;
}

/// Bias add: tangents are unchanged.
inline Jet add_row(const Jet& x, const Var& row) { return {add_row(x.value, row), x.tangent}; }

inline Jet col(const Jet& x, int j) {
  Jet out{col(x.value, j), {}};
  for (const Var& t : x.tangent) out.tangent.push_back(col(t, j));
  return out;
}

inline Jet hcat(std::span<const Jet> parts) {
  if (parts.empty()) throw ContractError("hcat: nothing to concatenate");
  const std::size_t dirs = parts.front().directions();
  std::vector<Var> vals;
  for (const Jet& p : parts) {
    if (p.directions() != dirs) throw ContractError("jet direction count mismatch");
    vals.push_back(p.value);
  }
  Jet out{hcat(vals), {}};
  for (std::size_t i = 0; i < dirs; ++i) {
    std::vector<Var> ts;
    for (const Jet& p : parts) ts.push_back(p.tangent[i]);
    out.tangent.push_back(hcat(ts));
  }
  return out;
}

inline Jet hcat(std::initializer_list<Jet> parts) {
  return hcat(std::span<const Jet>(parts.begin(), parts.size()));
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<Matrix> analytic;
  std::vector<Matrix> numeric;
};

/// Compare reverse-mode gradients against central differences.
///   f(tape, leaves) must return a 1x1 Var built from `leaves`.
/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-8); any non-finite
/// entry makes the report infinite.
template <class F>
GradCheckReport grad_check(F&& f, const std::vector<Matrix>& inputs, double eps = 1e-6) {
  auto evaluate = [&](const std::vector<Matrix>& at) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(at.size());
    for (const Matrix& m : at) leaves.push_back(tape.variable(m));
    return f(tape, leaves).scalar();
  };

  GradCheckReport report;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.variable(m));
    const Var out = f(tape, leaves);
    try {
      const Gradients g = backward(out);
      for (const Var& leaf : leaves) report.analytic.push_back(g[leaf]);
    } catch (const NumericFault&) {
      report.max_rel_error = std::numeric_limits<double>::infinity();
      return report;
    }
  }

  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix num(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k](i);
      probe[k](i) = x0 + eps;
      const double up = evaluate(probe);
      probe[k](i) = x0 - eps;
      const double down = evaluate(probe);
      probe[k](i) = x0;
      num(i) = (up - down) / (2.0 * eps);
    }
    report.numeric.push_back(num);
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double a = report.analytic[k](i);
      const double n = report.numeric[k](i);
      if (!std::isfinite(a) || !std::isfinite(n)) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
        return report;
      }
      const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - n) / denom);
    }
  }
  return report;
}

/// Scalar-valued function of a flat vector: f(tape, vars) with one 1x1 Var per
/// coordinate. Returns the maximum relative error.
template <class F>
double grad_check_scalar(F&& f, const Vector& x, double eps = 1e-6) {
  std::vector<Matrix> inputs;
  for (Eigen::Index i = 0; i < x.size(); ++i) inputs.push_back(Matrix::Constant(1, 1, x(i)));
  return grad_check(std::forward<F>(f), inputs, eps).max_rel_error;
}

}  // namespace symoden::diffkit
