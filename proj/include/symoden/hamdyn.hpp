#pragma once

// Vector fields of the model variants.
//
// Canonical state layouts:
//   momentum form   (q[n], p[n])                      used by SymRn
//   velocity form   (r[n], cos phi[m], sin phi[m], r'[n], phi'[m])
// A bundle may carry `state_order` to read states stored in another column
// order (canonical column i is stored column state_order[i]).

#include <Eigen/Dense>
#include <json.hpp>

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "symoden/diffkit.hpp"
#include "symoden/errors.hpp"
#include "symoden/netcore.hpp"

namespace symoden::hamdyn {

using diffkit::Jet;
using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;

enum class Variant { kSymRn, kSymEmbedded, kSymHybrid, kUnstructured, kNaive, kGeometric };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kSymRn: return "symoden-rn";
    case Variant::kSymEmbedded: return "symoden-embedded";
    case Variant::kSymHybrid: return "symoden-hybrid";
    case Variant::kUnstructured: return "unstructured";
    case Variant::kNaive: return "naive";
    case Variant::kGeometric: return "geometric";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::kSymRn, Variant::kSymEmbedded, Variant::kSymHybrid,
                    Variant::kUnstructured, Variant::kNaive, Variant::kGeometric}) {
    if (s == to_string(v)) return v;
  }
  throw ContractError("unknown variant '" + s + "'");
}

inline bool is_structured(Variant v) {
  return v == Variant::kSymRn || v == Variant::kSymEmbedded || v == Variant::kSymHybrid;
}

struct Dims {
  int n = 0;            // translational coordinates
  int m = 0;            // angles
  int control = 1;
  bool momentum = false;  // (q, p) state instead of (coords, velocities)

  int dof() const { return n + m; }
  int coords() const { return n + 2 * m; }
  int state() const { return coords() + dof(); }

  bool operator==(const Dims&) const = default;
};

/// Closed-form component used in place of a net: maps a coordinate Jet to an
/// output Jet carrying the same number of tangent directions.
using AnalyticFn = std::function<Jet(const Jet&)>;

struct Component {
  std::variant<netcore::MlpParams, AnalyticFn> impl;

  bool analytic() const { return std::holds_alternative<AnalyticFn>(impl); }
  const netcore::MlpParams& net() const { return std::get<netcore::MlpParams>(impl); }
  netcore::MlpParams& net() { return std::get<netcore::MlpParams>(impl); }
};

namespace names {
inline constexpr const char* kMassInv = "mass_inv";
inline constexpr const char* kPotential = "potential";
inline constexpr const char* kInputMatrix = "input_matrix";
inline constexpr const char* kHamiltonian = "hamiltonian";
inline constexpr const char* kDynamics = "dynamics";
}  // namespace names

struct ModelBundle {
  Variant variant = Variant::kSymRn;
  Dims dims;
  double epsilon = 0.01;
  std::vector<int> state_order;  // empty: canonical order
  std::map<std::string, Component> components;

  bool has(const std::string& name) const { return components.count(name) != 0; }

  const Component& at(const std::string& name) const {
    auto it = components.find(name);
    if (it == components.end()) {
      throw ContractError(std::string(to_string(variant)) + " bundle has no '" + name + "' component");
    }
    return it->second;
  }

  /// Expected (input, output) widths of each component this variant needs.
  std::map<std::string, std::pair<int, int>> required_components() const {
    const int c = dims.coords(), k = dims.dof(), u = dims.control;
    std::map<std::string, std::pair<int, int>> req;
    switch (variant) {
      case Variant::kSymRn:
      case Variant::kSymEmbedded:
      case Variant::kSymHybrid:
        req[names::kMassInv] = {c, netcore::tri_count(k)};
        req[names::kPotential] = {c, 1};
        req[names::kInputMatrix] = {c, k * u};
        break;
      case Variant::kUnstructured:
        req[names::kHamiltonian] = {c + k, 1};
        req[names::kInputMatrix] = {c, k * u};
        if (!dims.momentum) req[names::kMassInv] = {c, netcore::tri_count(k)};
        break;
      case Variant::kNaive:
        req[names::kDynamics] = {dims.state() + u, dims.state()};
        break;
      case Variant::kGeometric:
        req[names::kDynamics] = {c + k + u, 2 * k};
        req[names::kMassInv] = {c, netcore::tri_count(k)};
        break;
    }
    return req;
  }

  void validate() const {
    if (dims.n < 0 || dims.m < 0 || dims.dof() < 1 || dims.control < 1) {
      throw ContractError("bundle dims must have n, m >= 0, n + m >= 1, control >= 1");
    }
    if (dims.momentum && dims.m != 0) throw ContractError("momentum-form state has no angles");
    switch (variant) {
      case Variant::kSymRn:
        if (!dims.momentum) throw ContractError("symoden-rn uses the (q, p) layout");
        break;
      case Variant::kSymEmbedded:
        if (dims.momentum || dims.n != 0 || dims.m < 1) {
          throw ContractError("symoden-embedded needs only angles (n = 0, m >= 1)");
        }
        break;
      case Variant::kSymHybrid:
      case Variant::kGeometric:
        if (dims.momentum) throw ContractError(std::string(to_string(variant)) + " uses the velocity layout");
        break;
      default:
        break;
    }
    if (!state_order.empty()) {
      std::vector<int> seen(static_cast<std::size_t>(dims.state()), 0);
      if (state_order.size() != seen.size()) throw ContractError("state_order has the wrong length");
      for (int i : state_order) {
        if (i < 0 || i >= dims.state() || seen[static_cast<std::size_t>(i)]++) {
          throw ContractError("state_order is not a permutation");
        }
      }
    }
    const auto req = required_components();
    for (const auto& [name, io] : req) {
      const Component& comp = at(name);
      if (comp.analytic()) continue;
      const auto& spec = comp.net().spec;
      if (spec.input() != io.first || spec.output() != io.second) {
        throw ContractError("component '" + name + "' is " + spec.describe() + " but needs input " +
                            std::to_string(io.first) + " and output " + std::to_string(io.second));
      }
      comp.net().validate();
    }
    for (const auto& [name, comp] : components) {
      if (!req.count(name)) {
        throw ContractError("component '" + name + "' is not used by " + to_string(variant));
      }
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, comp] : components) {
      if (!comp.analytic()) n += comp.net().parameter_count();
    }
    return n;
  }

  /// Trainable tensors in a fixed order (component name, then layer).
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto& [name, comp] : components) {
      if (comp.analytic()) continue;
      for (Matrix* t : comp.net().tensors()) out.push_back(t);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Small helpers on lists of B x 1 columns

namespace detail {

using Cols = std::vector<Var>;

inline Cols slice(const Cols& v, int from, int count) {
  return Cols(v.begin() + from, v.begin() + from + count);
}

inline Cols cat(std::initializer_list<Cols> parts) {
  Cols out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline Var hcat_cols(const Cols& cols) { return diffkit::hcat(std::span<const Var>(cols)); }

/// y = A x for a K x K matrix of columns.
inline Cols matvec(const std::vector<Cols>& a, const Cols& x) {
  Cols y;
  for (const auto& row : a) {
    Var acc = row[0] * x[0];
    for (std::size_t j = 1; j < x.size(); ++j) acc = acc + row[j] * x[j];
    y.push_back(acc);
  }
  return y;
}

inline Var dot(const Cols& a, const Cols& b) {
  Var acc = a[0] * b[0];
  for (std::size_t i = 1; i < a.size(); ++i) acc = acc + a[i] * b[i];
  return acc;
}

/// Per-row conditioning of a symmetric K x K batch; throws on trouble.
inline void check_conditioning(const std::vector<Cols>& a) {
  const std::size_t k = a.size();
  const Eigen::Index rows = a[0][0].rows();
  for (Eigen::Index b = 0; b < rows; ++b) {
    double lo, hi;
    if (k == 1) {
      lo = hi = a[0][0].value()(b, 0);
    } else if (k == 2) {
      const double p = a[0][0].value()(b, 0), q = a[1][1].value()(b, 0), r = a[0][1].value()(b, 0);
      const double mid = 0.5 * (p + q), rad = std::hypot(0.5 * (p - q), r);
      lo = mid - rad;
      hi = mid + rad;
    } else {
      Matrix m(k, k);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) m(i, j) = a[i][j].value()(b, 0);
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
      lo = es.eigenvalues().minCoeff();
      hi = es.eigenvalues().maxCoeff();
    }
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo <= 0.0 || hi / lo > 1e12) {
      throw NumericFault("inverse mass matrix is singular or ill-conditioned (cond > 1e12) at batch row " +
                             std::to_string(b),
                         static_cast<long>(b));
    }
  }
}

/// Solve A x = b with A symmetric positive definite via its Cholesky factor.
inline Cols solve_spd(const std::vector<Cols>& a, const Cols& b) {
  check_conditioning(a);
  const std::size_t k = a.size();
  std::vector<Cols> l(k, Cols(k));
  for (std::size_t j = 0; j < k; ++j) {
    Var d = a[j][j];
    for (std::size_t s = 0; s < j; ++s) d = d - l[j][s] * l[j][s];
    l[j][j] = diffkit::sqrt(d);
    for (std::size_t i = j + 1; i < k; ++i) {
      Var e = a[i][j];
      for (std::size_t s = 0; s < j; ++s) e = e - l[i][s] * l[j][s];
      l[i][j] = e / l[j][j];
    }
  }
  Cols y(k);
  for (std::size_t i = 0; i < k; ++i) {
    Var acc = b[i];
    for (std::size_t s = 0; s < i; ++s) acc = acc - l[i][s] * y[s];
    y[i] = acc / l[i][i];
  }
  Cols x(k);
  for (std::size_t i = k; i-- > 0;) {
    Var acc = y[i];
    for (std::size_t s = i + 1; s < k; ++s) acc = acc - l[s][i] * x[s];
    x[i] = acc / l[i][i];
  }
  return x;
}

}  // namespace detail

/// Inverse mass matrix as K x K Jets, M^-1 = L L^T + eps I.
using JetMatrix = std::vector<std::vector<Jet>>;

/// A bundle whose nets are bound to a tape. Everything it builds lives on
/// that tape, so one reverse sweep reaches every parameter.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelBundle& model) : tape_(&tape), model_(&model) {
    model.validate();
    for (const auto& [name, comp] : model.components) {
      if (!comp.analytic()) nets_.emplace(name, netcore::bind(tape, comp.net()));
    }
  }

  const ModelBundle& model() const { return *model_; }
  Tape& tape() const { return *tape_; }

  /// Leaves in the order of ModelBundle::tensors().
  std::vector<Var> leaves() const {
    std::vector<Var> out;
    for (const auto& [name, net] : nets_) {
      for (const Var& v : net.leaves()) out.push_back(v);
    }
    return out;
  }

  Jet eval(const std::string& name, const Jet& input) const {
    const Component& comp = model_->at(name);
    if (comp.analytic()) return std::get<AnalyticFn>(comp.impl)(input);
    return netcore::forward(nets_.at(name), input);
  }

  Var eval(const std::string& name, const Var& input) const { return eval(name, Jet{input, {}}).value; }

  Var to_canonical(const Var& state) const { return permute(state, false); }
  Var from_canonical(const Var& state) const { return permute(state, true); }

  /// State derivative for a batch of states (B x S, stored order) and
  /// controls (B x control).
  Var field(const Var& state, const Var& u) const {
    check_shapes(state, u);
    const Var x = to_canonical(state);
    Var out;
    switch (model_->variant) {
      case Variant::kSymRn:
        out = momentum_field(x, u);
        break;
      case Variant::kUnstructured:
        out = model_->dims.momentum ? momentum_field(x, u) : velocity_field(x, u);
        break;
      case Variant::kNaive:
        out = eval(names::kDynamics, diffkit::hcat({x, u}));
        break;
      case Variant::kSymEmbedded:
      case Variant::kSymHybrid:
      case Variant::kGeometric:
        out = velocity_field(x, u);
        break;
    }
    return from_canonical(out);
  }

  /// Model energy per batch row (B x 1).
  Var energy(const Var& state) const {
    const Dims& d = model_->dims;
    if (model_->variant == Variant::kNaive || model_->variant == Variant::kGeometric) {
      throw UnsupportedQuery(std::string(to_string(model_->variant)) + " models define no energy");
    }
    if (state.cols() != d.state()) throw ContractError("state has the wrong width for this model");
    const Var x = to_canonical(state);
    const detail::Cols cols = diffkit::columns(x);
    const int k = d.dof();
    const detail::Cols c = detail::slice(cols, 0, d.coords());
    const detail::Cols tail = detail::slice(cols, d.coords(), k);
    const Var cv = detail::hcat_cols(c);
    detail::Cols p = tail;
    if (!d.momentum) p = detail::solve_spd(primal(mass_inv(Jet{cv, {}})), tail);
    if (model_->variant == Variant::kUnstructured) {
      return eval(names::kHamiltonian, detail::hcat_cols(detail::cat({c, p})));
    }
    const auto minv = primal(mass_inv(Jet{cv, {}}));
    const Var kinetic = 0.5 * detail::dot(p, detail::matvec(minv, p));
    return kinetic + eval(names::kPotential, cv);
  }

  JetMatrix mass_inv(const Jet& coords) const {
    const int k = model_->dims.dof();
    const Jet tri = eval(names::kMassInv, coords);
    return netcore::mass_inv_from_tri<Jet>([&](int i) { return diffkit::col(tri, i); }, k, model_->epsilon);
  }

  /// g as K x control columns evaluated at coordinates.
  std::vector<detail::Cols> input_matrix(const Var& coords) const {
    const Dims& d = model_->dims;
    const detail::Cols flat = diffkit::columns(eval(names::kInputMatrix, coords));
    std::vector<detail::Cols> g(static_cast<std::size_t>(d.dof()));
    for (int i = 0; i < d.dof(); ++i) g[i] = detail::slice(flat, i * d.control, d.control);
    return g;
  }

  static std::vector<detail::Cols> primal(const JetMatrix& a) {
    std::vector<detail::Cols> out;
    for (const auto& row : a) {
      detail::Cols r;
      for (const Jet& e : row) r.push_back(e.value);
      out.push_back(std::move(r));
    }
    return out;
  }

 private:
  void check_shapes(const Var& state, const Var& u) const {
    const Dims& d = model_->dims;
    if (state.cols() != d.state() || u.cols() != d.control || u.rows() != state.rows()) {
      throw ContractError("field expects state B x " + std::to_string(d.state()) + " and control B x " +
                          std::to_string(d.control) + ", got " + std::to_string(state.rows()) + " x " +
                          std::to_string(state.cols()) + " and " + std::to_string(u.rows()) + " x " +
                          std::to_string(u.cols()));
    }
  }

  Var permute(const Var& x, bool inverse) const {
    const auto& order = model_->state_order;
    if (order.empty()) return x;
    const detail::Cols cols = diffkit::columns(x);
    detail::Cols out(cols.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (inverse) {
        out[static_cast<std::size_t>(order[i])] = cols[i];
      } else {
        out[i] = cols[static_cast<std::size_t>(order[i])];
      }
    }
    return detail::hcat_cols(out);
  }

  detail::Cols control_term(const Var& coords, const Var& u) const {
    const auto g = input_matrix(coords);
    const detail::Cols uc = diffkit::columns(u);
    detail::Cols out;
    for (const auto& row : g) out.push_back(detail::dot(row, uc));
    return out;
  }

  // (q, p) layout: SymRn and unstructured-on-R^n.
  Var momentum_field(const Var& x, const Var& u) const {
    const int n = model_->dims.n;
    const detail::Cols cols = diffkit::columns(x);
    const detail::Cols q = detail::slice(cols, 0, n);
    const detail::Cols p = detail::slice(cols, n, n);
    const Var qv = detail::hcat_cols(q);
    detail::Cols qdot, dHdq;
    if (model_->variant == Variant::kSymRn) {
      const Jet qj = diffkit::seed_columns(qv);
      const JetMatrix minv = mass_inv(qj);
      const Jet v = eval(names::kPotential, qj);
      qdot = detail::matvec(primal(minv), p);
      dHdq = kinetic_partials(minv, p, v);
    } else {
      const Jet h = eval(names::kHamiltonian, diffkit::seed_columns(x));
      dHdq = detail::slice(h.tangent, 0, n);
      qdot = detail::slice(h.tangent, n, n);
    }
    const detail::Cols gu = control_term(qv, u);
    detail::Cols pdot;
    for (int i = 0; i < n; ++i) pdot.push_back(gu[i] - dHdq[i]);
    return detail::hcat_cols(detail::cat({qdot, pdot}));
  }

  // dH/dc_j = 1/2 p^T (dM^-1/dc_j) p + dV/dc_j for every seeded direction j.
  static detail::Cols kinetic_partials(const JetMatrix& minv, const detail::Cols& p, const Jet& v) {
    const std::size_t k = p.size();
    detail::Cols out;
    for (std::size_t j = 0; j < v.directions(); ++j) {
      Var quad = minv[0][0].tangent[j] * p[0] * p[0];
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
          if (a == 0 && b == 0) continue;
          const Var term = minv[a][b].tangent[j] * p[a] * p[b];
          quad = quad + (a == b ? term : 2.0 * term);
        }
      }
      out.push_back(0.5 * quad + v.tangent[j]);
    }
    return out;
  }

  // (r, cos, sin, r', phi') layout: SymEmbedded, SymHybrid, Unstructured and
  // Geometric on R^n x T^m.
  Var velocity_field(const Var& x, const Var& u) const {
    const Dims& d = model_->dims;
    const int n = d.n, m = d.m, k = d.dof(), nc = d.coords();
    const detail::Cols cols = diffkit::columns(x);
    const detail::Cols c = detail::slice(cols, 0, nc);
    const detail::Cols cs = detail::slice(cols, n, m);
    const detail::Cols sn = detail::slice(cols, n + m, m);
    const detail::Cols vel = detail::slice(cols, nc, k);
    const Var cv = detail::hcat_cols(c);

    const Jet cj = diffkit::seed_columns(cv);
    const JetMatrix minv = mass_inv(cj);
    const auto minv0 = primal(minv);
    const detail::Cols p = detail::solve_spd(minv0, vel);

    detail::Cols qdot, pdot;
    if (model_->variant == Variant::kGeometric) {
      const detail::Cols out =
          diffkit::columns(eval(names::kDynamics, detail::hcat_cols(detail::cat({c, p, diffkit::columns(u)}))));
      qdot = detail::slice(out, 0, k);
      pdot = detail::slice(out, k, k);
    } else {
      detail::Cols dHdc;
      if (model_->variant == Variant::kUnstructured) {
        const Jet h = eval(names::kHamiltonian, diffkit::seed_columns(detail::hcat_cols(detail::cat({c, p}))));
        dHdc = detail::slice(h.tangent, 0, nc);
        qdot = detail::slice(h.tangent, nc, k);
      } else {
        const Jet v = eval(names::kPotential, cj);
        dHdc = kinetic_partials(minv, p, v);
        qdot = detail::matvec(minv0, p);
      }
      const detail::Cols gu = control_term(cv, u);
      for (int i = 0; i < n; ++i) pdot.push_back(gu[i] - dHdc[i]);
      for (int i = 0; i < m; ++i) {
        pdot.push_back(sn[i] * dHdc[n + i] - cs[i] * dHdc[n + m + i] + gu[n + i]);
      }
    }

    // Coordinate rates, then d/dt M^-1 as the directional derivative along them.
    detail::Cols cdot = detail::slice(qdot, 0, n);
    for (int i = 0; i < m; ++i) cdot.push_back(-(sn[i] * qdot[n + i]));
    for (int i = 0; i < m; ++i) cdot.push_back(cs[i] * qdot[n + i]);

    std::vector<detail::Cols> dminv(static_cast<std::size_t>(k), detail::Cols(k));
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        Var acc = minv[a][b].tangent[0] * cdot[0];
        for (int j = 1; j < nc; ++j) acc = acc + minv[a][b].tangent[j] * cdot[j];
        dminv[a][b] = acc;
      }
    }
    const detail::Cols a1 = detail::matvec(dminv, p);
    const detail::Cols a2 = detail::matvec(minv0, pdot);
    detail::Cols vdot;
    for (int i = 0; i < k; ++i) vdot.push_back(a1[i] + a2[i]);
    return detail::hcat_cols(detail::cat({cdot, vdot}));
  }

  Tape* tape_;
  const ModelBundle* model_;
  std::map<std::string, netcore::BoundMlp> nets_;
};

// ---------------------------------------------------------------------------
// Plain-value entry points

inline Matrix field_batch(const ModelBundle& model, const Matrix& states, const Matrix& controls) {
  Tape tape;
  BoundModel bm(tape, model);
  return bm.field(tape.constant(states), tape.constant(controls)).value();
}

inline Vector field(const ModelBundle& model, const Vector& state, const Vector& u) {
  return field_batch(model, state.transpose(), u.transpose()).row(0).transpose();
}

inline double energy_of(const ModelBundle& model, const Vector& state) {
  Tape tape;
  BoundModel bm(tape, model);
  return bm.energy(tape.constant(Matrix(state.transpose()))).scalar();
}

inline Vector energy_batch(const ModelBundle& model, const Matrix& states) {
  Tape tape;
  BoundModel bm(tape, model);
  return bm.energy(tape.constant(states)).value().col(0);
}

namespace detail {
inline void require_variant(const ModelBundle& m, std::initializer_list<Variant> ok, const char* fn) {
  for (Variant v : ok) {
    if (m.variant == v) return;
  }
  throw ContractError(std::string(fn) + " does not accept a " + to_string(m.variant) + " bundle");
}

inline Vector concat(std::initializer_list<const Vector*> parts) {
  Eigen::Index n = 0;
  for (const Vector* p : parts) n += p->size();
  Vector out(n);
  Eigen::Index at = 0;
  for (const Vector* p : parts) {
    out.segment(at, p->size()) = *p;
    at += p->size();
  }
  return out;
}

inline void require_canonical(const ModelBundle& m) {
  if (!m.state_order.empty()) throw ContractError("component-wise entry points need canonical state order");
}
}  // namespace detail

inline std::pair<Vector, Vector> vector_field_rn(const ModelBundle& model, const Vector& q, const Vector& p,
                                                 const Vector& u) {
  detail::require_variant(model, {Variant::kSymRn}, "vector_field_rn");
  if (q.size() != model.dims.n || p.size() != model.dims.n) throw ContractError("q and p must have length n");
  const Vector f = field(model, detail::concat({&q, &p}), u);
  return {f.head(model.dims.n), f.tail(model.dims.n)};
}

struct EmbeddedRates {
  Vector x1dot, x2dot, x3dot;
};

inline EmbeddedRates vector_field_embedded(const ModelBundle& model, const Vector& x1, const Vector& x2,
                                           const Vector& x3, const Vector& u) {
  detail::require_variant(model, {Variant::kSymEmbedded}, "vector_field_embedded");
  detail::require_canonical(model);
  const int m = model.dims.m;
  if (x1.size() != m || x2.size() != m || x3.size() != m) throw ContractError("x1, x2, x3 must have length m");
  const Vector f = field(model, detail::concat({&x1, &x2, &x3}), u);
  return {f.segment(0, m), f.segment(m, m), f.segment(2 * m, m)};
}

inline Vector vector_field_hybrid(const ModelBundle& model, const Vector& x1, const Vector& x2, const Vector& x3,
                                  const Vector& x4, const Vector& x5, const Vector& u) {
  detail::require_variant(model, {Variant::kSymHybrid}, "vector_field_hybrid");
  detail::require_canonical(model);
  const Dims& d = model.dims;
  if (x1.size() != d.n || x4.size() != d.n || x2.size() != d.m || x3.size() != d.m || x5.size() != d.m) {
    throw ContractError("hybrid state blocks have the wrong lengths");
  }
  return field(model, detail::concat({&x1, &x2, &x3, &x4, &x5}), u);
}

inline Vector vector_field_unstructured(const ModelBundle& model, const Vector& state, const Vector& u) {
  detail::require_variant(model, {Variant::kUnstructured}, "vector_field_unstructured");
  return field(model, state, u);
}

inline Vector vector_field_naive(const ModelBundle& model, const Vector& state, const Vector& u) {
  detail::require_variant(model, {Variant::kNaive}, "vector_field_naive");
  return field(model, state, u);
}

inline Vector vector_field_geometric(const ModelBundle& model, const Vector& state, const Vector& u) {
  detail::require_variant(model, {Variant::kGeometric}, "vector_field_geometric");
  return field(model, state, u);
}

using PlainField = std::function<Vector(const Vector& x, const Vector& u)>;

/// Field on the stacked vector (x, u) whose control block has zero rate.
inline std::function<Vector(const Vector&)> augment_with_control(PlainField f, int control_dim) {
  return [f = std::move(f), control_dim](const Vector& xu) {
    const Eigen::Index nx = xu.size() - control_dim;
    if (nx < 0) throw ContractError("augmented vector shorter than the control block");
    Vector out = Vector::Zero(xu.size());
    out.head(nx) = f(xu.head(nx), xu.tail(control_dim));
    return out;
  };
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ModelBundle& model) {
  nlohmann::json comps = nlohmann::json::object();
  for (const auto& [name, comp] : model.components) {
    if (comp.analytic()) throw ContractError("closed-form component '" + name + "' cannot be serialized");
    nlohmann::json j = netcore::to_json(comp.net());
    if (name == names::kMassInv) {
      j["head"] = {{"kind", "mass_inv"}, {"dim", model.dims.dof()}};
      j["epsilon"] = model.epsilon;
    }
    comps[name] = std::move(j);
  }
  return {{"variant", to_string(model.variant)},
          {"dims",
           {{"n", model.dims.n}, {"m", model.dims.m}, {"control", model.dims.control},
            {"momentum", model.dims.momentum}}},
          {"epsilon", model.epsilon},
          {"state_order", model.state_order},
          {"components", comps}};
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
  try {
    ModelBundle m;
    m.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& d = j.at("dims");
    m.dims = {d.at("n").get<int>(), d.at("m").get<int>(), d.at("control").get<int>(), d.at("momentum").get<bool>()};
    m.epsilon = j.value("epsilon", 0.01);
    m.state_order = j.value("state_order", std::vector<int>{});
    for (const auto& [name, cj] : j.at("components").items()) {
      m.components[name] = Component{netcore::mlp_from_json(cj)};
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed model bundle: ") + e.what());
  }
}

}  // namespace symoden::hamdyn
