#pragma once

// Energy-shaping controllers built from a model's V, g and M^-1, and
// closed-loop simulation against the truth systems.
//
// Controls are u = g^T (g g^T)^-1 (dV/dq - dV_d/dq - K_d rate). The rate is p
// for (q, p) models and q' for velocity-layout models.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "symoden/diffkit.hpp"
#include "symoden/envsim.hpp"
#include "symoden/errors.hpp"
#include "symoden/hamdyn.hpp"

namespace symoden::energyctl {

using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;
using hamdyn::ModelBundle;

enum class PotentialMode { kQuadratic, kNegatedLearned };
enum class ActuationMode { kFullyActuated, kPendulumSwingup };

struct ControlLaw {
  std::shared_ptr<const ModelBundle> model;
  Vector q_star;
  Matrix kp;
  Matrix kd;
  PotentialMode potential = PotentialMode::kQuadratic;
  ActuationMode actuation = ActuationMode::kFullyActuated;

  void validate() const {
    if (!model) throw ContractError("control law has no model");
    const int k = model->dims.dof();
    auto spd = [](const Matrix& a) {
      if (a.rows() != a.cols() || !a.isApprox(a.transpose(), 1e-12)) return false;
      Eigen::LLT<Matrix> llt(a);
      return llt.info() == Eigen::Success;
    };
    if (kd.rows() != k || kd.cols() != k || !spd(kd)) throw ContractError("K_d must be symmetric positive definite");
    if (potential == PotentialMode::kQuadratic) {
      if (kp.rows() != k || kp.cols() != k || !spd(kp)) {
        throw ContractError("quadratic V_d needs a symmetric positive definite K_p");
      }
      if (q_star.size() != k) throw ContractError("q* must have one entry per degree of freedom");
    }
    if (actuation == ActuationMode::kPendulumSwingup && (k != 1 || model->dims.control != 1)) {
      throw ContractError("the swing-up law needs a single actuated degree of freedom");
    }
  }
};

/// Numerical view of a model at one state.
struct Snapshot {
  Vector q;       // angles recovered with atan2
  Vector dv_dq;   // dV/dq, angles via -sin d/dcos + cos d/dsin
  Vector dv_dc;   // dV/dcoords
  Matrix g;       // dof x control
  Matrix minv;
  Vector p;
  Vector qdot;
};

inline Snapshot snapshot(const ModelBundle& model, const Vector& state) {
  model.validate();
  if (!model.has(hamdyn::names::kPotential) || !model.has(hamdyn::names::kInputMatrix) ||
      !model.has(hamdyn::names::kMassInv)) {
    throw ContractError(std::string(hamdyn::to_string(model.variant)) +
                        " models have no separate potential, input matrix and mass");
  }
  const auto& d = model.dims;
  if (state.size() != d.state()) throw ContractError("state has the wrong width for this model");
  Tape tape;
  hamdyn::BoundModel bm(tape, model);
  const Vector x = bm.to_canonical(tape.constant(Matrix(state.transpose()))).value().row(0).transpose();
  const int n = d.n, m = d.m, k = d.dof(), nc = d.coords();
  const Vector c = x.head(nc);

  Snapshot s;
  const Var cv = tape.constant(Matrix(c.transpose()));
  const diffkit::Jet v = bm.eval(hamdyn::names::kPotential, diffkit::seed_columns(cv));
  s.dv_dc.resize(nc);
  for (int j = 0; j < nc; ++j) s.dv_dc(j) = v.tangent[static_cast<std::size_t>(j)].scalar();

  s.q.resize(k);
  s.dv_dq.resize(k);
  for (int i = 0; i < n; ++i) {
    s.q(i) = c(i);
    s.dv_dq(i) = s.dv_dc(i);
  }
  for (int i = 0; i < m; ++i) {
    const double cs = c(n + i), sn = c(n + m + i);
    s.q(n + i) = std::atan2(sn, cs);
    s.dv_dq(n + i) = -sn * s.dv_dc(n + i) + cs * s.dv_dc(n + m + i);
  }

  const auto minv = hamdyn::BoundModel::primal(bm.mass_inv(diffkit::Jet{cv, {}}));
  s.minv.resize(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) s.minv(a, b) = minv[a][b].scalar();
  }
  const auto g = bm.input_matrix(cv);
  s.g.resize(k, d.control);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < d.control; ++b) s.g(a, b) = g[a][b].scalar();
  }
  const Vector tail = x.tail(k);
  if (d.momentum) {
    s.p = tail;
    s.qdot = s.minv * tail;
  } else {
    s.qdot = tail;
    s.p = s.minv.llt().solve(tail);
  }
  return s;
}

/// g^T (g g^T)^-1, or g^-1 when g is square.
inline Matrix actuation_inverse(const Matrix& g) {
  const Matrix ggt = g * g.transpose();
  Eigen::JacobiSVD<Matrix> svd(ggt);
  const auto& sv = svd.singularValues();
  const double lo = sv(sv.size() - 1);
  const double cond = lo > 0.0 ? sv(0) / lo : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e10)) {
    std::ostringstream os;
    os << "g g^T is singular to working precision (condition " << cond << ")";
    throw SingularActuation(os.str());
  }
  if (g.rows() == g.cols()) return g.inverse();
  return g.transpose() * ggt.inverse();
}

/// Wrapped displacement q - q*: angles land in (-pi, pi].
inline Vector displacement(const ModelBundle& model, const Vector& q, const Vector& q_star) {
  Vector e = q - q_star;
  for (int i = model.dims.n; i < model.dims.dof(); ++i) {
    e(i) = std::remainder(e(i), 2.0 * std::numbers::pi);
  }
  return e;
}

inline Vector desired_gradient(const ControlLaw& law, const Snapshot& s) {
  if (law.potential == PotentialMode::kNegatedLearned) return -s.dv_dq;
  return law.kp * displacement(*law.model, s.q, law.q_star);
}

inline Vector damping_rate(const ModelBundle& model, const Snapshot& s) {
  return model.dims.momentum ? s.p : s.qdot;
}

inline Vector potential_shaping_beta(const ControlLaw& law, const Vector& state) {
  law.validate();
  const Snapshot s = snapshot(*law.model, state);
  return actuation_inverse(s.g) * (s.dv_dq - desired_gradient(law, s));
}

inline Vector damping_injection(const ControlLaw& law, const Vector& state) {
  law.validate();
  const Snapshot s = snapshot(*law.model, state);
  return -actuation_inverse(s.g) * (law.kd * damping_rate(*law.model, s));
}

inline Vector pd_energy_controller(const ControlLaw& law, const Vector& state) {
  law.validate();
  if (law.actuation != ActuationMode::kFullyActuated || law.potential != PotentialMode::kQuadratic) {
    throw ContractError("the PD-energy law needs fully-actuated mode and a quadratic V_d");
  }
  const Snapshot s = snapshot(*law.model, state);
  const Vector rate = damping_rate(*law.model, s);
  return actuation_inverse(s.g) * (s.dv_dq - desired_gradient(law, s) - law.kd * rate);
}

/// u = g^-1 (2 (-dV/dcos sin + dV/dsin cos) - k_d q') for a single angle.
inline double pendulum_swingup_controller(const ModelBundle& model, double cos_q, double sin_q, double qdot,
                                          double kd = 3.0) {
  const auto& d = model.dims;
  if (d.n != 0 || d.m != 1 || d.control != 1 || d.momentum) {
    throw ContractError("the swing-up law needs a single embedded angle with one control");
  }
  const Vector state = Eigen::Vector3d(cos_q, sin_q, qdot);
  const Snapshot s = snapshot(model, state);
  const double g = s.g(0, 0);
  if (!(std::abs(g) >= 1e-6)) {
    throw SingularActuation("input gain " + std::to_string(g) + " is too small to invert");
  }
  return (2.0 * (-s.dv_dc(0) * sin_q + s.dv_dc(1) * cos_q) - kd * qdot) / g;
}

/// Evaluate whichever law the actuation mode selects.
inline Vector control(const ControlLaw& law, const Vector& state) {
  if (law.actuation == ActuationMode::kPendulumSwingup) {
    law.validate();
    return Vector::Constant(1, pendulum_swingup_controller(*law.model, state(0), state(1), state(2), law.kd(0, 0)));
  }
  return pd_energy_controller(law, state);
}

inline ControlLaw swingup_law(std::shared_ptr<const ModelBundle> model, double kd = 3.0) {
  ControlLaw law;
  law.model = std::move(model);
  law.potential = PotentialMode::kNegatedLearned;
  law.actuation = ActuationMode::kPendulumSwingup;
  law.kd = Matrix::Constant(1, 1, kd);
  law.validate();
  return law;
}

/// Quadratic V_d around q*, K_p = kp I, K_d = kd I.
inline ControlLaw pd_law(std::shared_ptr<const ModelBundle> model, Vector q_star, double kp = 1.0, double kd = 1.0) {
  ControlLaw law;
  const int k = model->dims.dof();
  law.model = std::move(model);
  law.q_star = std::move(q_star);
  law.kp = kp * Matrix::Identity(k, k);
  law.kd = kd * Matrix::Identity(k, k);
  law.validate();
  return law;
}

struct ClosedLoop {
  Matrix states;    // (steps + 1) x S
  Matrix controls;  // steps x control
  double dt = 0.0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "t";
    for (Eigen::Index j = 0; j < states.cols(); ++j) os << ",x" << j;
    for (Eigen::Index j = 0; j < controls.cols(); ++j) os << ",u" << j;
    os << "\n";
    for (Eigen::Index t = 0; t < states.rows(); ++t) {
      os << static_cast<double>(t) * dt;
      for (Eigen::Index j = 0; j < states.cols(); ++j) os << "," << states(t, j);
      // the final state has no control; repeat the last one
      const Eigen::Index r = std::min<Eigen::Index>(t, controls.rows() - 1);
      for (Eigen::Index j = 0; j < controls.cols(); ++j) os << "," << controls(r, j);
      os << "\n";
    }
    return os.str();
  }

  double max_abs_control() const { return controls.size() ? controls.cwiseAbs().maxCoeff() : 0.0; }
};

using StepFn = std::function<Vector(const Vector& x, const Vector& u, double dt)>;
using LawFn = std::function<Vector(const Vector& x)>;

/// Zero-order hold: u is evaluated once per step and held through it.
inline ClosedLoop closed_loop_rollout(const StepFn& step, const LawFn& law, const Vector& x0, int steps, double dt) {
  if (steps < 1 || !(dt > 0.0)) throw ContractError("closed loop needs steps >= 1 and dt > 0");
  ClosedLoop out;
  out.dt = dt;
  out.states.resize(steps + 1, x0.size());
  out.states.row(0) = x0.transpose();
  Vector x = x0;
  for (int s = 0; s < steps; ++s) {
    Vector u;
    try {
      u = law(x);
    } catch (const SingularActuation& e) {
      std::ostringstream os;
      os << e.what() << " at step " << s << ", state [" << x.transpose() << "]";
      throw SingularActuation(os.str());
    }
    if (s == 0) out.controls.resize(steps, u.size());
    out.controls.row(s) = u.transpose();
    x = step(x, u, dt);
    if (!x.allFinite()) throw NumericFault("closed loop diverged at step " + std::to_string(s), s);
    out.states.row(s + 1) = x.transpose();
  }
  return out;
}

inline ClosedLoop closed_loop_rollout(envsim::Task task, const ControlLaw& law, const Vector& x0, int steps,
                                      double dt) {
  law.validate();
  return closed_loop_rollout([task](const Vector& x, const Vector& u, double h) { return envsim::truth_step(task, x, u, h); },
                             [&law](const Vector& x) { return control(law, x); }, x0, steps, dt);
}

/// Per-task defaults for the closed loop: gains, integration step and horizon.
struct ControlSetup {
  double kp = 1.0;
  double kd = 1.0;
  double dt = 0.05;
  int steps = 1000;
};

inline ControlSetup control_setup(envsim::Task task) {
  switch (task) {
    case envsim::Task::kTask2: return {0.0, 3.0, 0.05, 1000};
    case envsim::Task::kTask3Fa: return {1.0, 1.0, 0.02, 750};
    case envsim::Task::kTask4Fa: return {1.0, 2.0, 0.05, 400};
    case envsim::Task::kTask1:
      throw ContractError("task1 has no control experiment; the swing-up runs on task2");
    case envsim::Task::kTask3:
    case envsim::Task::kTask4:
      throw ContractError(std::string(envsim::to_string(task)) +
                          " is underactuated: potential energy shaping alone cannot stabilize it; use the -fa task");
  }
  throw ContractError("unknown task");
}

/// Upright target in each task's angle convention.
inline Vector upright_target(envsim::Task task) {
  switch (task) {
    case envsim::Task::kTask1:
    case envsim::Task::kTask2: return Vector::Constant(1, std::numbers::pi);
    case envsim::Task::kTask3:
    case envsim::Task::kTask3Fa: return Vector::Zero(2);
    case envsim::Task::kTask4:
    case envsim::Task::kTask4Fa: return Eigen::Vector2d(std::numbers::pi, 0.0);
  }
  throw ContractError("unknown task");
}

/// Resting state at the bottom of each task's potential.
inline Vector hanging_rest(envsim::Task task) {
  switch (task) {
    case envsim::Task::kTask1: return Vector::Zero(2);
    case envsim::Task::kTask2: return Eigen::Vector3d(1.0, 0.0, 0.0);
    case envsim::Task::kTask3:
    case envsim::Task::kTask3Fa: {
      Vector x(5);
      x << 0.0, -1.0, 0.0, 0.0, 0.0;
      return x;
    }
    case envsim::Task::kTask4:
    case envsim::Task::kTask4Fa: {
      Vector x(6);
      x << 1.0, 0.0, 1.0, 0.0, 0.0, 0.0;
      return x;
    }
  }
  throw ContractError("unknown task");
}

}  // namespace symoden::energyctl
