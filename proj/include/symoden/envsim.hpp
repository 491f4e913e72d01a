#pragma once

// Ground-truth systems, closed-form stand-in models, dataset generation and
// error metrics.
//
// Stored state layouts:
//   task1          (q, p)
//   task2          (cos q, sin q, q')                 q = 0 hangs down
//   task3, -fa     (x, cos th, sin th, x', th')       th = 0 is upright
//   task4, -fa     (cos q1, sin q1, cos q2, sin q2, q1', q2')   q1 = 0 hangs down
//
// Truth trajectories are integrated with RK4 in angle coordinates and then
// embedded, so stored points lie on the circle to round-off.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "symoden/diffkit.hpp"
#include "symoden/errors.hpp"
#include "symoden/hamdyn.hpp"
#include "symoden/netcore.hpp"
#include "symoden/odeflow.hpp"

namespace symoden::envsim {

using diffkit::Jet;
using diffkit::Matrix;
using diffkit::Var;
using diffkit::Vector;
using hamdyn::ModelBundle;
using hamdyn::Variant;
using odeflow::Trajectory;

constexpr double kPi = std::numbers::pi;

enum class Task { kTask1, kTask2, kTask3, kTask4, kTask3Fa, kTask4Fa };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::kTask1: return "task1";
    case Task::kTask2: return "task2";
    case Task::kTask3: return "task3";
    case Task::kTask4: return "task4";
    case Task::kTask3Fa: return "task3-fa";
    case Task::kTask4Fa: return "task4-fa";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::kTask1, Task::kTask2, Task::kTask3, Task::kTask4, Task::kTask3Fa, Task::kTask4Fa}) {
    if (s == to_string(t)) return t;
  }
  throw ContractError("unknown task '" + s + "' (expected task1..task4, task3-fa, task4-fa)");
}

inline bool is_cartpole(Task t) { return t == Task::kTask3 || t == Task::kTask3Fa; }
inline bool is_acrobot(Task t) { return t == Task::kTask4 || t == Task::kTask4Fa; }
inline bool fully_actuated(Task t) { return t == Task::kTask3Fa || t == Task::kTask4Fa; }

struct TaskInfo {
  int state_dim;
  int chart_dim;
  int control_dim;
  double dt;
  hamdyn::Dims dims;            // layout seen by models
  std::vector<int> state_order;  // canonical -> stored columns
};

inline TaskInfo task_info(Task t) {
  switch (t) {
    case Task::kTask1: return {2, 2, 1, 0.05, {1, 0, 1, true}, {}};
    case Task::kTask2: return {3, 2, 1, 0.05, {0, 1, 1, false}, {}};
    case Task::kTask3: return {5, 4, 1, 0.02, {1, 1, 1, false}, {}};
    case Task::kTask3Fa: return {5, 4, 2, 0.02, {1, 1, 2, false}, {}};
    case Task::kTask4: return {6, 4, 1, 0.2, {0, 2, 1, false}, {0, 2, 1, 3, 4, 5}};
    case Task::kTask4Fa: return {6, 4, 2, 0.2, {0, 2, 2, false}, {0, 2, 1, 3, 4, 5}};
  }
  throw ContractError("unknown task");
}

// ---------------------------------------------------------------------------
// Physical constants

namespace cartpole {
inline constexpr double kCartMass = 1.0;
inline constexpr double kPoleMass = 0.1;
inline constexpr double kHalfLength = 0.5;
inline constexpr double kGravity = 9.8;
inline constexpr double kTotalMass = kCartMass + kPoleMass;
inline constexpr double kPoleMoment = kPoleMass * kHalfLength;  // m l
inline constexpr double kPoleInertia = 4.0 / 3.0 * kPoleMass * kHalfLength * kHalfLength;
}  // namespace cartpole

namespace acrobot {
inline constexpr double kL1 = 1.0;
inline constexpr double kM1 = 1.0;
inline constexpr double kM2 = 1.0;
inline constexpr double kLc1 = 0.5;
inline constexpr double kLc2 = 0.5;
inline constexpr double kI1 = 1.0;
inline constexpr double kI2 = 1.0;
inline constexpr double kGravity = 9.8;
}  // namespace acrobot

inline nlohmann::json physical_parameters(Task t) {
  if (t == Task::kTask1) return {{"H", "1.5 p^2 + 5 (1 - cos q)"}};
  if (t == Task::kTask2) return {{"qdd", "-15 sin q + 3 u"}};
  if (is_cartpole(t)) {
    using namespace cartpole;
    return {{"cart_mass", kCartMass}, {"pole_mass", kPoleMass}, {"half_length", kHalfLength}, {"gravity", kGravity}};
  }
  using namespace acrobot;
  return {{"link_length_1", kL1}, {"link_mass_1", kM1}, {"link_mass_2", kM2}, {"com_1", kLc1},
          {"com_2", kLc2},        {"moi_1", kI1},       {"moi_2", kI2},       {"gravity", kGravity}};
}

// ---------------------------------------------------------------------------
// Truth fields in stored layouts

inline void require_on_circle(double c, double s, const char* who) {
  if (std::abs(c * c + s * s - 1.0) > 1e-9) {
    throw ContractError(std::string(who) + ": (cos, sin) pair is off the unit circle by " +
                        std::to_string(std::abs(c * c + s * s - 1.0)));
  }
}

inline Eigen::Vector2d pendulum_rn_field(double q, double p, double u) {
  return {3.0 * p, -5.0 * std::sin(q) + u};
}

inline Eigen::Vector3d pendulum_embedded_field(double c, double s, double qd, double u) {
  require_on_circle(c, s, "pendulum_embedded_field");
  return {-s * qd, c * qd, -15.0 * s + 3.0 * u};
}

inline Eigen::Matrix2d cartpole_mass(double cth) {
  using namespace cartpole;
  Eigen::Matrix2d m;
  m << kTotalMass, kPoleMoment * cth, kPoleMoment * cth, kPoleInertia;
  return m;
}

/// Accelerations (x'', th'') from angle-chart quantities.
inline Eigen::Vector2d cartpole_accel(double cth, double sth, double thd, const Vector& u) {
  using namespace cartpole;
  const double fx = u(0);
  const double tth = u.size() > 1 ? u(1) : 0.0;
  const Eigen::Vector2d rhs(fx + kPoleMoment * sth * thd * thd, tth + kPoleMass * kGravity * kHalfLength * sth);
  return cartpole_mass(cth).ldlt().solve(rhs);
}

inline Vector cartpole_field(const Vector& x, const Vector& u) {
  if (x.size() != 5) throw ContractError("cartpole state has 5 entries");
  require_on_circle(x(1), x(2), "cartpole_field");
  const Eigen::Vector2d a = cartpole_accel(x(1), x(2), x(4), u);
  Vector f(5);
  f << x(3), -x(2) * x(4), x(1) * x(4), a(0), a(1);
  return f;
}

inline Eigen::Matrix2d acrobot_mass(double c2) {
  using namespace acrobot;
  const double d1 = kM1 * kLc1 * kLc1 + kM2 * (kL1 * kL1 + kLc2 * kLc2 + 2 * kL1 * kLc2 * c2) + kI1 + kI2;
  const double d2 = kM2 * (kLc2 * kLc2 + kL1 * kLc2 * c2) + kI2;
  Eigen::Matrix2d m;
  m << d1, d2, d2, kM2 * kLc2 * kLc2 + kI2;
  return m;
}

inline Eigen::Vector2d acrobot_accel(double c1, double s1, double c2, double s2, double w1, double w2,
                                     const Vector& u) {
  using namespace acrobot;
  const double s12 = s1 * c2 + c1 * s2;
  const double phi2 = kM2 * kLc2 * kGravity * s12;
  const double phi1 = -kM2 * kL1 * kLc2 * w2 * w2 * s2 - 2 * kM2 * kL1 * kLc2 * w2 * w1 * s2 +
                      (kM1 * kLc1 + kM2 * kL1) * kGravity * s1 + phi2;
  Eigen::Vector2d tau = u.size() > 1 ? Eigen::Vector2d(u(0), u(1)) : Eigen::Vector2d(0.0, u(0));
  const Eigen::Vector2d rhs(tau(0) - phi1, tau(1) - kM2 * kL1 * kLc2 * w1 * w1 * s2 - phi2);
  return acrobot_mass(c2).ldlt().solve(rhs);
}

inline Vector acrobot_field(const Vector& x, const Vector& u) {
  if (x.size() != 6) throw ContractError("acrobot state has 6 entries");
  require_on_circle(x(0), x(1), "acrobot_field");
  require_on_circle(x(2), x(3), "acrobot_field");
  const Eigen::Vector2d a = acrobot_accel(x(0), x(1), x(2), x(3), x(4), x(5), u);
  Vector f(6);
  f << -x(1) * x(4), x(0) * x(4), -x(3) * x(5), x(2) * x(5), a(0), a(1);
  return f;
}

inline hamdyn::PlainField truth_field(Task t) {
  switch (t) {
    case Task::kTask1:
      return [](const Vector& x, const Vector& u) -> Vector { return pendulum_rn_field(x(0), x(1), u(0)); };
    case Task::kTask2:
      return [](const Vector& x, const Vector& u) -> Vector {
        return pendulum_embedded_field(x(0), x(1), x(2), u(0));
      };
    case Task::kTask3:
    case Task::kTask3Fa:
      return cartpole_field;
    case Task::kTask4:
    case Task::kTask4Fa:
      return acrobot_field;
  }
  throw ContractError("unknown task");
}

// Angle charts: (q, p) | (q, q') | (x, th, x', th') | (q1, q2, q1', q2')

inline Vector to_chart(Task t, const Vector& x) {
  switch (t) {
    case Task::kTask1: return x;
    case Task::kTask2: return Eigen::Vector2d(std::atan2(x(1), x(0)), x(2));
    case Task::kTask3:
    case Task::kTask3Fa: return Eigen::Vector4d(x(0), std::atan2(x(2), x(1)), x(3), x(4));
    case Task::kTask4:
    case Task::kTask4Fa: return Eigen::Vector4d(std::atan2(x(1), x(0)), std::atan2(x(3), x(2)), x(4), x(5));
  }
  throw ContractError("unknown task");
}

inline Vector from_chart(Task t, const Vector& z) {
  switch (t) {
    case Task::kTask1: return z;
    case Task::kTask2: return Eigen::Vector3d(std::cos(z(0)), std::sin(z(0)), z(1));
    case Task::kTask3:
    case Task::kTask3Fa: {
      Vector x(5);
      x << z(0), std::cos(z(1)), std::sin(z(1)), z(2), z(3);
      return x;
    }
    case Task::kTask4:
    case Task::kTask4Fa: {
      Vector x(6);
      x << std::cos(z(0)), std::sin(z(0)), std::cos(z(1)), std::sin(z(1)), z(2), z(3);
      return x;
    }
  }
  throw ContractError("unknown task");
}

inline Vector chart_field(Task t, const Vector& z, const Vector& u) {
  switch (t) {
    case Task::kTask1: return pendulum_rn_field(z(0), z(1), u(0));
    case Task::kTask2: return Eigen::Vector2d(z(1), -15.0 * std::sin(z(0)) + 3.0 * u(0));
    case Task::kTask3:
    case Task::kTask3Fa: {
      const Eigen::Vector2d a = cartpole_accel(std::cos(z(1)), std::sin(z(1)), z(3), u);
      return Eigen::Vector4d(z(2), z(3), a(0), a(1));
    }
    case Task::kTask4:
    case Task::kTask4Fa: {
      const Eigen::Vector2d a =
          acrobot_accel(std::cos(z(0)), std::sin(z(0)), std::cos(z(1)), std::sin(z(1)), z(2), z(3), u);
      return Eigen::Vector4d(z(2), z(3), a(0), a(1));
    }
  }
  throw ContractError("unknown task");
}

/// One truth step of length dt from a stored-layout state.
inline Vector truth_step(Task t, const Vector& x, const Vector& u, double dt) {
  auto f = [t](const Vector& z, const Vector& uu) -> Vector { return chart_field(t, z, uu); };
  return from_chart(t, odeflow::rk4_step(f, to_chart(t, x), dt, u));
}

inline Trajectory truth_rollout(Task t, const Vector& x0, const Vector& u, int steps, double dt) {
  if (steps < 1) throw ContractError("rollout needs steps >= 1");
  Trajectory traj;
  traj.states.resize(steps + 1, x0.size());
  traj.states.row(0) = x0.transpose();
  Vector x = x0;
  for (int s = 0; s < steps; ++s) {
    x = truth_step(t, x, u, dt);
    if (!x.allFinite()) throw NumericFault("truth rollout diverged at step " + std::to_string(s), s);
    traj.states.row(s + 1) = x.transpose();
  }
  traj.u = u;
  traj.dt = dt;
  traj.task = to_string(t);
  return traj;
}

/// True total energy of a stored-layout state.
inline double truth_energy(Task t, const Vector& x) {
  switch (t) {
    case Task::kTask1: return 1.5 * x(1) * x(1) + 5.0 * (1.0 - std::cos(x(0)));
    case Task::kTask2: return x(2) * x(2) / 6.0 + 5.0 * (1.0 - x(0));
    case Task::kTask3:
    case Task::kTask3Fa: {
      const Eigen::Vector2d v(x(3), x(4));
      using namespace cartpole;
      return 0.5 * v.dot(cartpole_mass(x(1)) * v) + kPoleMass * kGravity * kHalfLength * x(1);
    }
    case Task::kTask4:
    case Task::kTask4Fa: {
      using namespace acrobot;
      const Eigen::Vector2d v(x(4), x(5));
      const double c12 = x(0) * x(2) - x(1) * x(3);
      return 0.5 * v.dot(acrobot_mass(x(2)) * v) - (kM1 * kLc1 + kM2 * kL1) * kGravity * x(0) -
             kM2 * kLc2 * kGravity * c12;
    }
  }
  throw ContractError("unknown task");
}

// ---------------------------------------------------------------------------
// Closed-form stand-in bundles reproducing the truth systems exactly

namespace detail {

inline Jet constant_like(const Jet& x, double v) {
  return diffkit::constant_jet(x.value.tape()->constant(Matrix::Constant(x.value.rows(), 1, v)), x.directions());
}

inline hamdyn::Component analytic(hamdyn::AnalyticFn fn) { return hamdyn::Component{std::move(fn)}; }

/// Packed Cholesky factor of a 2x2 SPD matrix [[a, b], [b, c]].
inline Jet chol2(const Jet& a, const Jet& b, const Jet& c) {
  const Jet l00 = diffkit::sqrt(a);
  const Jet l10 = b / l00;
  const Jet l11 = diffkit::sqrt(c - l10 * l10);
  return diffkit::hcat({l00, l10, l11});
}

/// Packed L with L L^T + eps I equal to the inverse of [[m00, m01], [m01, m11]].
inline Jet inverse_mass_factor(const Jet& m00, const Jet& m01, const Jet& m11, double eps) {
  const Jet det = m00 * m11 - m01 * m01;
  return chol2(m11 / det + (-eps), -(m01 / det), m00 / det + (-eps));
}

inline hamdyn::AnalyticFn constant_matrix(std::vector<double> flat) {
  return [flat](const Jet& c) {
    std::vector<Jet> cols;
    for (double v : flat) cols.push_back(constant_like(c, v));
    return diffkit::hcat(std::span<const Jet>(cols));
  };
}

}  // namespace detail

/// Stand-in model whose components are closed-form truth functions.
inline ModelBundle truth_bundle(Task t, double epsilon = 0.01) {
  const TaskInfo info = task_info(t);
  ModelBundle m;
  m.dims = info.dims;
  m.epsilon = epsilon;
  m.state_order = info.state_order;
  using detail::analytic;
  using detail::constant_like;
  switch (t) {
    case Task::kTask1:
    case Task::kTask2: {
      m.variant = t == Task::kTask1 ? Variant::kSymRn : Variant::kSymEmbedded;
      const double l = std::sqrt(3.0 - epsilon);
      m.components[hamdyn::names::kMassInv] = analytic([l](const Jet& c) { return constant_like(c, l); });
      if (t == Task::kTask1) {
        m.components[hamdyn::names::kPotential] =
            analytic([](const Jet& c) { return 5.0 * (1.0 - diffkit::cos(c)); });
      } else {
        m.components[hamdyn::names::kPotential] =
            analytic([](const Jet& c) { return 5.0 * (1.0 - diffkit::col(c, 0)); });
      }
      m.components[hamdyn::names::kInputMatrix] = analytic(detail::constant_matrix({1.0}));
      break;
    }
    case Task::kTask3:
    case Task::kTask3Fa: {
      using namespace cartpole;
      m.variant = Variant::kSymHybrid;
      m.components[hamdyn::names::kMassInv] = analytic([epsilon](const Jet& c) {
        const Jet cth = diffkit::col(c, 1);
        return detail::inverse_mass_factor(constant_like(c, kTotalMass), kPoleMoment * cth,
                                           constant_like(c, kPoleInertia), epsilon);
      });
      m.components[hamdyn::names::kPotential] = analytic(
          [](const Jet& c) { return (kPoleMass * kGravity * kHalfLength) * diffkit::col(c, 1); });
      m.components[hamdyn::names::kInputMatrix] =
          analytic(detail::constant_matrix(t == Task::kTask3 ? std::vector<double>{1, 0}
                                                             : std::vector<double>{1, 0, 0, 1}));
      break;
    }
    case Task::kTask4:
    case Task::kTask4Fa: {
      using namespace acrobot;
      m.variant = Variant::kSymEmbedded;
      // canonical coordinates: (cos q1, cos q2, sin q1, sin q2)
      m.components[hamdyn::names::kMassInv] = analytic([epsilon](const Jet& c) {
        const Jet c2 = diffkit::col(c, 1);
        const double base1 = kM1 * kLc1 * kLc1 + kM2 * (kL1 * kL1 + kLc2 * kLc2) + kI1 + kI2;
        const Jet d1 = (2 * kM2 * kL1 * kLc2) * c2 + base1;
        const Jet d2 = (kM2 * kL1 * kLc2) * c2 + (kM2 * kLc2 * kLc2 + kI2);
        return detail::inverse_mass_factor(d1, d2, constant_like(c, kM2 * kLc2 * kLc2 + kI2), epsilon);
      });
      m.components[hamdyn::names::kPotential] = analytic([](const Jet& c) {
        const Jet c1 = diffkit::col(c, 0), c2 = diffkit::col(c, 1);
        const Jet s1 = diffkit::col(c, 2), s2 = diffkit::col(c, 3);
        const Jet c12 = c1 * c2 - s1 * s2;
        return (-(kM1 * kLc1 + kM2 * kL1) * kGravity) * c1 + (-kM2 * kLc2 * kGravity) * c12;
      });
      m.components[hamdyn::names::kInputMatrix] =
          analytic(detail::constant_matrix(t == Task::kTask4 ? std::vector<double>{0, 1}
                                                             : std::vector<double>{1, 0, 0, 1}));
      break;
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Architectures

enum class Scale { kDesk, kFull };

inline const char* to_string(Scale s) { return s == Scale::kDesk ? "desk" : "full"; }

/// Hidden widths per (task, variant, component) at full scale.
inline std::vector<int> full_hidden(Task t, Variant v, const std::string& comp) {
  using namespace hamdyn::names;
  const bool pend1 = t == Task::kTask1, pend2 = t == Task::kTask2;
  const bool cart = is_cartpole(t);
  if (comp == kMassInv) {
    if (pend1 || pend2) return {300, 300};
    return {400, 400, 400};
  }
  if (comp == kPotential) {
    if (pend1 || pend2) return {50, 50};
    return {300, 300};
  }
  if (comp == kInputMatrix) {
    if (pend1 || pend2) return {200, 200};
    return {300, 300};
  }
  if (comp == kHamiltonian) {
    if (pend1) return {400, 400};
    if (pend2 || cart) return {500, 500};
    return {600, 600};
  }
  if (comp == kDynamics && v == Variant::kGeometric) {
    if (pend2) return {600, 600};
    if (cart) return {700, 700};
    return {800, 800};
  }
  if (comp == kDynamics) {
    if (pend1) return {600, 600};
    if (pend2) return {800, 800};
    if (cart) return {1000, 1000};
    return {1200, 1200};
  }
  throw ContractError("no architecture for component '" + comp + "'");
}

/// The SymODEN flavour matching a task's coordinate space.
inline Variant structured_variant(Task t) {
  if (t == Task::kTask1) return Variant::kSymRn;
  return is_cartpole(t) ? Variant::kSymHybrid : Variant::kSymEmbedded;
}

inline std::vector<Variant> legal_variants(Task t) {
  if (t == Task::kTask1) return {Variant::kSymRn, Variant::kUnstructured, Variant::kNaive};
  return {structured_variant(t), Variant::kUnstructured, Variant::kNaive, Variant::kGeometric};
}

/// Accepts "symoden" as shorthand for the task's structured variant.
inline Variant resolve_variant(Task t, const std::string& name) {
  const Variant v = name == "symoden" ? structured_variant(t) : hamdyn::parse_variant(name);
  for (Variant ok : legal_variants(t)) {
    if (ok == v) return v;
  }
  throw ContractError(std::string("variant ") + hamdyn::to_string(v) + " is not available for " + to_string(t));
}

/// Freshly initialised bundle. Desk scale divides every hidden width by 4.
inline ModelBundle make_model(Task t, Variant v, Scale scale, std::uint64_t seed, double epsilon = 0.01) {
  const TaskInfo info = task_info(t);
  ModelBundle m;
  m.variant = v;
  m.dims = info.dims;
  m.epsilon = epsilon;
  m.state_order = info.state_order;
  if (t == Task::kTask1 && v == Variant::kNaive) m.dims.momentum = true;
  if (std::find(legal_variants(t).begin(), legal_variants(t).end(), v) == legal_variants(t).end()) {
    throw ContractError(std::string("variant ") + hamdyn::to_string(v) + " is not available for " + to_string(t));
  }
  std::uint64_t k = 0;
  for (const auto& [name, io] : m.required_components()) {
    std::vector<int> widths{io.first};
    for (int w : full_hidden(t, v, name)) widths.push_back(scale == Scale::kDesk ? std::max(1, w / 4) : w);
    widths.push_back(io.second);
    m.components[name] = hamdyn::Component{netcore::init_params({widths}, seed * 1000003ULL + (++k))};
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  Task task = Task::kTask1;
  int n_init = 64;
  std::vector<double> controls{-2.0, -1.0, 0.0, 1.0, 2.0};
  int steps = 20;
  double dt = 0.0;  // 0: task default
  std::uint64_t seed = 0;
  bool annulus = false;  // task1 only: (q, p) radius uniform in [1.3, 2.3]
};

struct Dataset {
  Task task = Task::kTask1;
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  nlohmann::json metadata;
};

/// Control vector for the i-th control level. Multi-input tasks cycle the
/// level through the input channels.
inline Vector control_vector(Task t, double level, std::size_t i) {
  Vector u = Vector::Zero(task_info(t).control_dim);
  u(static_cast<Eigen::Index>(i % static_cast<std::size_t>(u.size()))) = level;
  return u;
}

inline nlohmann::json sampling_ranges(Task t, bool annulus) {
  switch (t) {
    case Task::kTask1:
      if (annulus) return {{"radius", {1.3, 2.3}}, {"angle", {-kPi, kPi}}};
      return {{"q", {-kPi, 3 * kPi}}, {"p", {-1.0, 1.0}}};
    case Task::kTask2: return {{"q", {-kPi, kPi}}, {"qdot", {-1.0, 1.0}}};
    case Task::kTask3:
    case Task::kTask3Fa:
      return {{"x", {-1.0, 1.0}}, {"theta", {-kPi, kPi}}, {"xdot", {-1.0, 1.0}}, {"thetadot", {-1.0, 1.0}}};
    case Task::kTask4:
    case Task::kTask4Fa:
      return {{"q1", {-kPi, kPi}}, {"q2", {-kPi, kPi}}, {"q1dot", {-1.0, 1.0}}, {"q2dot", {-1.0, 1.0}}};
  }
  return {};
}

inline Vector sample_initial_state(Task t, bool annulus, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  if (annulus && t != Task::kTask1) throw ContractError("annulus sampling is only defined for task1");
  Vector z;
  switch (t) {
    case Task::kTask1:
      if (annulus) {
        const double r = uni(1.3, 2.3), a = uni(-kPi, kPi);
        z = Eigen::Vector2d(r * std::cos(a), r * std::sin(a));
      } else {
        z = Eigen::Vector2d(uni(-kPi, 3 * kPi), uni(-1.0, 1.0));
      }
      break;
    case Task::kTask2: z = Eigen::Vector2d(uni(-kPi, kPi), uni(-1.0, 1.0)); break;
    case Task::kTask3:
    case Task::kTask3Fa: {
      const double x = uni(-1.0, 1.0), th = uni(-kPi, kPi);
      z = Eigen::Vector4d(x, th, uni(-1.0, 1.0), uni(-1.0, 1.0));
      break;
    }
    case Task::kTask4:
    case Task::kTask4Fa: {
      const double q1 = uni(-kPi, kPi), q2 = uni(-kPi, kPi);
      z = Eigen::Vector4d(q1, q2, uni(-1.0, 1.0), uni(-1.0, 1.0));
      break;
    }
  }
  return from_chart(t, z);
}

inline Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.n_init < 1) throw ContractError("n_init must be >= 1");
  if (spec.steps < 1) throw ContractError("steps must be >= 1");
  if (spec.controls.empty()) throw ContractError("at least one control level is required");
  const double dt = spec.dt > 0.0 ? spec.dt : task_info(spec.task).dt;
  if (spec.dt < 0.0) throw ContractError("dt must be positive");

  std::mt19937_64 rng(spec.seed);
  std::vector<Vector> inits;
  auto fresh = [&]() {
    for (;;) {
      Vector x = sample_initial_state(spec.task, spec.annulus, rng);
      bool dup = false;
      for (const Vector& y : inits) dup = dup || y == x;
      if (!dup) return x;
    }
  };
  for (int i = 0; i < 2 * spec.n_init; ++i) inits.push_back(fresh());

  Dataset ds;
  ds.task = spec.task;
  for (int i = 0; i < 2 * spec.n_init; ++i) {
    auto& split = i < spec.n_init ? ds.train : ds.test;
    for (std::size_t c = 0; c < spec.controls.size(); ++c) {
      split.push_back(truth_rollout(spec.task, inits[static_cast<std::size_t>(i)],
                                    control_vector(spec.task, spec.controls[c], c), spec.steps, dt));
    }
  }
  ds.metadata = {{"task", to_string(spec.task)},
                 {"n_init", spec.n_init},
                 {"controls", spec.controls},
                 {"steps", spec.steps},
                 {"dt", dt},
                 {"seed", spec.seed},
                 {"sampling", spec.annulus ? "annulus" : "box"},
                 {"ranges", sampling_ranges(spec.task, spec.annulus)},
                 {"parameters", physical_parameters(spec.task)},
                 {"integrator", "rk4 in angle coordinates"}};
  return ds;
}

inline nlohmann::json trajectory_json(const Trajectory& t, const char* split) {
  nlohmann::json states = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.states.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < t.states.cols(); ++c) row.push_back(t.states(r, c));
    states.push_back(std::move(row));
  }
  return {{"task", t.task},
          {"split", split},
          {"dt", t.dt},
          {"u", std::vector<double>(t.u.data(), t.u.data() + t.u.size())},
          {"states", states}};
}

inline std::string dataset_jsonl(const Dataset& ds) {
  std::string out = nlohmann::json{{"metadata", ds.metadata}}.dump() + "\n";
  for (const auto& t : ds.train) out += trajectory_json(t, "train").dump() + "\n";
  for (const auto& t : ds.test) out += trajectory_json(t, "test").dump() + "\n";
  return out;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot write dataset to " + path);
  f << dataset_jsonl(ds);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot open dataset " + path);
  Dataset ds;
  std::string line;
  bool header = false;
  try {
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("metadata")) {
        ds.metadata = j.at("metadata");
        ds.task = parse_task(ds.metadata.at("task").get<std::string>());
        header = true;
        continue;
      }
      Trajectory t;
      t.task = j.at("task").get<std::string>();
      t.dt = j.at("dt").get<double>();
      const auto u = j.at("u").get<std::vector<double>>();
      t.u = Eigen::Map<const Vector>(u.data(), static_cast<Eigen::Index>(u.size()));
      const auto states = j.at("states").get<std::vector<std::vector<double>>>();
      if (states.empty()) throw ContractError("trajectory without states in " + path);
      t.states.resize(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(states[0].size()));
      for (std::size_t r = 0; r < states.size(); ++r) {
        if (states[r].size() != states[0].size()) throw ContractError("ragged trajectory in " + path);
        for (std::size_t c = 0; c < states[r].size(); ++c) t.states(r, c) = states[r][c];
      }
      (j.at("split").get<std::string>() == "test" ? ds.test : ds.train).push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("malformed dataset " + path + ": " + e.what());
  }
  if (!header) throw ContractError("dataset " + path + " has no metadata header");
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_trajectory;
};

inline ErrorStats summarize(std::vector<double> v) {
  ErrorStats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  s.per_trajectory = std::move(v);
  return s;
}

/// Batched model rollouts: one trajectory per row of x0.
inline std::vector<Matrix> model_rollout(const ModelBundle& model, const Matrix& x0, const Matrix& u, int steps,
                                         double dt) {
  odeflow::BatchField f = [&model](const Matrix& x, const Matrix& uu) { return hamdyn::field_batch(model, x, uu); };
  return odeflow::rollout_batch(f, x0, u, steps, dt);
}

/// Per trajectory: sum over steps t >= 1 of the state MSE (mean over state
/// dimensions) between the model rollout and the recorded states.
inline ErrorStats trajectory_errors(const ModelBundle& model, const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) return {};
  const Eigen::Index len = trajs.front().length();
  Matrix x0(static_cast<Eigen::Index>(trajs.size()), trajs.front().states.cols());
  Matrix u(static_cast<Eigen::Index>(trajs.size()), trajs.front().u.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].length() != len) throw ContractError("trajectories of unequal length");
    x0.row(static_cast<Eigen::Index>(i)) = trajs[i].states.row(0);
    u.row(static_cast<Eigen::Index>(i)) = trajs[i].u.transpose();
  }
  const auto snaps = model_rollout(model, x0, u, static_cast<int>(len - 1), trajs.front().dt);
  std::vector<double> err(trajs.size(), 0.0);
  for (Eigen::Index t = 1; t < len; ++t) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const auto d = snaps[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i)) -
                     trajs[i].states.row(t);
      err[i] += d.squaredNorm() / static_cast<double>(d.size());
    }
  }
  return summarize(std::move(err));
}

inline ErrorStats train_error(const ModelBundle& model, const Dataset& ds) { return trajectory_errors(model, ds.train); }
inline ErrorStats test_error(const ModelBundle& model, const Dataset& ds) { return trajectory_errors(model, ds.test); }

/// Distinct initial states of the training split, in first-seen order.
inline std::vector<Vector> unique_train_inits(const Dataset& ds) {
  std::vector<Vector> out;
  for (const auto& t : ds.train) {
    const Vector x = t.state(0);
    bool seen = false;
    for (const Vector& y : out) seen = seen || y == x;
    if (!seen) out.push_back(x);
  }
  return out;
}

/// Truth rollouts with zero control from the given initial states.
inline std::vector<Trajectory> prediction_targets(Task t, const std::vector<Vector>& inits, int steps, double dt) {
  std::vector<Trajectory> out;
  const Vector u0 = Vector::Zero(task_info(t).control_dim);
  for (const Vector& x : inits) out.push_back(truth_rollout(t, x, u0, steps, dt));
  return out;
}

inline ErrorStats prediction_error(const ModelBundle& model, const Dataset& ds, int steps = 40) {
  const double dt = ds.train.empty() ? task_info(ds.task).dt : ds.train.front().dt;
  return trajectory_errors(model, prediction_targets(ds.task, unique_train_inits(ds), steps, dt));
}

/// Per time step: mean squared error and mean true energy along model
/// predictions of the given truth trajectories.
struct PredictionSeries {
  std::vector<double> time;
  std::vector<double> mse;
  std::vector<double> energy;         // true energy of predicted states
  std::vector<double> truth_energy;   // true energy of reference states
  std::vector<double> energy_std;     // per-trajectory std of predicted energy over time, averaged
};

inline PredictionSeries prediction_series(const ModelBundle& model, Task task, const std::vector<Trajectory>& trajs) {
  PredictionSeries s;
  if (trajs.empty()) return s;
  const Eigen::Index len = trajs.front().length();
  const double dt = trajs.front().dt;
  Matrix x0(static_cast<Eigen::Index>(trajs.size()), trajs.front().states.cols());
  Matrix u(static_cast<Eigen::Index>(trajs.size()), trajs.front().u.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    x0.row(static_cast<Eigen::Index>(i)) = trajs[i].states.row(0);
    u.row(static_cast<Eigen::Index>(i)) = trajs[i].u.transpose();
  }
  const auto snaps = model_rollout(model, x0, u, static_cast<int>(len - 1), dt);
  std::vector<std::vector<double>> per_traj(trajs.size());
  for (Eigen::Index t = 0; t < len; ++t) {
    double mse = 0.0, e = 0.0, et = 0.0;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const Vector xp = snaps[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i)).transpose();
      const Vector xt = trajs[i].state(t);
      mse += (xp - xt).squaredNorm() / static_cast<double>(xp.size());
      const double ep = truth_energy(task, xp);
      per_traj[i].push_back(ep);
      e += ep;
      et += truth_energy(task, xt);
    }
    const auto n = static_cast<double>(trajs.size());
    s.time.push_back(static_cast<double>(t) * dt);
    s.mse.push_back(mse / n);
    s.energy.push_back(e / n);
    s.truth_energy.push_back(et / n);
  }
  double avg = 0.0;
  for (const auto& v : per_traj) avg += summarize(v).std;
  s.energy_std.push_back(avg / static_cast<double>(per_traj.size()));
  return s;
}

}  // namespace symoden::envsim
