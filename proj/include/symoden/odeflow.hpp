#pragma once

// RK4 integration, horizon windows, losses and the Adam training loop.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "symoden/diffkit.hpp"
#include "symoden/errors.hpp"
#include "symoden/hamdyn.hpp"

namespace symoden::odeflow {

using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;

/// Recorded states (one per row) under a constant control.
struct Trajectory {
  Matrix states;
  Vector u;
  double dt = 0.0;
  std::string task;

  Eigen::Index length() const { return states.rows(); }
  Vector state(Eigen::Index t) const { return states.row(t).transpose(); }
};

namespace detail {
inline bool finite(const Var& x) { return x.value().allFinite(); }
template <class X>
bool finite(const X& x) {
  return x.allFinite();
}
}  // namespace detail

/// One classical RK4 step of dx/dt = f(x, u) with u held fixed. Works for
/// tape Vars (differentiable) and plain Eigen values alike.
template <class F, class X, class U>
X rk4_step(F&& f, const X& x, double h, const U& u) {
  if (!(h > 0.0)) throw ContractError("rk4_step needs h > 0");
  auto check = [](const X& k, long stage) {
    if (!detail::finite(k)) throw NumericFault("non-finite RK4 stage " + std::to_string(stage), stage);
  };
  const X k1 = f(x, u);
  check(k1, 1);
  const X k2 = f(x + (0.5 * h) * k1, u);
  check(k2, 2);
  const X k3 = f(x + (0.5 * h) * k2, u);
  check(k3, 3);
  const X k4 = f(x + h * k3, u);
  check(k4, 4);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

using BatchField = std::function<Matrix(const Matrix& x, const Matrix& u)>;

/// Integrate a batch (one state per row) for `steps` steps; returns steps+1
/// snapshots.
inline std::vector<Matrix> rollout_batch(const BatchField& f, const Matrix& x0, const Matrix& u, int steps,
                                         double h) {
  if (steps < 1) throw ContractError("rollout needs steps >= 1");
  std::vector<Matrix> out{x0};
  out.reserve(static_cast<std::size_t>(steps) + 1);
  for (int s = 0; s < steps; ++s) {
    try {
      out.push_back(rk4_step(f, out.back(), h, u));
    } catch (const NumericFault& e) {
      throw NumericFault(std::string(e.what()) + " at rollout step " + std::to_string(s), s);
    }
  }
  return out;
}

using PlainField = hamdyn::PlainField;

inline Trajectory rollout(const PlainField& f, const Vector& x0, const Vector& u, int steps, double h) {
  BatchField bf = [&](const Matrix& x, const Matrix& uu) -> Matrix {
    return f(x.row(0).transpose(), uu.row(0).transpose()).transpose();
  };
  const auto snaps = rollout_batch(bf, x0.transpose(), u.transpose(), steps, h);
  Trajectory t;
  t.states.resize(static_cast<Eigen::Index>(snaps.size()), x0.size());
  for (std::size_t i = 0; i < snaps.size(); ++i) t.states.row(static_cast<Eigen::Index>(i)) = snaps[i].row(0);
  t.u = u;
  t.dt = h;
  return t;
}

struct Window {
  Vector root;
  std::vector<Vector> targets;
  Vector u;
};

inline std::vector<Window> make_windows(const Trajectory& traj, int tau) {
  if (tau < 1) throw ContractError("tau must be >= 1");
  if (traj.length() < tau + 1) {
    throw ContractError("trajectory of " + std::to_string(traj.length()) + " states is too short for tau=" +
                        std::to_string(tau));
  }
  std::vector<Window> out;
  for (Eigen::Index i = 0; i + tau < traj.length(); ++i) {
    Window w{traj.state(i), {}, traj.u};
    for (int k = 1; k <= tau; ++k) w.targets.push_back(traj.state(i + k));
    out.push_back(std::move(w));
  }
  return out;
}

/// Windows stacked for batched evaluation: roots, controls and one target
/// matrix per horizon step.
struct WindowBatch {
  Matrix roots;
  Matrix u;
  std::vector<Matrix> targets;

  Eigen::Index size() const { return roots.rows(); }
};

inline WindowBatch stack(const std::vector<Window>& windows) {
  if (windows.empty()) throw ContractError("no windows to stack");
  const auto b = static_cast<Eigen::Index>(windows.size());
  const std::size_t tau = windows.front().targets.size();
  WindowBatch wb;
  wb.roots.resize(b, windows.front().root.size());
  wb.u.resize(b, windows.front().u.size());
  wb.targets.assign(tau, Matrix(b, windows.front().root.size()));
  for (Eigen::Index i = 0; i < b; ++i) {
    const Window& w = windows[static_cast<std::size_t>(i)];
    if (w.targets.size() != tau) throw ContractError("windows disagree on tau");
    wb.roots.row(i) = w.root.transpose();
    wb.u.row(i) = w.u.transpose();
    for (std::size_t k = 0; k < tau; ++k) wb.targets[k].row(i) = w.targets[k].transpose();
  }
  return wb;
}

using TapeField = std::function<Var(const Var& x, const Var& u)>;

/// Mean over windows of the summed squared error along the tau-step rollout.
inline Var trajectory_loss(Tape& tape, const TapeField& f, const WindowBatch& wb, double h) {
  Var x = tape.constant(wb.roots);
  const Var u = tape.constant(wb.u);
  Var err;
  for (std::size_t k = 0; k < wb.targets.size(); ++k) {
    x = rk4_step(f, x, h, u);
    const Var d = x - tape.constant(wb.targets[k]);
    const Var s = diffkit::sum(d * d);
    err = k == 0 ? s : err + s;
  }
  return err / static_cast<double>(wb.size());
}

inline double trajectory_loss(const PlainField& f, const std::vector<Window>& windows, double h) {
  if (windows.empty()) throw ContractError("no windows");
  double total = 0.0;
  for (const Window& w : windows) {
    Vector x = w.root;
    for (const Vector& target : w.targets) {
      x = rk4_step(f, x, h, w.u);
      total += (x - target).squaredNorm();
    }
  }
  return total / static_cast<double>(windows.size());
}

/// Finite-difference state derivatives: centered inside, second-order
/// one-sided at the ends (first-order for two-state trajectories).
inline Matrix finite_difference_rates(const Trajectory& traj, double h) {
  if (!(h > 0.0)) throw ContractError("finite differences need h > 0");
  const Eigen::Index n = traj.length();
  if (n < 2) throw ContractError("finite differences need at least two states");
  const Matrix& x = traj.states;
  Matrix d(n, x.cols());
  if (n == 2) {
    d.row(0) = (x.row(1) - x.row(0)) / h;
    d.row(1) = d.row(0);
    return d;
  }
  for (Eigen::Index t = 1; t + 1 < n; ++t) d.row(t) = (x.row(t + 1) - x.row(t - 1)) / (2.0 * h);
  d.row(0) = (-3.0 * x.row(0) + 4.0 * x.row(1) - x.row(2)) / (2.0 * h);
  d.row(n - 1) = (3.0 * x.row(n - 1) - 4.0 * x.row(n - 2) + x.row(n - 3)) / (2.0 * h);
  return d;
}

/// Mean over recorded states of ||f(x_t, u) - fd_t||^2.
inline double gradient_matching_loss(const PlainField& f, const Trajectory& traj, double h) {
  const Matrix fd = finite_difference_rates(traj, h);
  double total = 0.0;
  for (Eigen::Index t = 0; t < traj.length(); ++t) total += (f(traj.state(t), traj.u) - fd.row(t).transpose()).squaredNorm();
  return total / static_cast<double>(traj.length());
}

struct MatchBatch {
  Matrix states;
  Matrix u;
  Matrix rates;
};

inline Var gradient_matching_loss(Tape& tape, const TapeField& f, const MatchBatch& mb) {
  const Var d = f(tape.constant(mb.states), tape.constant(mb.u)) - tape.constant(mb.rates);
  return diffkit::sum(d * d) / static_cast<double>(mb.states.rows());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;
};

/// Bias-corrected Adam update; advances `state.t` by one.
inline void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ContractError("adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam: state does not match parameters");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ContractError("adam: gradient shape mismatch");
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.learning_rate * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Training

enum class LossKind { kIntegrated, kGradientMatching };

struct TrainConfig {
  int tau = 3;
  int epochs = 300;
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kIntegrated;
};

struct EpochRecord {
  int epoch = 0;
  double train_error = 0.0;  // mean minibatch loss over the epoch
  double wall_time_s = 0.0;  // cumulative
};

struct LossReport {
  std::vector<EpochRecord> epochs;
  double initial_error = 0.0;  // loss of the untrained model over all batches

  std::string history_csv() const {
    std::string s = "epoch,train_error,wall_time_s\n";
    char buf[96];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.6f\n", e.epoch, e.train_error, e.wall_time_s);
      s += buf;
    }
    return s;
  }
};

/// Trajectories grouped by control level, ordered by control value.
inline std::vector<std::vector<const Trajectory*>> group_by_control(const std::vector<Trajectory>& data) {
  auto less = [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  std::map<Vector, std::vector<const Trajectory*>, decltype(less)> groups(less);
  for (const Trajectory& t : data) groups[t.u].push_back(&t);
  std::vector<std::vector<const Trajectory*>> out;
  for (auto& [u, g] : groups) out.push_back(std::move(g));
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Train by differentiating through the unrolled integrator. One minibatch
/// per control level; batch order reshuffled every epoch.
inline std::pair<hamdyn::ModelBundle, LossReport> train(hamdyn::ModelBundle model, const std::vector<Trajectory>& data,
                                                        const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  model.validate();
  if (cfg.epochs < 0) throw ContractError("epochs must be >= 0");
  if (data.empty()) throw ContractError("training set is empty");
  const double h = data.front().dt;
  for (const auto& t : data) {
    if (t.dt != h) throw ContractError("training trajectories disagree on dt");
    if (t.states.cols() != model.dims.state()) {
      throw ContractError("trajectory width " + std::to_string(t.states.cols()) + " does not match model state " +
                          std::to_string(model.dims.state()));
    }
    if (t.u.size() != model.dims.control) throw ContractError("trajectory control width does not match model");
  }

  const auto groups = group_by_control(data);
  std::vector<WindowBatch> windows;
  std::vector<MatchBatch> matches;
  for (const auto& g : groups) {
    if (cfg.loss == LossKind::kIntegrated) {
      std::vector<Window> ws;
      for (const Trajectory* t : g) {
        auto w = make_windows(*t, cfg.tau);
        ws.insert(ws.end(), w.begin(), w.end());
      }
      windows.push_back(stack(ws));
    } else {
      Eigen::Index rows = 0;
      for (const Trajectory* t : g) rows += t->length();
      MatchBatch mb{Matrix(rows, model.dims.state()), Matrix(rows, model.dims.control),
                    Matrix(rows, model.dims.state())};
      Eigen::Index at = 0;
      for (const Trajectory* t : g) {
        mb.states.middleRows(at, t->length()) = t->states;
        mb.u.middleRows(at, t->length()) = t->u.transpose().replicate(t->length(), 1);
        mb.rates.middleRows(at, t->length()) = finite_difference_rates(*t, h);
        at += t->length();
      }
      matches.push_back(std::move(mb));
    }
  }
  const std::size_t nbatch = groups.size();

  auto batch_loss = [&](Tape& tape, const hamdyn::BoundModel& bm, std::size_t b) {
    TapeField f = [&bm](const Var& x, const Var& u) { return bm.field(x, u); };
    return cfg.loss == LossKind::kIntegrated ? trajectory_loss(tape, f, windows[b], h)
                                             : gradient_matching_loss(tape, f, matches[b]);
  };

  LossReport report;
  {
    double total = 0.0;
    for (std::size_t b = 0; b < nbatch; ++b) {
      Tape tape;
      hamdyn::BoundModel bm(tape, model);
      total += batch_loss(tape, bm, b).scalar();
    }
    report.initial_error = total / static_cast<double>(nbatch);
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  std::vector<std::size_t> order(nbatch);
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < nbatch; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t pos = 0; pos < nbatch; ++pos) {
      const std::size_t b = order[pos];
      try {
        Tape tape;
        hamdyn::BoundModel bm(tape, model);
        const Var loss = batch_loss(tape, bm, b);
        const auto grads = diffkit::backward(loss);
        std::vector<Matrix> g;
        for (const Var& leaf : bm.leaves()) g.push_back(grads[leaf]);
        total += loss.scalar();
        adam_step(model.tensors(), g, adam, cfg.adam);
      } catch (const NumericFault& e) {
        throw NumericFault("epoch " + std::to_string(epoch) + " batch " + std::to_string(pos) + ": " + e.what(),
                           e.where());
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back({epoch, total / static_cast<double>(nbatch), wall});
    if (on_epoch) on_epoch(report.epochs.back());
  }
  return {std::move(model), std::move(report)};
}

}  // namespace symoden::odeflow
