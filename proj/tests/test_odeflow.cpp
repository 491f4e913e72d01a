#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "symoden/envsim.hpp"
#include "symoden/odeflow.hpp"

namespace dk = symoden::diffkit;
namespace hd = symoden::hamdyn;
namespace es = symoden::envsim;
namespace of = symoden::odeflow;
using dk::Matrix;
using dk::Vector;
using es::Task;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

const hd::PlainField kPendulum = es::truth_field(Task::kTask1);

double pendulum_energy(const Vector& x) { return es::truth_energy(Task::kTask1, x); }

es::Dataset small_dataset(Task t, int n_init, std::uint64_t seed = 1) {
  es::DatasetSpec spec;
  spec.task = t;
  spec.n_init = n_init;
  spec.seed = seed;
  return es::generate_dataset(spec);
}

}  // namespace

TEST(Rk4, ZeroFieldKeepsState) {
  auto f = [](const Vector& x, const Vector&) { return Vector::Zero(x.size()).eval(); };
  const Vector x = vec({1.5, -2.0});
  EXPECT_EQ(of::rk4_step(f, x, 0.1, Vector(0)), x);
}

TEST(Rk4, ConstantRateIsExact) {
  auto f = [](const Vector& x, const Vector&) { return Vector::Ones(x.size()).eval(); };
  EXPECT_EQ(of::rk4_step(f, vec({0.25}), 0.05, Vector(0))(0), 0.25 + 0.05);
}

TEST(Rk4, ExponentialHandArithmetic) {
  auto f = [](const Vector& x, const Vector&) { return x; };
  // k = 1, 1.05, 1.0525, 1.10525
  const double expect = 1.0 + 0.1 / 6.0 * (1.0 + 2.0 * 1.05 + 2.0 * 1.0525 + 1.10525);
  EXPECT_NEAR(of::rk4_step(f, vec({1.0}), 0.1, Vector(0))(0), expect, 1e-15);
  EXPECT_NEAR(expect, 1.1051708333333333, 1e-15);
  EXPECT_NEAR(expect, std::exp(0.1), 1e-7);
}

TEST(Rk4, NonFiniteStageCarriesIndex) {
  int calls = 0;
  auto f = [&](const Vector& x, const Vector&) -> Vector {
    return ++calls == 3 ? Vector::Constant(x.size(), std::nan("")) : x;
  };
  try {
    of::rk4_step(f, vec({1.0}), 0.1, Vector(0));
    FAIL() << "expected NumericFault";
  } catch (const symoden::NumericFault& e) {
    EXPECT_EQ(e.where(), 3);
  }
  EXPECT_THROW(of::rk4_step([](const Vector& x, const Vector&) { return x; }, vec({1.0}), 0.0, Vector(0)),
               symoden::ContractError);
}

TEST(Rk4, GlobalErrorIsFourthOrder) {
  const Vector x0 = vec({1.0, 0.5}), u = vec({0.0});
  const double horizon = 2.0;
  const auto reference = of::rollout(kPendulum, x0, u, static_cast<int>(std::lround(horizon / 0.000125)), 0.000125);
  const Vector ref = reference.state(reference.length() - 1);
  std::vector<double> lh, le;
  for (double h : {0.1, 0.05, 0.025, 0.0125}) {
    const auto traj = of::rollout(kPendulum, x0, u, static_cast<int>(std::lround(horizon / h)), h);
    lh.push_back(std::log(h));
    le.push_back(std::log((traj.state(traj.length() - 1) - ref).norm()));
  }
  // least-squares slope
  const double n = static_cast<double>(lh.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lh.size(); ++i) {
    sx += lh[i];
    sy += le[i];
    sxx += lh[i] * lh[i];
    sxy += lh[i] * le[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_GE(slope, 3.7);
  EXPECT_LE(slope, 4.3);
}

TEST(Rollout, EquilibriumStaysPut) {
  const auto traj = of::rollout(kPendulum, vec({0.0, 0.0}), vec({0.0}), 50, 0.05);
  EXPECT_TRUE(traj.states.isZero());
}

TEST(Rollout, PendulumEnergyDriftIsSmall) {
  // RK4 energy error grows with amplitude; this bound holds for small swings
  const auto traj = of::rollout(kPendulum, vec({0.1, -0.05}), vec({0.0}), 20, 0.05);
  const double e0 = pendulum_energy(traj.state(0));
  for (Eigen::Index t = 1; t < traj.length(); ++t) EXPECT_LT(std::abs(pendulum_energy(traj.state(t)) - e0), 1e-6);
}

TEST(Rollout, SingleStepEqualsRk4Step) {
  const Vector x0 = vec({0.4, 0.9}), u = vec({1.0});
  const auto traj = of::rollout(kPendulum, x0, u, 1, 0.05);
  EXPECT_EQ(traj.length(), 2);
  EXPECT_EQ(traj.state(1), of::rk4_step(kPendulum, x0, 0.05, u));
}

TEST(Rollout, FaultCarriesStep) {
  auto f = [](const Vector& x, const Vector&) -> Vector { return x.array().square(); };
  try {
    of::rollout(f, vec({1.0}), Vector(0), 100, 0.5);
    FAIL() << "expected NumericFault";
  } catch (const symoden::NumericFault& e) {
    EXPECT_GT(e.where(), 0);
    EXPECT_NE(std::string(e.what()).find("rollout step"), std::string::npos);
  }
  EXPECT_THROW(of::rollout(kPendulum, vec({0.0, 0.0}), vec({0.0}), 0, 0.05), symoden::ContractError);
}

TEST(Windows, CountsAndContents) {
  const auto traj = of::rollout(kPendulum, vec({0.3, 0.2}), vec({0.0}), 20, 0.05);
  EXPECT_EQ(of::make_windows(traj, 3).size(), 18u);
  EXPECT_EQ(of::make_windows(traj, 20).size(), 1u);
  const auto pairs = of::make_windows(traj, 1);
  ASSERT_EQ(pairs.size(), 20u);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].root, traj.state(static_cast<Eigen::Index>(i)));
    EXPECT_EQ(pairs[i].targets.at(0), traj.state(static_cast<Eigen::Index>(i) + 1));
  }
  EXPECT_THROW(of::make_windows(traj, 21), symoden::ContractError);
  EXPECT_THROW(of::make_windows(traj, 0), symoden::ContractError);
}

TEST(TrajectoryLoss, TruthModelOnItsOwnData) {
  const auto ds = small_dataset(Task::kTask1, 4);
  const auto m = es::truth_bundle(Task::kTask1);
  const hd::PlainField f = [&](const Vector& x, const Vector& u) { return hd::field(m, x, u); };
  for (const auto& traj : ds.train) EXPECT_LT(of::trajectory_loss(f, of::make_windows(traj, 3), traj.dt), 1e-20);
}

TEST(TrajectoryLoss, ZeroFieldGivesDisplacement) {
  const auto traj = of::rollout(kPendulum, vec({1.0, 0.3}), vec({0.0}), 10, 0.05);
  const auto ws = of::make_windows(traj, 2);
  double expect = 0.0;
  for (const auto& w : ws) {
    for (const auto& t : w.targets) expect += (t - w.root).squaredNorm();
  }
  expect /= static_cast<double>(ws.size());
  auto zero = [](const Vector& x, const Vector&) { return Vector::Zero(x.size()).eval(); };
  EXPECT_NEAR(of::trajectory_loss(zero, ws, 0.05), expect, 1e-14 * expect);
}

TEST(TrajectoryLoss, WindowOrderInvariantAndTapeAgrees) {
  const auto traj = of::rollout(kPendulum, vec({2.0, -0.3}), vec({0.5}), 12, 0.05);
  auto ws = of::make_windows(traj, 3);
  const auto m = es::make_model(Task::kTask1, hd::Variant::kSymRn, es::Scale::kDesk, 3);
  const hd::PlainField f = [&](const Vector& x, const Vector& u) { return hd::field(m, x, u); };
  const double a = of::trajectory_loss(f, ws, 0.05);
  std::reverse(ws.begin(), ws.end());
  const double b = of::trajectory_loss(f, ws, 0.05);
  EXPECT_NEAR(a, b, 1e-13 * a);

  dk::Tape t;
  hd::BoundModel bm(t, m);
  const of::TapeField tf = [&](const dk::Var& x, const dk::Var& u) { return bm.field(x, u); };
  EXPECT_NEAR(of::trajectory_loss(t, tf, of::stack(ws), 0.05).scalar(), a, 1e-12 * a);
}

// Reverse-mode gradient of the windowed loss against central differences on
// every parameter of a desk-scale model.
TEST(TrajectoryLoss, ParameterGradientMatchesCentralDifferences) {
  auto m = es::make_model(Task::kTask2, hd::Variant::kSymEmbedded, es::Scale::kDesk, 4);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01(0.0, 0.1);
  for (Matrix* p : m.tensors()) {
    if (p->rows() == 1) *p = p->unaryExpr([&](double) { return n01(rng); });
  }
  const auto traj = es::truth_rollout(Task::kTask2, es::from_chart(Task::kTask2, vec({1.0, 0.4})), vec({1.0}), 4,
                                      0.05);
  auto ws = of::make_windows(traj, 3);
  const auto wb = of::stack(ws);
  ASSERT_EQ(wb.size(), 2);

  auto loss = [&](const hd::ModelBundle& model) {
    dk::Tape t;
    hd::BoundModel bm(t, model);
    return of::trajectory_loss(t, [&](const dk::Var& x, const dk::Var& u) { return bm.field(x, u); }, wb, 0.05)
        .scalar();
  };
  std::vector<Matrix> analytic;
  {
    dk::Tape t;
    hd::BoundModel bm(t, m);
    const auto g = dk::backward(
        of::trajectory_loss(t, [&](const dk::Var& x, const dk::Var& u) { return bm.field(x, u); }, wb, 0.05));
    for (const auto& leaf : bm.leaves()) analytic.push_back(g[leaf]);
  }
  auto params = m.tensors();
  ASSERT_EQ(params.size(), analytic.size());
  double gmax = 0.0;
  for (const auto& g : analytic) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p(i);
      p(i) = keep + eps;
      const double up = loss(m);
      p(i) = keep - eps;
      const double down = loss(m);
      p(i) = keep;
      const double num = (up - down) / (2.0 * eps);
      const double ana = analytic[k](i);
      // entries far below the largest gradient are compared at that scale
      const double denom = std::max({std::abs(ana), std::abs(num), 1e-3 * gmax});
      worst = std::max(worst, std::abs(ana - num) / denom);
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Matrix p = Matrix::Constant(2, 2, 0.7);
  const Matrix before = p;
  of::AdamState st;
  st.m = {Matrix::Constant(2, 2, 0.5)};
  st.v = {Matrix::Constant(2, 2, 0.25)};
  of::AdamConfig cfg;
  cfg.learning_rate = 0.0;  // isolate the moment decay
  of::adam_step({&p}, {Matrix::Zero(2, 2)}, st, cfg);
  EXPECT_EQ(p, before);
  EXPECT_DOUBLE_EQ(st.m[0](0, 0), 0.45);
  EXPECT_DOUBLE_EQ(st.v[0](0, 0), 0.25 * 0.999);

  of::AdamState fresh;
  of::adam_step({&p}, {Matrix::Zero(2, 2)}, fresh, of::AdamConfig{});
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepArithmeticAndSign) {
  Matrix p = Matrix::Constant(1, 1, 0.0);
  of::AdamState st;
  of::adam_step({&p}, {Matrix::Constant(1, 1, 1.0)}, st, of::AdamConfig{});
  EXPECT_NEAR(p(0, 0), -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_EQ(st.t, 1);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    Matrix q = Matrix::Zero(1, 1);
    const double g = n01(rng);
    of::AdamState s;
    of::adam_step({&q}, {Matrix::Constant(1, 1, g)}, s, of::AdamConfig{});
    EXPECT_EQ(q(0, 0) < 0, g > 0);
  }
}

TEST(Train, ZeroEpochsKeepsParameters) {
  const auto ds = small_dataset(Task::kTask1, 4);
  const auto m = es::make_model(Task::kTask1, hd::Variant::kSymRn, es::Scale::kDesk, 1);
  of::TrainConfig cfg;
  cfg.epochs = 0;
  auto [trained, report] = of::train(m, ds.train, cfg);
  EXPECT_TRUE(report.epochs.empty());
  EXPECT_EQ(report.history_csv(), "epoch,train_error,wall_time_s\n");
  EXPECT_EQ(hd::to_json(trained), hd::to_json(m));
}

TEST(Train, DeterministicAndDecreasing) {
  const auto ds = small_dataset(Task::kTask1, 8);
  const auto m = es::make_model(Task::kTask1, hd::Variant::kSymRn, es::Scale::kDesk, 2);
  of::TrainConfig cfg;
  cfg.epochs = 25;
  cfg.seed = 5;
  cfg.adam.learning_rate = 3e-3;
  int seen = 0;
  auto a = of::train(m, ds.train, cfg, [&](const of::EpochRecord&) { ++seen; });
  auto b = of::train(m, ds.train, cfg);
  EXPECT_EQ(seen, 25);
  ASSERT_EQ(a.second.epochs.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(a.second.epochs[i].train_error, b.second.epochs[i].train_error);
  EXPECT_EQ(hd::to_json(a.first), hd::to_json(b.first));
  EXPECT_LT(a.second.epochs.back().train_error, a.second.initial_error);
  const std::string csv = a.second.history_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}

TEST(Train, GradientMatchingVariantRuns) {
  const auto ds = small_dataset(Task::kTask2, 4);
  const auto m = es::make_model(Task::kTask2, hd::Variant::kNaive, es::Scale::kDesk, 2);
  of::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.loss = of::LossKind::kGradientMatching;
  auto [trained, report] = of::train(m, ds.train, cfg);
  EXPECT_EQ(report.epochs.size(), 5u);
  EXPECT_LT(report.epochs.back().train_error, report.initial_error);
}

TEST(Train, FaultsAndMismatchesAbort) {
  const auto ds = small_dataset(Task::kTask1, 2);
  auto m = es::make_model(Task::kTask1, hd::Variant::kSymRn, es::Scale::kDesk, 1);
  m.components[hd::names::kPotential] = hd::Component{hd::AnalyticFn([](const dk::Jet& c) {
    return dk::sqrt(es::detail::constant_like(c, -1.0));
  })};
  of::TrainConfig cfg;
  cfg.epochs = 1;
  try {
    of::train(m, ds.train, cfg);
    FAIL() << "expected NumericFault";
  } catch (const symoden::NumericFault&) {
  }
  EXPECT_THROW(of::train(m, {}, cfg), symoden::ContractError);
  const auto wide = small_dataset(Task::kTask2, 2);
  EXPECT_THROW(of::train(es::make_model(Task::kTask1, hd::Variant::kSymRn, es::Scale::kDesk, 1), wide.train, cfg),
               symoden::ContractError);
}

TEST(GradientMatching, ConstantFieldIsExact) {
  auto c = [](const Vector& x, const Vector&) { return Vector::Constant(x.size(), 0.7).eval(); };
  const auto traj = of::rollout(c, vec({1.0, -1.0}), Vector(0), 10, 0.1);
  EXPECT_NEAR(of::gradient_matching_loss(c, traj, 0.1), 0.0, 1e-24);
}

TEST(GradientMatching, ZeroFieldGivesRateMagnitude) {
  const auto traj = of::rollout(kPendulum, vec({1.0, 0.5}), vec({0.0}), 15, 0.05);
  const Matrix fd = of::finite_difference_rates(traj, 0.05);
  auto zero = [](const Vector& x, const Vector&) { return Vector::Zero(x.size()).eval(); };
  EXPECT_NEAR(of::gradient_matching_loss(zero, traj, 0.05), fd.squaredNorm() / 16.0, 1e-12);
}

TEST(GradientMatching, TruthFieldTruncationError) {
  const auto traj = of::rollout(kPendulum, vec({1.0, 0.5}), vec({0.0}), 20, 0.05);
  const double l = of::gradient_matching_loss(kPendulum, traj, 0.05);
  EXPECT_GT(l, 0.0);
  EXPECT_LT(l, 1e-3);
  EXPECT_THROW(of::gradient_matching_loss(kPendulum, traj, 0.0), symoden::ContractError);
}

TEST(GradientMatching, EndpointStencilsAreSecondOrder) {
  of::Trajectory traj;
  traj.states.resize(6, 1);
  for (int t = 0; t < 6; ++t) traj.states(t, 0) = 2.0 + 3.0 * (0.1 * t) - 4.0 * (0.1 * t) * (0.1 * t);
  const Matrix fd = of::finite_difference_rates(traj, 0.1);
  for (int t = 0; t < 6; ++t) EXPECT_NEAR(fd(t, 0), 3.0 - 8.0 * (0.1 * t), 1e-12);
}
