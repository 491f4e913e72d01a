#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "symoden/envsim.hpp"

namespace dk = symoden::diffkit;
namespace hd = symoden::hamdyn;
namespace es = symoden::envsim;
using dk::Matrix;
using dk::Vector;
using es::Task;

namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

es::Dataset dataset(Task t, int n_init, std::uint64_t seed = 3) {
  es::DatasetSpec spec;
  spec.task = t;
  spec.n_init = n_init;
  spec.seed = seed;
  return es::generate_dataset(spec);
}

const std::vector<Task> kAllTasks{Task::kTask1, Task::kTask2, Task::kTask3, Task::kTask4, Task::kTask3Fa,
                                  Task::kTask4Fa};

}  // namespace

TEST(Pendulum, RnFieldExamples) {
  EXPECT_EQ(es::pendulum_rn_field(0, 1, 0), Eigen::Vector2d(3, 0));
  const auto top = es::pendulum_rn_field(kPi, 0, 0);
  EXPECT_EQ(top(0), 0.0);
  EXPECT_NEAR(top(1), 0.0, 1e-15);
  EXPECT_NEAR(es::pendulum_rn_field(kPi / 2, 0, 2)(1), -3.0, 1e-15);
}

TEST(Pendulum, EmbeddedFieldExamples) {
  EXPECT_EQ(es::pendulum_embedded_field(1, 0, 0, 0), Eigen::Vector3d(0, 0, 0));
  EXPECT_EQ(es::pendulum_embedded_field(0, 1, 0, 0), Eigen::Vector3d(0, 0, -15));
  EXPECT_EQ(es::pendulum_embedded_field(0, 1, 0, 1), Eigen::Vector3d(0, 0, -12));
  EXPECT_THROW(es::pendulum_embedded_field(1.0, 0.1, 0, 0), symoden::ContractError);
}

TEST(Pendulum, HamiltonianConservedOverFortySteps) {
  // small swing: RK4's energy error scales with amplitude
  const auto traj = es::truth_rollout(Task::kTask1, vec({0.1, 0.05}), vec({0.0}), 40, 0.05);
  const double e0 = es::truth_energy(Task::kTask1, traj.state(0));
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    EXPECT_LT(std::abs(es::truth_energy(Task::kTask1, traj.state(t)) - e0), 1e-6);
  }
}

TEST(Cartpole, UprightRestIsEquilibrium) {
  EXPECT_TRUE(es::cartpole_field(vec({0.3, 1, 0, 0, 0}), vec({0})).isZero());
  EXPECT_THROW(es::cartpole_field(vec({0, 1, 0.5, 0, 0}), vec({0})), symoden::ContractError);
}

TEST(Cartpole, EnergyDriftOverFortySteps) {
  const Vector x0 = es::from_chart(Task::kTask3, vec({0.2, 2.0, 0.5, -0.7}));
  const auto traj = es::truth_rollout(Task::kTask3, x0, vec({0.0}), 40, 0.02);
  const double e0 = es::truth_energy(Task::kTask3, x0);
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    EXPECT_LT(std::abs(es::truth_energy(Task::kTask3, traj.state(t)) - e0), 1e-5 * std::abs(e0));
  }
}

TEST(Acrobot, HangingRestIsEquilibrium) {
  EXPECT_TRUE(es::acrobot_field(vec({1, 0, 1, 0, 0, 0}), vec({0})).isZero());
  EXPECT_TRUE(es::acrobot_field(vec({1, 0, 1, 0, 0, 0}), vec({0, 0})).isZero());
  EXPECT_THROW(es::acrobot_field(vec({1, 0, 0.5, 0, 0, 0}), vec({0})), symoden::ContractError);
}

TEST(Acrobot, EnergyConservedUnforced) {
  const Vector x0 = es::from_chart(Task::kTask4, vec({0.5, -1.0, 0.3, 0.2}));
  const auto traj = es::truth_rollout(Task::kTask4, x0, vec({0.0}), 40, 0.02);
  const double e0 = es::truth_energy(Task::kTask4, x0);
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    EXPECT_LT(std::abs(es::truth_energy(Task::kTask4, traj.state(t)) - e0), 1e-5 * (1.0 + std::abs(e0)));
  }
}

// Power balance: dE/dt = velocity . generalized force from u.
TEST(Truth, EnergyRateMatchesInputPower) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-kPi, kPi), r(-1.5, 1.5);
  for (Task t : {Task::kTask3Fa, Task::kTask4Fa}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Vector z = vec({a(rng), a(rng), r(rng), r(rng)});
      const Vector x = es::from_chart(t, z);
      const Vector u = vec({r(rng), r(rng)});
      const Vector f = es::truth_field(t)(x, u);
      const double h = 1e-6;
      const double rate = (es::truth_energy(t, x + h * f) - es::truth_energy(t, x - h * f)) / (2 * h);
      const double power = z(2) * u(0) + z(3) * u(1);
      EXPECT_NEAR(rate, power, 1e-6 * (1.0 + std::abs(power))) << es::to_string(t);
    }
  }
}

TEST(StandIns, ReproduceTruthFields) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> a(-kPi, kPi), r(-2.0, 2.0);
  for (Task t : kAllTasks) {
    const auto m = es::truth_bundle(t);
    const auto info = es::task_info(t);
    for (int trial = 0; trial < 100; ++trial) {
      Vector x;
      if (t == Task::kTask1) {
        x = vec({a(rng), r(rng)});
      } else if (t == Task::kTask2) {
        x = es::from_chart(t, vec({a(rng), r(rng)}));
      } else {
        x = es::from_chart(t, vec({a(rng), a(rng), r(rng), r(rng)}));
      }
      Vector u(info.control_dim);
      for (auto& v : u) v = r(rng);
      const Vector diff = hd::field(m, x, u) - es::truth_field(t)(x, u);
      ASSERT_LT(diff.cwiseAbs().maxCoeff(), 1e-12) << es::to_string(t);
    }
  }
}

TEST(StandIns, EnergyMatchesTruth) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> a(-kPi, kPi), r(-2.0, 2.0);
  for (Task t : {Task::kTask2, Task::kTask3, Task::kTask4}) {
    const auto m = es::truth_bundle(t);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = t == Task::kTask2 ? es::from_chart(t, vec({a(rng), r(rng)}))
                                         : es::from_chart(t, vec({a(rng), a(rng), r(rng), r(rng)}));
      // constant offsets in V are irrelevant; compare differences to a reference
      const Vector ref = t == Task::kTask2 ? es::from_chart(t, vec({0.0, 0.0}))
                                           : es::from_chart(t, vec({0.0, 0.0, 0.0, 0.0}));
      EXPECT_NEAR(hd::energy_of(m, x) - hd::energy_of(m, ref), es::truth_energy(t, x) - es::truth_energy(t, ref),
                  1e-12);
    }
  }
}

TEST(Dataset, CountsAndShapes) {
  const auto ds = dataset(Task::kTask1, 64);
  EXPECT_EQ(ds.train.size(), 320u);
  EXPECT_EQ(ds.test.size(), 320u);
  for (const auto& t : ds.train) {
    EXPECT_EQ(t.length(), 21);
    EXPECT_EQ(t.dt, 0.05);
    EXPECT_EQ(t.task, "task1");
  }
  const auto levels = ds.metadata.at("controls").get<std::vector<double>>();
  EXPECT_EQ(levels, (std::vector<double>{-2, -1, 0, 1, 2}));
  EXPECT_EQ(ds.metadata.at("ranges").at("q").get<std::vector<double>>(), (std::vector<double>{-kPi, 3 * kPi}));
  EXPECT_EQ(es::unique_train_inits(ds).size(), 64u);
}

TEST(Dataset, Task1RangesRespected) {
  const auto ds = dataset(Task::kTask1, 64, 9);
  for (const auto& t : ds.train) {
    EXPECT_GE(t.states(0, 0), -kPi);
    EXPECT_LE(t.states(0, 0), 3 * kPi);
    EXPECT_GE(t.states(0, 1), -1.0);
    EXPECT_LE(t.states(0, 1), 1.0);
  }
}

TEST(Dataset, AnnulusRadius) {
  es::DatasetSpec spec;
  spec.n_init = 32;
  spec.annulus = true;
  const auto ds = es::generate_dataset(spec);
  for (const auto& t : ds.train) {
    const double r = t.state(0).norm();
    EXPECT_GE(r, 1.3 - 1e-12);
    EXPECT_LE(r, 2.3 + 1e-12);
  }
  spec.task = Task::kTask2;
  EXPECT_THROW(es::generate_dataset(spec), symoden::ContractError);
}

TEST(Dataset, DeterministicPerSeed) {
  EXPECT_EQ(es::dataset_jsonl(dataset(Task::kTask2, 8, 4)), es::dataset_jsonl(dataset(Task::kTask2, 8, 4)));
  EXPECT_NE(es::dataset_jsonl(dataset(Task::kTask2, 8, 4)), es::dataset_jsonl(dataset(Task::kTask2, 8, 5)));
}

TEST(Dataset, TrainAndTestInitialConditionsDisjoint) {
  const auto ds = dataset(Task::kTask3, 16);
  for (const auto& a : ds.train) {
    for (const auto& b : ds.test) EXPECT_NE(a.state(0), b.state(0));
  }
}

TEST(Dataset, EmbeddedStatesStayOnCircle) {
  for (Task t : {Task::kTask2, Task::kTask3, Task::kTask4, Task::kTask3Fa, Task::kTask4Fa}) {
    const auto ds = dataset(t, 8);
    const std::vector<std::pair<int, int>> pairs =
        es::is_acrobot(t) ? std::vector<std::pair<int, int>>{{0, 1}, {2, 3}}
                          : std::vector<std::pair<int, int>>{es::is_cartpole(t) ? std::pair{1, 2} : std::pair{0, 1}};
    for (const auto& tr : ds.train) {
      for (Eigen::Index r = 0; r < tr.length(); ++r) {
        for (auto [c, s] : pairs) {
          ASSERT_LT(std::abs(tr.states(r, c) * tr.states(r, c) + tr.states(r, s) * tr.states(r, s) - 1.0), 1e-9);
        }
      }
    }
  }
}

TEST(Dataset, FullyActuatedControlsCycleChannels) {
  const auto ds = dataset(Task::kTask4Fa, 2);
  ASSERT_EQ(ds.train.size(), 10u);
  EXPECT_EQ(ds.train[0].u, vec({-2.0, 0.0}));
  EXPECT_EQ(ds.train[1].u, vec({0.0, -1.0}));
  EXPECT_EQ(ds.train[3].u, vec({0.0, 1.0}));
}

TEST(Dataset, FileRoundTrip) {
  const auto ds = dataset(Task::kTask4, 3);
  const auto path = std::filesystem::temp_directory_path() / "symoden_envsim_roundtrip.jsonl";
  es::write_dataset(ds, path.string());
  const auto back = es::read_dataset(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.task, Task::kTask4);
  ASSERT_EQ(back.train.size(), ds.train.size());
  ASSERT_EQ(back.test.size(), ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(back.train[i].states, ds.train[i].states);
    EXPECT_EQ(back.train[i].u, ds.train[i].u);
  }
  EXPECT_EQ(es::dataset_jsonl(back), es::dataset_jsonl(ds));
}

TEST(Dataset, BadInputs) {
  es::DatasetSpec spec;
  spec.n_init = 0;
  EXPECT_THROW(es::generate_dataset(spec), symoden::ContractError);
  spec.n_init = 2;
  spec.controls.clear();
  EXPECT_THROW(es::generate_dataset(spec), symoden::ContractError);
  EXPECT_THROW(es::read_dataset("/nonexistent/dataset.jsonl"), symoden::ContractError);
  EXPECT_THROW(es::parse_task("task5"), symoden::ContractError);
}

TEST(Metrics, StandInErrorsVanish) {
  const auto ds = dataset(Task::kTask1, 8);
  const auto m = es::truth_bundle(Task::kTask1);
  EXPECT_LT(es::train_error(m, ds).mean, 1e-20);
  EXPECT_LT(es::test_error(m, ds).mean, 1e-20);
  EXPECT_LT(es::prediction_error(m, ds).mean, 1e-20);
}

TEST(Metrics, EmbeddedStandInErrorsAreDiscretizationSized) {
  // truth integrates in the angle chart, the model in embedded coordinates
  const auto ds = dataset(Task::kTask2, 8);
  EXPECT_LT(es::train_error(es::truth_bundle(Task::kTask2), ds).mean, 1e-5);
}

TEST(Metrics, ZeroFieldErrorInClosedForm) {
  const auto ds = dataset(Task::kTask1, 4);
  auto m = es::make_model(Task::kTask1, hd::Variant::kNaive, es::Scale::kDesk, 1);
  auto& net = m.components.at(hd::names::kDynamics).net();
  net = symoden::netcore::zero_params(net.spec);
  double total = 0.0;
  for (const auto& t : ds.train) {
    for (Eigen::Index s = 1; s < t.length(); ++s) total += (t.state(s) - t.state(0)).squaredNorm() / 2.0;
  }
  const auto stats = es::train_error(m, ds);
  EXPECT_NEAR(stats.mean, total / static_cast<double>(ds.train.size()), 1e-12 * total);
  EXPECT_EQ(stats.per_trajectory.size(), ds.train.size());
}

TEST(Metrics, PredictionSeriesOfStandIn) {
  const auto ds = dataset(Task::kTask1, 4);
  const auto targets =
      es::prediction_targets(Task::kTask1, es::unique_train_inits(ds), 40, es::task_info(Task::kTask1).dt);
  const auto s = es::prediction_series(es::truth_bundle(Task::kTask1), Task::kTask1, targets);
  ASSERT_EQ(s.time.size(), 41u);
  EXPECT_DOUBLE_EQ(s.time.back(), 2.0);
  for (std::size_t i = 0; i < s.mse.size(); ++i) {
    EXPECT_LT(s.mse[i], 1e-20);
    EXPECT_NEAR(s.energy[i], s.truth_energy[i], 1e-12);
  }
}

TEST(Architectures, LegalVariantsAndCounts) {
  EXPECT_EQ(es::resolve_variant(Task::kTask1, "symoden"), hd::Variant::kSymRn);
  EXPECT_EQ(es::resolve_variant(Task::kTask3, "symoden"), hd::Variant::kSymHybrid);
  EXPECT_THROW(es::resolve_variant(Task::kTask1, "geometric"), symoden::ContractError);
  EXPECT_THROW(es::resolve_variant(Task::kTask2, "symoden-rn"), symoden::ContractError);
  const auto naive = es::make_model(Task::kTask1, hd::Variant::kNaive, es::Scale::kDesk, 0);
  EXPECT_EQ(naive.at(hd::names::kDynamics).net().spec.widths, (std::vector<int>{3, 150, 150, 2}));
  const auto desk = es::make_model(Task::kTask2, hd::Variant::kSymEmbedded, es::Scale::kDesk, 0);
  EXPECT_EQ(desk.at(hd::names::kMassInv).net().spec.widths, (std::vector<int>{2, 75, 75, 1}));
}
