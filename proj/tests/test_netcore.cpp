#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "symoden/diffkit.hpp"
#include "symoden/netcore.hpp"

namespace dk = symoden::diffkit;
namespace nc = symoden::netcore;
using dk::Matrix;
using dk::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Sum of outputs as a tape function of (input, W1, b1, W2, b2, ...).
dk::Var net_sum(dk::Tape&, const std::vector<dk::Var>& x) {
  dk::Var h = x[0];
  const std::size_t layers = (x.size() - 1) / 2;
  for (std::size_t i = 0; i < layers; ++i) {
    h = dk::add_row(dk::matmul(h, x[1 + 2 * i]), x[2 + 2 * i]);
    if (i + 1 < layers) h = dk::tanh(h);
  }
  return dk::sum(h * h);
}

std::vector<Matrix> net_inputs(const nc::MlpParams& p, const Matrix& in) {
  std::vector<Matrix> out{in};
  for (const auto& l : p.layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

}  // namespace

TEST(MlpSpec, RejectsMissingHiddenLayer) {
  EXPECT_THROW(nc::MlpSpec({{2, 1}}).validate(), symoden::ContractError);
  EXPECT_THROW(nc::MlpSpec({{2, 0, 1}}).validate(), symoden::ContractError);
  EXPECT_NO_THROW(nc::MlpSpec({{2, 4, 1}}).validate());
}

TEST(MlpEval, ZeroNetGivesZero) {
  const auto p = nc::zero_params({{3, 8, 8, 2}});
  EXPECT_TRUE(nc::mlp_eval(p, vec({0.3, -1.0, 2.0})).isZero());
}

TEST(MlpEval, SingleAffineLayer) {
  nc::MlpParams p;
  p.spec.widths = {1, 1};
  p.layers.push_back({Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0)});
  EXPECT_DOUBLE_EQ(nc::mlp_eval(p, vec({3.0}))(0), 7.0);
}

TEST(MlpEval, ShapeMismatchIsContractError) {
  const auto p = nc::init_params({{2, 4, 1}}, 1);
  EXPECT_THROW(nc::mlp_eval(p, vec({1.0})), symoden::ContractError);
}

TEST(MlpEval, TapeForwardMatchesPlainEval) {
  const auto p = nc::init_params({{3, 16, 16, 2}}, 4);
  const Matrix in = Matrix::Random(5, 3);
  dk::Tape t;
  const auto b = nc::bind(t, p);
  const Matrix tape_out = nc::forward(b, t.constant(in)).value();
  EXPECT_LT((tape_out - nc::mlp_eval_batch(p, in)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MlpEval, SmallNetGradCheck) {
  const auto p = nc::init_params({{2, 16, 1}}, 9);
  const auto rep = dk::grad_check(net_sum, net_inputs(p, Matrix::Random(3, 2)), 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(MlpEval, GradCheckAcrossRandomConfigurations) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> width(1, 12), depth(1, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> w{width(rng)};
    const int hidden = depth(rng);
    for (int i = 0; i < hidden; ++i) w.push_back(width(rng));
    w.push_back(width(rng));
    const auto p = nc::init_params({w}, static_cast<std::uint64_t>(trial));
    // h near cbrt(machine eps): at 1e-6 round-off alone reaches ~1e-6 on small entries
    const auto rep = dk::grad_check(net_sum, net_inputs(p, Matrix::Random(2, w.front())), 1e-5);
    ASSERT_LT(rep.max_rel_error, 1e-6) << nc::MlpSpec{w}.describe();
  }
}

TEST(MlpEval, HiddenPermutationLeavesOutputUnchanged) {
  auto p = nc::init_params({{3, 6, 2}}, 2);
  p.layers[0].bias = Matrix::Random(1, 6);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  nc::MlpParams q = p;
  q.layers[0].weight = p.layers[0].weight * perm;
  q.layers[0].bias = p.layers[0].bias * perm;
  q.layers[1].weight = perm.transpose() * p.layers[1].weight;
  const Matrix in = Matrix::Random(4, 3);
  // equal up to the summation order of the output layer
  EXPECT_LT((nc::mlp_eval_batch(p, in) - nc::mlp_eval_batch(q, in)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InitParams, DeterministicPerSeed) {
  const nc::MlpSpec s{{2, 10, 3}};
  const auto a = nc::init_params(s, 77), b = nc::init_params(s, 77), c = nc::init_params(s, 78);
  EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
  EXPECT_EQ(a.layers[1].weight, b.layers[1].weight);
  EXPECT_NE(a.layers[0].weight, c.layers[0].weight);
}

TEST(InitParams, ParameterCount) {
  EXPECT_EQ(nc::MlpSpec({{1, 300, 300, 1}}).parameter_count(), 91201u);
  EXPECT_EQ(nc::init_params({{1, 300, 300, 1}}, 0).parameter_count(), 91201u);
}

TEST(InitParams, WeightsCenteredWithinGlorotBound) {
  const auto p = nc::init_params({{300, 340, 1}}, 3);  // 102,000 first-layer draws
  const Matrix& w = p.layers[0].weight;
  const double limit = std::sqrt(6.0 / 640.0);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), limit);
  const double n = static_cast<double>(w.size());
  const double stderr_ = limit / std::sqrt(3.0) / std::sqrt(n);
  EXPECT_LT(std::abs(w.mean()), 3.0 * stderr_);
  EXPECT_TRUE(p.layers[0].bias.isZero());
}

TEST(MassInv, ScalarCase) {
  const Matrix m = nc::mass_inv_from_output(vec({2.0}), 1, 0.01);
  EXPECT_DOUBLE_EQ(m(0, 0), 4.01);
}

TEST(MassInv, ZeroFactorGivesEpsilonIdentity) {
  const Matrix m = nc::mass_inv_from_output(Vector::Zero(3), 2, 0.01);
  EXPECT_EQ(m, 0.01 * Matrix::Identity(2, 2));
}

TEST(MassInv, WrongOutputLength) {
  EXPECT_THROW(nc::mass_inv_from_output(Vector::Zero(2), 2, 0.01), symoden::ContractError);
}

TEST(MassInv, MinimumEigenvalueAtLeastEpsilon) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector packed(6);
    for (auto& v : packed) v = n01(rng);
    const Matrix m = nc::mass_inv_from_output(packed, 3, 0.01);
    EXPECT_TRUE(m.isApprox(m.transpose()));
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    EXPECT_GE(es.eigenvalues().minCoeff(), 0.01 * (1.0 - 1e-9));
  }
}

TEST(MassInv, QuadraticFormBoundOverRandomNets) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double eps = 0.01;
  nc::MassInvHead head{nc::init_params({{4, 12, 3}}, 0), 2, eps};
  for (int trial = 0; trial < 1000; ++trial) {
    if (trial % 50 == 0) head.net = nc::init_params({{4, 12, 3}}, static_cast<std::uint64_t>(trial));
    Vector c(4), x(2);
    for (auto& v : c) v = 2.0 * n01(rng);
    for (auto& v : x) v = n01(rng);
    const Matrix m = nc::mass_inv(head, c);
    ASSERT_GE(x.dot(m * x), eps * x.squaredNorm() * (1.0 - 1e-12));
  }
}

TEST(MassInv, GenericTemplateMatchesPlain) {
  const Vector packed = vec({0.5, -1.2, 2.0});
  const auto rows = nc::mass_inv_from_tri<double>([&](int k) { return packed(k); }, 2, 0.02);
  const Matrix plain = nc::mass_inv_from_output(packed, 2, 0.02);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(rows[i][j], plain(i, j));
  }
}

TEST(Potential, ZeroNet) { EXPECT_EQ(nc::potential_eval(nc::zero_params({{2, 5, 1}}), vec({1.0, 2.0})), 0.0); }

TEST(Potential, SingleUnitGradient) {
  auto f = [](dk::Tape& t, const std::vector<dk::Var>& x) {
    return dk::sum(dk::tanh(1.7 * x[0] + t.constant(0.3)) * -0.8);
  };
  Eigen::VectorXd q(1);
  q << 0.4;
  EXPECT_LT(dk::grad_check_scalar(f, q, 1e-6), 1e-6);
}

TEST(Potential, ConstantShiftKeepsGradient) {
  auto p = nc::init_params({{2, 8, 1}}, 5);
  auto shifted = p;
  shifted.layers.back().bias(0, 0) += 3.5;
  auto grad = [](const nc::MlpParams& params, const Vector& c) {
    dk::Tape t;
    const auto b = nc::bind(t, params);
    const dk::Jet out = nc::forward(b, dk::seed_columns(t.constant(Matrix(c.transpose()))));
    return Eigen::Vector2d(out.tangent[0].scalar(), out.tangent[1].scalar());
  };
  const Vector c = vec({0.2, -0.7});
  EXPECT_EQ(grad(p, c), grad(shifted, c));
  EXPECT_NEAR(nc::potential_eval(shifted, c) - nc::potential_eval(p, c), 3.5, 1e-12);
}

TEST(InputMatrix, ZeroNet) {
  EXPECT_TRUE(nc::input_matrix_eval(nc::zero_params({{2, 4, 2}}), vec({1.0, 0.0}), 2, 1).isZero());
}

TEST(InputMatrix, RowMajorReshape) {
  nc::MlpParams p = nc::zero_params({{1, 2, 2}});
  p.layers.back().bias << 0.25, -4.0;
  const Matrix g = nc::input_matrix_eval(p, vec({0.0}), 2, 1);
  EXPECT_EQ(g(0, 0), 0.25);
  EXPECT_EQ(g(1, 0), -4.0);
  nc::MlpParams one = nc::zero_params({{1, 2, 1}});
  one.layers.back().bias << 1.0;
  EXPECT_EQ(nc::input_matrix_eval(one, vec({0.3}), 1, 1)(0, 0), 1.0);
  EXPECT_THROW(nc::input_matrix_eval(p, vec({0.0}), 1, 1), symoden::ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  nc::MassInvHead head{nc::init_params({{3, 7, 6}}, 31), 3, 0.02};
  head.net.layers[0].bias = Matrix::Random(1, 7);
  const std::string text = nc::to_json(head).dump();
  const auto back = nc::mass_head_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.dim, 3);
  EXPECT_EQ(back.epsilon, 0.02);
  EXPECT_EQ(back.net.seed, 31u);
  ASSERT_EQ(back.net.layers.size(), head.net.layers.size());
  for (std::size_t i = 0; i < back.net.layers.size(); ++i) {
    EXPECT_EQ(back.net.layers[i].weight, head.net.layers[i].weight);
    EXPECT_EQ(back.net.layers[i].bias, head.net.layers[i].bias);
  }
}

TEST(Checkpoint, MalformedIsContractError) {
  EXPECT_THROW(nc::mlp_from_json(nlohmann::json::parse(R"({"spec":[1,2,1]})")), symoden::ContractError);
  auto j = nc::to_json(nc::init_params({{1, 2, 1}}, 0));
  j["spec"] = std::vector<int>{1, 3, 1};
  EXPECT_THROW(nc::mlp_from_json(j), symoden::ContractError);
}
