#pragma once

// Tanh MLPs and the structured heads built on them.

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "symoden/diffkit.hpp"
#include "symoden/errors.hpp"

namespace symoden::netcore {

using diffkit::Jet;
using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;

struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output

  void validate() const {
    if (widths.size() < 3) throw ContractError("MlpSpec needs at least one hidden layer");
    for (int w : widths) {
      if (w < 1) throw ContractError("MlpSpec widths must be positive");
    }
  }
  int input() const { return widths.front(); }
  int output() const { return widths.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      n += static_cast<std::size_t>(widths[i]) * widths[i + 1] + widths[i + 1];
    }
    return n;
  }

  std::string describe() const {
    std::string s;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(widths[i]);
    }
    return s;
  }

  bool operator==(const MlpSpec&) const = default;
};

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out, applied as x * W
  Matrix bias;    // 1 x fan_out
};

struct MlpParams {
  MlpSpec spec;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> layers;

  std::size_t parameter_count() const { return spec.parameter_count(); }

  /// Flat list of every trainable matrix, weights then bias per layer.
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  void validate() const {
    spec.validate();
    if (layers.size() + 1 != spec.widths.size()) throw ContractError("layer count does not match spec");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.weight.rows() != spec.widths[i] || l.weight.cols() != spec.widths[i + 1] ||
          l.bias.rows() != 1 || l.bias.cols() != spec.widths[i + 1]) {
        throw ContractError("layer " + std::to_string(i) + " shape does not match spec " +
                            spec.describe());
      }
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        throw ContractError("layer " + std::to_string(i) + " has non-finite entries");
      }
    }
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  MlpParams p{spec, seed, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
    const int fan_in = spec.widths[i];
    const int fan_out = spec.widths[i + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(fan_in, fan_out), Matrix::Zero(1, fan_out)};
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MlpParams zero_params(const MlpSpec& spec) {
  MlpParams p = init_params(spec, 0);
  for (auto& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return p;
}

/// Batched plain evaluation: one sample per row.
inline Matrix mlp_eval_batch(const MlpParams& params, const Matrix& input) {
  if (input.cols() != params.spec.input()) {
    throw ContractError("mlp input has " + std::to_string(input.cols()) + " columns, spec " +
                        params.spec.describe());
  }
  Matrix h = input;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    h = (h * l.weight).rowwise() + l.bias.row(0);
    if (i + 1 < params.layers.size()) h = diffkit::detail::fast_tanh(h);
  }
  return h;
}

inline Vector mlp_eval(const MlpParams& params, const Vector& input) {
  return mlp_eval_batch(params, input.transpose()).row(0).transpose();
}

/// Parameters placed on a tape as leaves.
struct BoundMlp {
  const MlpParams* params = nullptr;
  std::vector<Var> weights;
  std::vector<Var> biases;

  /// Leaves in the same order as MlpParams::tensors().
  std::vector<Var> leaves() const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

inline BoundMlp bind(Tape& tape, const MlpParams& params) {
  BoundMlp b;
  b.params = &params;
  for (const auto& l : params.layers) {
    b.weights.push_back(tape.variable(l.weight));
    b.biases.push_back(tape.variable(l.bias));
  }
  return b;
}

/// Forward pass for Var or Jet inputs (B x input).
template <class T>
T forward(const BoundMlp& net, const T& input) {
  const auto& spec = net.params->spec;
  const Var& v = [&]() -> const Var& {
    if constexpr (std::is_same_v<T, Jet>) {
      return input.value;
    } else {
      return input;
    }
  }();
  if (v.cols() != spec.input()) {
    throw ContractError("mlp input has " + std::to_string(v.cols()) + " columns, spec " +
                        spec.describe());
  }
  T h = input;
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    using diffkit::add_row;
    using diffkit::matmul;
    h = add_row(matmul(h, net.weights[i]), net.biases[i]);
    if (i + 1 < net.weights.size()) {
      using diffkit::tanh;
      h = tanh(h);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Heads

inline int tri_count(int n) { return n * (n + 1) / 2; }

/// Row-major lower-triangle slot of L(i, j), j <= i.
inline int tri_index(int i, int j) { return i * (i + 1) / 2 + j; }

/// M^-1 = L L^T + eps I from the packed lower triangle, for any element type
/// supporting +, * and + double. `entry(k)` yields packed output k.
template <class T, class Entry>
std::vector<std::vector<T>> mass_inv_from_tri(Entry&& entry, int n, double epsilon) {
  std::vector<T> packed;
  for (int k = 0; k < tri_count(n); ++k) packed.push_back(entry(k));
  std::vector<std::vector<T>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      T acc = packed[tri_index(i, 0)] * packed[tri_index(j, 0)];
      for (int k = 1; k <= j; ++k) acc = acc + packed[tri_index(i, k)] * packed[tri_index(j, k)];
      if (i == j) acc = acc + epsilon;
      out[i].push_back(acc);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) out[i].push_back(out[j][i]);
  }
  return out;
}

inline Matrix mass_inv_from_output(const Vector& packed, int n, double epsilon) {
  if (packed.size() != tri_count(n)) {
    throw ContractError("mass head needs " + std::to_string(tri_count(n)) + " outputs, got " +
                        std::to_string(packed.size()));
  }
  Matrix L = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) L(i, j) = packed(tri_index(i, j));
  }
  return L * L.transpose() + epsilon * Matrix::Identity(n, n);
}

struct MassInvHead {
  MlpParams net;
  int dim = 1;
  double epsilon = 0.01;
};

inline Matrix mass_inv(const MassInvHead& head, const Vector& coords) {
  if (head.net.spec.output() != tri_count(head.dim)) {
    throw ContractError("mass head net must emit n(n+1)/2 values");
  }
  return mass_inv_from_output(mlp_eval(head.net, coords), head.dim, head.epsilon);
}

inline double potential_eval(const MlpParams& params, const Vector& coords) {
  if (params.spec.output() != 1) throw ContractError("potential net must be scalar-valued");
  return mlp_eval(params, coords)(0);
}

inline Matrix input_matrix_eval(const MlpParams& params, const Vector& coords, int n, int m) {
  if (params.spec.output() != n * m) {
    throw ContractError("input-matrix net emits " + std::to_string(params.spec.output()) +
                        " values, need " + std::to_string(n * m));
  }
  const Vector out = mlp_eval(params, coords);
  Matrix g(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) g(i, j) = out(i * m + j);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ContractError("expected a nested array");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != static_cast<std::size_t>(m.cols())) throw ContractError("ragged matrix");
    for (std::size_t c = 0; c < j[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

inline nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index c = 0; c < l.bias.cols(); ++c) b.push_back(l.bias(0, c));
    layers.push_back({{"w", matrix_to_json(l.weight)}, {"b", b}});
  }
  return {{"spec", p.spec.widths}, {"seed", p.seed}, {"layers", layers}};
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    MlpParams p;
    p.spec.widths = j.at("spec").get<std::vector<int>>();
    p.seed = j.value("seed", std::uint64_t{0});
    for (const auto& lj : j.at("layers")) {
      DenseLayer l;
      l.weight = matrix_from_json(lj.at("w"));
      const auto b = lj.at("b").get<std::vector<double>>();
      l.bias = Eigen::Map<const Matrix>(b.data(), 1, static_cast<Eigen::Index>(b.size()));
      p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed network checkpoint: ") + e.what());
  }
}

inline nlohmann::json to_json(const MassInvHead& h) {
  nlohmann::json j = to_json(h.net);
  j["head"] = {{"kind", "mass_inv"}, {"dim", h.dim}};
  j["epsilon"] = h.epsilon;
  return j;
}

inline MassInvHead mass_head_from_json(const nlohmann::json& j) {
  MassInvHead h;
  h.net = mlp_from_json(j);
  h.dim = j.at("head").at("dim").get<int>();
  h.epsilon = j.at("epsilon").get<double>();
  return h;
}

}  // namespace symoden::netcore
