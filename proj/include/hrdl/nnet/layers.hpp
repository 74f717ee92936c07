#pragma once

// Parameter tensors, activations and the affine layer that every network in
// this library is built from. Samples are stored column-wise.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hrdl/core.hpp"

namespace hrdl::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Values, accumulated gradient and Adam moments of one parameter block.
/// `version` increments whenever the values change through an optimizer.
struct ParamTensor {
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
  std::uint64_t version = 0;

  ParamTensor() = default;
  ParamTensor(Eigen::Index rows, Eigen::Index cols)
      : value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        m(Matrix::Zero(rows, cols)),
        v(Matrix::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

enum class Activation { identity, relu, sigmoid, tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw Error("unknown activation: " + s);
}

template <class Derived>
inline void activate_inplace(Eigen::MatrixBase<Derived>& x, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: x = x.cwiseMax(0.0); break;
    case Activation::sigmoid: x = (1.0 + (-x.array()).exp()).inverse().matrix(); break;
    case Activation::tanh: x = x.array().tanh().matrix(); break;
  }
}

/// dL/dpre given dL/dout, the pre-activation and the activation output.
inline Matrix activation_backward(const Matrix& dout, const Matrix& pre, const Matrix& out,
                                  Activation a) {
  switch (a) {
    case Activation::identity: return dout;
    case Activation::relu: return (pre.array() > 0.0).select(dout, 0.0);
    case Activation::sigmoid: return (dout.array() * out.array() * (1.0 - out.array())).matrix();
    case Activation::tanh: return (dout.array() * (1.0 - out.array().square())).matrix();
  }
  return dout;
}

/// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Matrix& W, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index c = 0; c < W.cols(); ++c)
    for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = u(rng);
}

struct LayerCache {
  Matrix input;
  Matrix pre;
  Matrix out;
};

/// y = act(W x + b)
struct DenseLayer {
  ParamTensor W;
  ParamTensor b;
  Activation act = Activation::identity;

  DenseLayer() = default;
  DenseLayer(Eigen::Index in, Eigen::Index out, Activation a, Rng& rng)
      : W(out, in), b(out, 1), act(a) {
    glorot_uniform(W.value, rng);
  }

  Eigen::Index in_dim() const { return W.value.cols(); }
  Eigen::Index out_dim() const { return W.value.rows(); }

  Matrix forward(const Matrix& X, LayerCache* cache) const {
    Matrix pre = W.value * X;
    pre.colwise() += b.value.col(0);
    Matrix out = pre;
    activate_inplace(out, act);
    if (cache) {
      cache->input = X;
      cache->pre = std::move(pre);
      cache->out = out;
    }
    return out;
  }

  /// Accumulates parameter gradients and returns dL/dX.
  Matrix backward(const LayerCache& c, const Matrix& dout) {
    const Matrix dpre = activation_backward(dout, c.pre, c.out, act);
    W.grad.noalias() += dpre * c.input.transpose();
    b.grad.noalias() += dpre.rowwise().sum();
    return W.value.transpose() * dpre;
  }

  /// Single-sample evaluation into a caller-owned buffer.
  void infer(const Vector& x, Vector& y) const {
    y.noalias() = W.value * x;
    y += b.value.col(0);
    activate_inplace(y, act);
  }

  std::uint64_t version() const { return W.version + b.version; }
};

// ---------------------------------------------------------------------------
// JSON helpers. Values are written as flat column-major arrays; nlohmann
// prints the shortest representation that round-trips exactly.

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("matrix size mismatch");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

inline nlohmann::json layer_to_json(const DenseLayer& l) {
  return {{"activation", to_string(l.act)},
          {"weights", matrix_to_json(l.W.value)},
          {"bias", matrix_to_json(l.b.value)}};
}

inline DenseLayer layer_from_json(const nlohmann::json& j) {
  DenseLayer l;
  l.act = activation_from_string(j.at("activation").get<std::string>());
  const Matrix W = matrix_from_json(j.at("weights"));
  const Matrix b = matrix_from_json(j.at("bias"));
  if (b.rows() != W.rows() || b.cols() != 1) throw Error("layer bias shape mismatch");
  l.W = ParamTensor(W.rows(), W.cols());
  l.W.value = W;
  l.b = ParamTensor(b.rows(), 1);
  l.b.value = b;
  return l;
}

}  // namespace hrdl::nn
