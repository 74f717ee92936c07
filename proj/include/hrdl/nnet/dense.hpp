#pragma once

#include <numeric>
#include <vector>

#include "hrdl/nnet/layers.hpp"

namespace hrdl::nn {

/// Fully connected network: hidden layers share one activation, the output
/// layer has its own (identity by default).
class DenseNet {
 public:
  struct Cache {
    std::vector<LayerCache> layers;
    std::uint64_t version = 0;
  };

  /// Reusable buffers for single-sample inference.
  struct Scratch {
    std::vector<Vector> act;
  };

  DenseNet() = default;

  DenseNet(Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out, Rng& rng,
           Activation hidden_act = Activation::relu, Activation out_act = Activation::identity) {
    Eigen::Index prev = in;
    for (Eigen::Index h : hidden) {
      layers_.emplace_back(prev, h, hidden_act, rng);
      prev = h;
    }
    layers_.emplace_back(prev, out, out_act, rng);
  }

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check_chain(); }

  Eigen::Index input_dim() const { return layers_.front().in_dim(); }
  Eigen::Index output_dim() const { return layers_.back().out_dim(); }
  std::size_t layer_count() const { return layers_.size(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Matrix forward(const Matrix& X, Cache* cache = nullptr) const {
    if (X.rows() != input_dim())
      throw Error("dense_forward: input has " + std::to_string(X.rows()) + " rows, expected " +
                  std::to_string(input_dim()));
    if (cache) {
      cache->layers.resize(layers_.size());
      cache->version = version();
    }
    Matrix a = layers_[0].forward(X, cache ? &cache->layers[0] : nullptr);
    for (std::size_t l = 1; l < layers_.size(); ++l)
      a = layers_[l].forward(a, cache ? &cache->layers[l] : nullptr);
    return a;
  }

  /// Accumulates parameter gradients for dL/dY and returns dL/dX.
  Matrix backward(const Cache& cache, const Matrix& dY) {
    if (cache.layers.size() != layers_.size() || cache.version != version())
      throw Error("dense_backward: stale cache");
    if (dY.rows() != output_dim() || dY.cols() != cache.layers.back().out.cols())
      throw Error("dense_backward: gradient shape mismatch");
    Matrix g = dY;
    for (std::size_t l = layers_.size(); l-- > 0;) g = layers_[l].backward(cache.layers[l], g);
    return g;
  }

  void infer(const Vector& x, Vector& y, Scratch& s) const {
    s.act.resize(layers_.size());
    const Vector* in = &x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Vector& out = l + 1 == layers_.size() ? y : s.act[l];
      layers_[l].infer(*in, out);
      in = &out;
    }
  }

  Vector infer(const Vector& x) const {
    Scratch s;
    Vector y;
    infer(x, y, s);
    return y;
  }

  std::vector<ParamTensor*> params() {
    std::vector<ParamTensor*> p;
    for (auto& l : layers_) {
      p.push_back(&l.W);
      p.push_back(&l.b);
    }
    return p;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }

  std::uint64_t version() const {
    std::uint64_t v = 0;
    for (const auto& l : layers_) v += l.version();
    return v;
  }

  /// Signs of every ReLU pre-activation for X; used to detect kinks.
  std::vector<bool> kink_signature(const Matrix& X) const {
    Cache c;
    forward(X, &c);
    std::vector<bool> sig;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l].act == Activation::relu)
        for (Eigen::Index i = 0; i < c.layers[l].pre.size(); ++i)
          sig.push_back(c.layers[l].pre.data()[i] > 0.0);
    return sig;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["type"] = "dense";
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers_) j["layers"].push_back(layer_to_json(l));
    return j;
  }

  static DenseNet from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "dense") throw Error("not a dense network");
    std::vector<DenseLayer> layers;
    for (const auto& lj : j.at("layers")) layers.push_back(layer_from_json(lj));
    return DenseNet(std::move(layers));
  }

 private:
  void check_chain() const {
    if (layers_.empty()) throw Error("dense network needs at least one layer");
    for (std::size_t l = 1; l < layers_.size(); ++l)
      if (layers_[l].in_dim() != layers_[l - 1].out_dim())
        throw Error("dense network layer dimensions do not chain");
  }

  std::vector<DenseLayer> layers_;
};

}  // namespace hrdl::nn
