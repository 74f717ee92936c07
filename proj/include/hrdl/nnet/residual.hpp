#pragma once

#include <vector>

#include "hrdl/nnet/layers.hpp"

namespace hrdl::nn {

/// Dense network with identity skips every two layers:
///
///   a0 = relu(W_s x + b_s)
///   a_{k+1} = a_k + W2 relu(W1 a_k + b1) + b2      (one block)
///   y = W_h a_K + b_h
class ResidualNet {
 public:
  struct Cache {
    LayerCache stem;
    std::vector<std::pair<LayerCache, LayerCache>> blocks;
    LayerCache head;
    std::uint64_t version = 0;
  };

  struct Scratch {
    Vector a, u, r;
  };

  ResidualNet() = default;

  ResidualNet(Eigen::Index in, Eigen::Index width, std::size_t blocks, Eigen::Index out, Rng& rng,
              bool zero_init_residual = false)
      : stem_(in, width, Activation::relu, rng) {
    for (std::size_t k = 0; k < blocks; ++k) {
      DenseLayer l1(width, width, Activation::relu, rng);
      DenseLayer l2(width, width, Activation::identity, rng);
      if (zero_init_residual) l2.W.value.setZero();
      blocks_.emplace_back(std::move(l1), std::move(l2));
    }
    head_ = DenseLayer(width, out, Activation::identity, rng);
  }

  Eigen::Index input_dim() const { return stem_.in_dim(); }
  Eigen::Index output_dim() const { return head_.out_dim(); }
  Eigen::Index width() const { return stem_.out_dim(); }
  std::size_t block_count() const { return blocks_.size(); }

  DenseLayer& stem() { return stem_; }
  DenseLayer& head() { return head_; }
  std::vector<std::pair<DenseLayer, DenseLayer>>& blocks() { return blocks_; }

  /// Output of the stem followed directly by the head (all blocks skipped).
  Matrix forward_without_blocks(const Matrix& X) const {
    return head_.forward(stem_.forward(X, nullptr), nullptr);
  }

  Matrix forward(const Matrix& X, Cache* cache = nullptr) const {
    if (X.rows() != input_dim()) throw Error("residual_forward: input dimension mismatch");
    if (cache) {
      cache->blocks.resize(blocks_.size());
      cache->version = version();
    }
    Matrix a = stem_.forward(X, cache ? &cache->stem : nullptr);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Matrix u = blocks_[k].first.forward(a, cache ? &cache->blocks[k].first : nullptr);
      a += blocks_[k].second.forward(u, cache ? &cache->blocks[k].second : nullptr);
    }
    return head_.forward(a, cache ? &cache->head : nullptr);
  }

  Matrix backward(const Cache& cache, const Matrix& dY) {
    if (cache.blocks.size() != blocks_.size() || cache.version != version())
      throw Error("residual_backward: stale cache");
    Matrix da = head_.backward(cache.head, dY);
    for (std::size_t k = blocks_.size(); k-- > 0;) {
      const Matrix du = blocks_[k].second.backward(cache.blocks[k].second, da);
      da += blocks_[k].first.backward(cache.blocks[k].first, du);
    }
    return stem_.backward(cache.stem, da);
  }

  void infer(const Vector& x, Vector& y, Scratch& s) const {
    stem_.infer(x, s.a);
    for (const auto& [l1, l2] : blocks_) {
      l1.infer(s.a, s.u);
      l2.infer(s.u, s.r);
      s.a += s.r;
    }
    head_.infer(s.a, y);
  }

  Vector infer(const Vector& x) const {
    Scratch s;
    Vector y;
    infer(x, y, s);
    return y;
  }

  std::vector<ParamTensor*> params() {
    std::vector<ParamTensor*> p{&stem_.W, &stem_.b};
    for (auto& [l1, l2] : blocks_)
      for (auto* l : {&l1, &l2}) {
        p.push_back(&l->W);
        p.push_back(&l->b);
      }
    p.push_back(&head_.W);
    p.push_back(&head_.b);
    return p;
  }

  std::size_t param_count() const {
    std::size_t n = static_cast<std::size_t>(stem_.W.size() + stem_.b.size() + head_.W.size() +
                                             head_.b.size());
    for (const auto& [l1, l2] : blocks_)
      n += static_cast<std::size_t>(l1.W.size() + l1.b.size() + l2.W.size() + l2.b.size());
    return n;
  }

  std::uint64_t version() const {
    std::uint64_t v = stem_.version() + head_.version();
    for (const auto& [l1, l2] : blocks_) v += l1.version() + l2.version();
    return v;
  }

  std::vector<bool> kink_signature(const Matrix& X) const {
    Cache c;
    forward(X, &c);
    std::vector<bool> sig;
    auto push = [&](const Matrix& pre) {
      for (Eigen::Index i = 0; i < pre.size(); ++i) sig.push_back(pre.data()[i] > 0.0);
    };
    push(c.stem.pre);
    for (const auto& b : c.blocks) push(b.first.pre);
    return sig;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["type"] = "residual";
    j["stem"] = layer_to_json(stem_);
    j["blocks"] = nlohmann::json::array();
    for (const auto& [l1, l2] : blocks_)
      j["blocks"].push_back({{"first", layer_to_json(l1)}, {"second", layer_to_json(l2)}});
    j["head"] = layer_to_json(head_);
    return j;
  }

  static ResidualNet from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "residual") throw Error("not a residual network");
    ResidualNet n;
    n.stem_ = layer_from_json(j.at("stem"));
    for (const auto& bj : j.at("blocks"))
      n.blocks_.emplace_back(layer_from_json(bj.at("first")), layer_from_json(bj.at("second")));
    n.head_ = layer_from_json(j.at("head"));
    const auto w = n.stem_.out_dim();
    for (const auto& [l1, l2] : n.blocks_)
      if (l1.in_dim() != w || l1.out_dim() != w || l2.in_dim() != w || l2.out_dim() != w)
        throw Error("residual block width mismatch");
    if (n.head_.in_dim() != w) throw Error("residual head width mismatch");
    return n;
  }

 private:
  DenseLayer stem_;
  std::vector<std::pair<DenseLayer, DenseLayer>> blocks_;
  DenseLayer head_;
};

}  // namespace hrdl::nn
