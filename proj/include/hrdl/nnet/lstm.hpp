#pragma once

// Encoder -> LSTM cell -> decoder, one recurrent step per data frame.
// Gate rows are ordered [input, forget, candidate, output].
//
//   a = Wx e + Wh h_prev + b
//   i = sigmoid(a_i), f = sigmoid(a_f), g = tanh(a_g), o = sigmoid(a_o)
//   c = f * c_prev + i * g
//   h = o * tanh(c)

#include <vector>

#include "hrdl/nnet/dense.hpp"

namespace hrdl::nn {

struct LSTMStepResult {
  Vector y;
  Vector h;
  Vector c;
};

class LSTMStack {
 public:
  struct StepCache {
    DenseNet::Cache enc;
    Matrix e;  // encoder output
    Matrix h_prev, c_prev;
    Matrix i, f, g, o, c, tanh_c;
  };
  struct Cache {
    std::vector<StepCache> steps;
    DenseNet::Cache dec;
    Matrix h_last;
    std::uint64_t version = 0;
  };

  LSTMStack() = default;

  LSTMStack(Eigen::Index in, Eigen::Index enc_dim, Eigen::Index hidden,
            const std::vector<Eigen::Index>& dec_hidden, Eigen::Index out, Rng& rng)
      : encoder_(in, {}, enc_dim, rng, Activation::relu, Activation::relu),
        Wx_(4 * hidden, enc_dim),
        Wh_(4 * hidden, hidden),
        b_(4 * hidden, 1),
        decoder_(hidden, dec_hidden, out, rng) {
    glorot_uniform(Wx_.value, rng);
    glorot_uniform(Wh_.value, rng);
  }

  Eigen::Index input_dim() const { return encoder_.input_dim(); }
  Eigen::Index hidden_dim() const { return Wh_.value.cols(); }
  Eigen::Index output_dim() const { return decoder_.output_dim(); }

  DenseNet& encoder() { return encoder_; }
  DenseNet& decoder() { return decoder_; }
  ParamTensor& Wx() { return Wx_; }
  ParamTensor& Wh() { return Wh_; }
  ParamTensor& bias() { return b_; }

  /// One recurrent step on a single sample.
  LSTMStepResult step(const Vector& x, const Vector& h_prev, const Vector& c_prev) const {
    if (x.size() != input_dim() || h_prev.size() != hidden_dim() || c_prev.size() != hidden_dim())
      throw Error("lstm_step: shape mismatch");
    const Matrix e = encoder_.forward(x, nullptr);
    StepCache sc;
    cell_forward(e, h_prev, c_prev, sc);
    LSTMStepResult r;
    r.h = sc.o.cwiseProduct(sc.tanh_c);
    r.c = sc.c;
    r.y = decoder_.forward(r.h, nullptr);
    return r;
  }

  /// Runs a batch of sequences from zero state; seq[t] is (input_dim x B).
  /// Returns the decoder output of the final step.
  Matrix forward(const std::vector<Matrix>& seq, Cache* cache = nullptr) const {
    if (seq.empty()) throw Error("lstm_forward: empty sequence");
    const Eigen::Index B = seq.front().cols();
    Matrix h = Matrix::Zero(hidden_dim(), B);
    Matrix c = Matrix::Zero(hidden_dim(), B);
    if (cache) {
      cache->steps.resize(seq.size());
      cache->version = version();
    }
    StepCache local;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t].rows() != input_dim() || seq[t].cols() != B)
        throw Error("lstm_forward: input shape mismatch");
      StepCache& sc = cache ? cache->steps[t] : local;
      const Matrix e = encoder_.forward(seq[t], cache ? &sc.enc : nullptr);
      cell_forward(e, h, c, sc);
      if (cache) sc.e = e;
      h = sc.o.cwiseProduct(sc.tanh_c);
      c = sc.c;
    }
    if (cache) cache->h_last = h;
    return decoder_.forward(h, cache ? &cache->dec : nullptr);
  }

  /// Backpropagation through time for a loss on the final output.
  void backward(const Cache& cache, const Matrix& dY) {
    if (cache.version != version() || cache.steps.empty()) throw Error("lstm_backward: stale cache");
    const Eigen::Index H = hidden_dim();
    Matrix dh = decoder_.backward(cache.dec, dY);
    Matrix dc = Matrix::Zero(H, dh.cols());
    Matrix da(4 * H, dh.cols());
    for (std::size_t t = cache.steps.size(); t-- > 0;) {
      const StepCache& s = cache.steps[t];
      dc.array() += dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square());
      const auto one = 1.0;
      da.middleRows(0, H) = (dc.array() * s.g.array() * s.i.array() * (one - s.i.array())).matrix();
      da.middleRows(H, H) =
          (dc.array() * s.c_prev.array() * s.f.array() * (one - s.f.array())).matrix();
      da.middleRows(2 * H, H) = (dc.array() * s.i.array() * (one - s.g.array().square())).matrix();
      da.middleRows(3 * H, H) =
          (dh.array() * s.tanh_c.array() * s.o.array() * (one - s.o.array())).matrix();
      Wx_.grad.noalias() += da * s.e.transpose();
      Wh_.grad.noalias() += da * s.h_prev.transpose();
      b_.grad.noalias() += da.rowwise().sum();
      const Matrix de = Wx_.value.transpose() * da;
      encoder_.backward(s.enc, de);
      dh = Wh_.value.transpose() * da;
      dc = (dc.array() * s.f.array()).matrix();
    }
  }

  std::vector<ParamTensor*> params() {
    auto p = encoder_.params();
    p.push_back(&Wx_);
    p.push_back(&Wh_);
    p.push_back(&b_);
    for (auto* q : decoder_.params()) p.push_back(q);
    return p;
  }

  std::size_t param_count() const {
    return encoder_.param_count() + decoder_.param_count() +
           static_cast<std::size_t>(Wx_.size() + Wh_.size() + b_.size());
  }

  std::uint64_t version() const {
    return encoder_.version() + decoder_.version() + Wx_.version + Wh_.version + b_.version;
  }

  std::vector<bool> kink_signature(const std::vector<Matrix>& seq) const {
    std::vector<bool> sig;
    for (const auto& x : seq) {
      auto s = encoder_.kink_signature(x);
      sig.insert(sig.end(), s.begin(), s.end());
    }
    Cache c;
    forward(seq, &c);
    auto s = decoder_.kink_signature(c.h_last);
    sig.insert(sig.end(), s.begin(), s.end());
    return sig;
  }

  nlohmann::json to_json() const {
    return {{"type", "lstm"},
            {"encoder", encoder_.to_json()},
            {"Wx", matrix_to_json(Wx_.value)},
            {"Wh", matrix_to_json(Wh_.value)},
            {"b", matrix_to_json(b_.value)},
            {"decoder", decoder_.to_json()}};
  }

  static LSTMStack from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "lstm") throw Error("not an LSTM stack");
    LSTMStack s;
    s.encoder_ = DenseNet::from_json(j.at("encoder"));
    s.decoder_ = DenseNet::from_json(j.at("decoder"));
    auto load = [](ParamTensor& p, const nlohmann::json& mj) {
      const Matrix m = matrix_from_json(mj);
      p = ParamTensor(m.rows(), m.cols());
      p.value = m;
    };
    load(s.Wx_, j.at("Wx"));
    load(s.Wh_, j.at("Wh"));
    load(s.b_, j.at("b"));
    const Eigen::Index H = s.Wh_.value.cols();
    if (s.Wh_.value.rows() != 4 * H || s.Wx_.value.rows() != 4 * H || s.b_.value.rows() != 4 * H ||
        s.Wx_.value.cols() != s.encoder_.output_dim() || s.decoder_.input_dim() != H)
      throw Error("LSTM gate shapes inconsistent with hidden dimension");
    return s;
  }

 private:
  void cell_forward(const Matrix& e, const Matrix& h_prev, const Matrix& c_prev,
                    StepCache& sc) const {
    const Eigen::Index H = hidden_dim();
    Matrix a = Wx_.value * e;
    a.noalias() += Wh_.value * h_prev;
    a.colwise() += b_.value.col(0);
    auto sigm = [](const Matrix& z) -> Matrix {
      return (1.0 + (-z.array()).exp()).inverse().matrix();
    };
    sc.i = sigm(a.middleRows(0, H));
    sc.f = sigm(a.middleRows(H, H));
    sc.g = a.middleRows(2 * H, H).array().tanh().matrix();
    sc.o = sigm(a.middleRows(3 * H, H));
    sc.c = sc.f.cwiseProduct(c_prev) + sc.i.cwiseProduct(sc.g);
    sc.tanh_c = sc.c.array().tanh().matrix();
    sc.h_prev = h_prev;
    sc.c_prev = c_prev;
  }

  DenseNet encoder_;
  ParamTensor Wx_, Wh_, b_;
  DenseNet decoder_;
};

}  // namespace hrdl::nn
