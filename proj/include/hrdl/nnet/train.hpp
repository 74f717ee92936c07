#pragma once

// Mini-batch Adam training with early stopping for feed-forward networks.

#include <limits>
#include <vector>

#include "hrdl/nnet/optim.hpp"

namespace hrdl::nn {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 256;
  AdamConfig adam{};
  std::size_t patience = 5;  // epochs without validation improvement
  // The untrained parameters compete in early stopping, so training that never
  // beats them on validation data leaves the network as it started.
  bool keep_initial = false;
};

struct TrainLog {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  bool kept_initial = false;
};

/// Deterministic Fisher-Yates shuffle driven by raw engine output.
inline void shuffle_indices(std::vector<Eigen::Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline Matrix gather_columns(const Matrix& M, const std::vector<Eigen::Index>& idx,
                             std::size_t begin, std::size_t end) {
  Matrix out(M.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t j = begin; j < end; ++j) out.col(static_cast<Eigen::Index>(j - begin)) = M.col(idx[j]);
  return out;
}

template <class Net>
double mean_loss(const Net& net, const Matrix& X, const Matrix& Y, Eigen::Index chunk = 4096) {
  double acc = 0.0;
  for (Eigen::Index c0 = 0; c0 < X.cols(); c0 += chunk) {
    const Eigen::Index n = std::min(chunk, X.cols() - c0);
    const Matrix P = net.forward(X.middleCols(c0, n), nullptr);
    acc += (P - Y.middleCols(c0, n)).squaredNorm();
  }
  return acc / static_cast<double>(Y.size());
}

template <class Net>
std::vector<Matrix> snapshot(Net& net) {
  std::vector<Matrix> s;
  for (auto* p : net.params()) s.push_back(p->value);
  return s;
}

template <class Net>
void restore(Net& net, const std::vector<Matrix>& s) {
  auto ps = net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i]->value = s[i];
    ++ps[i]->version;
  }
}

/// Trains `net` on columns of X -> Y. With validation data the parameters of
/// the best validation epoch are restored at the end.
template <class Net>
TrainLog fit(Net& net, const Matrix& X, const Matrix& Y, const Matrix* Xv, const Matrix* Yv,
             const TrainConfig& cfg, Rng& rng) {
  if (X.cols() == 0) throw Error("fit: empty training set");
  if (X.cols() != Y.cols()) throw Error("fit: input/target count mismatch");
  TrainLog log;
  if (cfg.epochs == 0) return log;
  const bool has_val = Xv && Yv && Xv->cols() > 0;
  auto params = net.params();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(X.cols()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);

  std::uint64_t t = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;
  std::size_t since_best = 0;
  typename Net::Cache cache;
  if (has_val && cfg.keep_initial) {
    best = mean_loss(net, *Xv, *Yv);
    best_params = snapshot(net);
    log.kept_initial = true;
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx, rng);
    double acc = 0.0;
    std::size_t nb = 0;
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(idx.size(), b0 + cfg.batch);
      const Matrix Xb = gather_columns(X, idx, b0, b1);
      const Matrix Yb = gather_columns(Y, idx, b0, b1);
      zero_grads(params);
      const Matrix P = net.forward(Xb, &cache);
      const auto lr = mse_loss(P, Yb);
      net.backward(cache, lr.grad);
      adam_step(params, cfg.adam, ++t);
      acc += lr.loss;
      ++nb;
    }
    log.train_loss.push_back(acc / static_cast<double>(nb));
    if (has_val) {
      const double v = mean_loss(net, *Xv, *Yv);
      log.val_loss.push_back(v);
      if (v < best) {
        best = v;
        best_params = snapshot(net);
        log.best_epoch = epoch;
        log.kept_initial = false;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    } else {
      log.best_epoch = epoch;
    }
  }
  if (has_val && !best_params.empty()) restore(net, best_params);
  return log;
}

}  // namespace hrdl::nn
