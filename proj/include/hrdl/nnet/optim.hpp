#pragma once

#include <cmath>
#include <span>

#include "hrdl/nnet/layers.hpp"

namespace hrdl::nn {

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

/// Mean squared error over every element; grad = 2 (pred - target) / n.
inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error("mse_loss: shape mismatch");
  if (pred.size() == 0) throw Error("mse_loss: empty input");
  const double n = static_cast<double>(pred.size());
  LossResult r;
  r.grad = pred - target;
  r.loss = r.grad.squaredNorm() / n;
  r.grad *= 2.0 / n;
  return r;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update for step t (t >= 1). Moments live in each tensor.
inline void adam_step(std::span<ParamTensor* const> params, const AdamConfig& cfg,
                      std::uint64_t t) {
  if (t == 0) throw Error("adam_step: step counter starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (ParamTensor* p : params) {
    p->m = cfg.beta1 * p->m + (1.0 - cfg.beta1) * p->grad;
    p->v = cfg.beta2 * p->v + (1.0 - cfg.beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -=
        cfg.lr * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + cfg.eps);
    ++p->version;
  }
}

inline void zero_grads(std::span<ParamTensor* const> params) {
  for (ParamTensor* p : params) p->zero_grad();
}

}  // namespace hrdl::nn
