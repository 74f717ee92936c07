#pragma once

// Finite-difference verification of analytic gradients. Works with any
// network exposing forward(x, cache*), backward(cache, dY), params() and
// kink_signature(x); the loss is MSE against `target`.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "hrdl/nnet/optim.hpp"

namespace hrdl::nn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // Entries whose magnitude is too small for a meaningful relative error are
  // compared absolutely, against the larger of abs_floor * tolerance and the
  // round-off bound of the difference quotient,
  //   roundoff * eps * (|L+| + |L-|) / (2 * step).
  double abs_floor = 1e-9;
  double roundoff = 8.0;
  // Check at most this many entries per tensor (0 = all), sampled with `seed`.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::size_t below_noise = 0;   // judged absolutely
  std::size_t abs_failures = 0;  // of those, beyond the absolute bound
  bool passed = true;
};

template <class Net, class Input>
double loss_only(const Net& net, const Input& x, const Matrix& target) {
  return mse_loss(net.forward(x, nullptr), target).loss;
}

template <class Net, class Input>
GradCheckReport grad_check(Net& net, const Input& x, const Matrix& target,
                           const GradCheckOptions& opt = {}) {
  auto params = net.params();
  zero_grads(params);
  typename Net::Cache cache;
  const Matrix y = net.forward(x, &cache);
  const auto lr = mse_loss(y, target);
  net.backward(cache, lr.grad);

  const auto base_sig = net.kink_signature(x);
  std::mt19937_64 rng(opt.seed);
  GradCheckReport rep;

  for (ParamTensor* p : params) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p->size()));
    for (Eigen::Index i = 0; i < p->size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (opt.max_per_tensor > 0 && idx.size() > opt.max_per_tensor) {
      for (std::size_t i = 0; i < opt.max_per_tensor; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(opt.max_per_tensor);
    }
    for (Eigen::Index i : idx) {
      double& theta = p->value.data()[i];
      const double saved = theta;
      theta = saved + opt.step;
      const double lp = loss_only(net, x, target);
      const bool kink_p = net.kink_signature(x) != base_sig;
      theta = saved - opt.step;
      const double lm = loss_only(net, x, target);
      const bool kink_m = net.kink_signature(x) != base_sig;
      theta = saved;
      if (kink_p || kink_m) {
        ++rep.skipped_kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * opt.step);
      const double analytic = p->grad.data()[i];
      const double abs_err = std::abs(numeric - analytic);
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      const double noise = opt.roundoff * std::numeric_limits<double>::epsilon() *
                           (std::abs(lp) + std::abs(lm)) / (2.0 * opt.step);
      const double abs_bound = std::max(noise, opt.abs_floor * opt.tolerance);
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (mag * opt.tolerance <= abs_bound) {
        ++rep.below_noise;
        if (abs_err > abs_bound) ++rep.abs_failures;
      } else {
        rep.max_rel_error = std::max(rep.max_rel_error, abs_err / mag);
      }
      ++rep.checked;
    }
  }
  rep.passed = rep.max_rel_error < opt.tolerance && rep.abs_failures == 0;
  return rep;
}

}  // namespace hrdl::nn
