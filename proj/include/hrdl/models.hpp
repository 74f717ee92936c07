#pragma once

// Current estimators built on the network substrate: multi-frame MLP,
// residual network (with or without Motion Discriminator input), the LSTM
// baseline, and the hierarchical residual stack whose members are trained on
// the residual error of their predecessors and summed at inference.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <functional>
#include <vector>

#include "hrdl/core.hpp"
#include "hrdl/features.hpp"
#include "hrdl/nnet/dense.hpp"
#include "hrdl/nnet/lstm.hpp"
#include "hrdl/nnet/residual.hpp"
#include "hrdl/nnet/train.hpp"
#include "hrdl/robosim.hpp"

namespace hrdl {

using nn::Matrix;
using nn::Vector;

inline constexpr int kFormatVersion = 1;

struct TrainSettings {
  nn::TrainConfig fit{};
  double val_fraction = 0.1;  // whole trajectories held out for early stopping
  std::uint64_t seed = 1;
  bool zero_output = false;  // start from a network that outputs the target mean
};

struct HierarchySpec {
  std::vector<Eigen::Index> hidden{256, 256, 256};
  IndexRange md_subset{};
  std::size_t frames = 5;
};

// ---------------------------------------------------------------------------
// Standardizer / threshold JSON

inline nlohmann::json to_json(const Standardizer& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("scale").get<std::vector<double>>();
  if (m.size() != s.size()) throw Error("normalization size mismatch");
  Standardizer st;
  st.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
  st.scale = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
  return st;
}

inline nlohmann::json to_json(const ThresholdSet& ts) {
  nlohmann::json j;
  j["thresholds"] = nlohmann::json::array();
  for (const auto& t : ts.thresholds) j["thresholds"].push_back(std::vector<double>(t.begin(), t.end()));
  j["groups"] = nlohmann::json::array();
  for (const auto& g : ts.groups) j["groups"].push_back({g.begin, g.end});
  return j;
}

inline ThresholdSet thresholds_from_json(const nlohmann::json& j) {
  ThresholdSet ts;
  for (const auto& t : j.at("thresholds")) {
    Vec6 v;
    if (t.is_number()) {
      v.fill(t.get<double>());
    } else {
      const auto a = t.get<std::vector<double>>();
      if (a.size() != kJoints) throw Error("threshold rows need 6 entries");
      std::copy(a.begin(), a.end(), v.begin());
    }
    ts.thresholds.push_back(v);
  }
  if (j.contains("groups"))
    for (const auto& g : j.at("groups")) {
      const auto a = g.get<std::vector<std::size_t>>();
      if (a.size() != 2) throw Error("threshold group must be [begin, end)");
      ts.groups.push_back({a[0], a[1]});
    }
  ts.validate();
  return ts;
}

// ---------------------------------------------------------------------------

/// Feed-forward estimator: assembles features, standardizes, runs the
/// network and maps the output back to %Use.
template <class Net>
struct NetEstimator {
  FeatureSpec features;
  Standardizer in_norm;
  Standardizer out_norm;
  Net net;

  struct Scratch {
    Vector x;
    Vector y;
    typename Net::Scratch net;
  };

  /// `window` holds at least features.frames frames, newest last.
  void infer(std::span<const JointFrame* const> window, const MDState& md, Scratch& s,
             Vec6& out) const {
    if (window.size() < features.frames) throw Error("infer: window shorter than model input");
    if (md.size() < features.md_subset.end) throw Error("infer: MD state smaller than model input");
    s.x.resize(static_cast<Eigen::Index>(features.dim()));
    write_input(window.subspan(window.size() - features.frames), md, features.md_subset,
                s.x.data());
    in_norm.apply(s.x.data());
    net.infer(s.x, s.y, s.net);
    out_norm.invert(s.y.data());
    for (std::size_t k = 0; k < kJoints; ++k) out[k] = s.y(static_cast<Eigen::Index>(k));
  }

  Vec6 infer(std::span<const JointFrame* const> window, const MDState& md) const {
    Scratch s;
    Vec6 out;
    infer(window, md, s, out);
    return out;
  }

  /// Batched prediction over a dataset (6 x N).
  Matrix predict(const Dataset& d, const ThresholdSet& ts) const {
    Matrix X = build_feature_matrix(d, ts, features);
    if (X.rows() != in_norm.dim()) throw Error("predict: feature/normalization mismatch");
    in_norm.apply(X);
    Matrix Y(6, X.cols());
    const Eigen::Index chunk = 4096;
    for (Eigen::Index c0 = 0; c0 < X.cols(); c0 += chunk) {
      const Eigen::Index n = std::min(chunk, X.cols() - c0);
      Y.middleCols(c0, n) = net.forward(X.middleCols(c0, n), nullptr);
    }
    out_norm.invert(Y);
    return Y;
  }

  nlohmann::json to_json() const {
    return {{"frames", features.frames},
            {"md_subset", {features.md_subset.begin, features.md_subset.end}},
            {"input_norm", hrdl::to_json(in_norm)},
            {"output_norm", hrdl::to_json(out_norm)},
            {"network", net.to_json()}};
  }

  static NetEstimator from_json(const nlohmann::json& j) {
    NetEstimator e;
    e.features.frames = j.at("frames").get<std::size_t>();
    const auto sub = j.at("md_subset").get<std::vector<std::size_t>>();
    if (sub.size() != 2) throw Error("md_subset must be [begin, end)");
    e.features.md_subset = {sub[0], sub[1]};
    e.in_norm = standardizer_from_json(j.at("input_norm"));
    e.out_norm = standardizer_from_json(j.at("output_norm"));
    e.net = Net::from_json(j.at("network"));
    if (static_cast<std::size_t>(e.in_norm.dim()) != e.features.dim() ||
        e.net.input_dim() != e.in_norm.dim())
      throw Error("model input dimension does not match its feature description");
    if (e.net.output_dim() != 6 || e.out_norm.dim() != 6)
      throw Error("model output must be 6-dimensional");
    return e;
  }
};

using MlpEstimator = NetEstimator<nn::DenseNet>;
using RdlEstimator = NetEstimator<nn::ResidualNet>;

/// Ordered hierarchies whose outputs add up to the current estimate.
struct HierarchyStack {
  ThresholdSet thresholds;
  std::vector<MlpEstimator> hierarchies;

  std::size_t frames() const { return hierarchies.empty() ? 0 : hierarchies.front().features.frames; }

  void validate() const {
    if (hierarchies.empty()) throw Error("hierarchy stack is empty");
    for (const auto& h : hierarchies) {
      if (h.features.frames != frames()) throw Error("hierarchies must share the frame count");
      if (h.features.md_subset.end > thresholds.size())
        throw Error("hierarchy MD subset outside threshold set");
    }
  }

  /// Cumulative prediction after each hierarchy (entry j = sum of 0..j).
  std::vector<Matrix> predict_cumulative(const Dataset& d) const {
    std::vector<Matrix> out;
    Matrix acc;
    for (std::size_t j = 0; j < hierarchies.size(); ++j) {
      const Matrix p = hierarchies[j].predict(d, thresholds);
      acc = j == 0 ? p : Matrix(acc + p);
      out.push_back(acc);
    }
    return out;
  }

  Matrix predict(const Dataset& d) const { return predict_cumulative(d).back(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "hrdl-stack";
    j["version"] = kFormatVersion;
    j["md_thresholds"] = hrdl::to_json(thresholds);
    j["hierarchies"] = nlohmann::json::array();
    for (const auto& h : hierarchies) j["hierarchies"].push_back(h.to_json());
    return j;
  }

  static HierarchyStack from_json(const nlohmann::json& j) {
    if (j.at("format").get<std::string>() != "hrdl-stack") throw Error("not a hierarchy stack");
    if (j.at("version").get<int>() != kFormatVersion) throw Error("unsupported stack version");
    HierarchyStack s;
    s.thresholds = thresholds_from_json(j.at("md_thresholds"));
    for (const auto& hj : j.at("hierarchies")) s.hierarchies.push_back(MlpEstimator::from_json(hj));
    s.validate();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Training

namespace detail {

/// Column indices of training and validation samples, split by trajectory.
struct SampleSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
};

inline SampleSplit split_samples(const Dataset& d, double val_fraction, std::uint64_t seed) {
  SampleSplit s;
  std::vector<bool> is_val(d.trajectory_count(), false);
  if (val_fraction > 0.0 && d.trajectory_count() >= 2) {
    const std::size_t n = d.trajectory_count();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    nn::Rng rng(seed ^ 0x5eedULL);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    const auto nv = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))), 1, n - 1);
    for (std::size_t i = 0; i < nv; ++i) is_val[order[i]] = true;
  }
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    const auto r = d.trajectory(i);
    auto& dst = is_val[i] ? s.val : s.train;
    for (std::size_t n = r.begin; n < r.end; ++n) dst.push_back(static_cast<Eigen::Index>(n));
  }
  return s;
}

inline Matrix take_columns(const Matrix& M, const std::vector<Eigen::Index>& idx) {
  return nn::gather_columns(M, idx, 0, idx.size());
}

/// Fits normalizers on the training columns and trains the network.
template <class Net>
nn::TrainLog fit_estimator(NetEstimator<Net>& est, const Matrix& X, const Matrix& Y,
                           const SampleSplit& split, const TrainSettings& cfg, nn::Rng& rng) {
  Matrix Xt = take_columns(X, split.train);
  Matrix Yt = take_columns(Y, split.train);
  est.in_norm = Standardizer::fit(Xt);
  est.out_norm = Standardizer::fit(Yt);
  est.in_norm.apply(Xt);
  // Targets are standardized the other way round: (y - mean) / scale.
  Yt.colwise() -= est.out_norm.mean;
  Yt.array().colwise() /= est.out_norm.scale.array();
  Matrix Xv, Yv;
  if (!split.val.empty()) {
    Xv = take_columns(X, split.val);
    Yv = take_columns(Y, split.val);
    est.in_norm.apply(Xv);
    Yv.colwise() -= est.out_norm.mean;
    Yv.array().colwise() /= est.out_norm.scale.array();
  }
  return nn::fit(est.net, Xt, Yt, split.val.empty() ? nullptr : &Xv,
                 split.val.empty() ? nullptr : &Yv, cfg.fit, rng);
}

}  // namespace detail

template <class Net>
struct Trained {
  Net model;
  nn::TrainLog log;
};

/// Multi-frame MLP; an empty `md_subset` gives the plain joint-state input.
inline Trained<MlpEstimator> train_mlp(const Dataset& train, const ThresholdSet& ts,
                                       const HierarchySpec& spec, const TrainSettings& cfg,
                                       const Matrix* targets = nullptr) {
  if (train.empty()) throw Error("train_mlp: empty dataset");
  Trained<MlpEstimator> out;
  auto& est = out.model;
  est.features = {spec.frames, spec.md_subset};
  nn::Rng rng(cfg.seed);
  est.net = nn::DenseNet(static_cast<Eigen::Index>(est.features.dim()), spec.hidden, 6, rng);
  if (cfg.zero_output) {
    est.net.layers().back().W.value.setZero();
    est.net.layers().back().b.value.setZero();
  }
  const Matrix X = build_feature_matrix(train, ts, est.features);
  const Matrix Y = targets ? *targets : current_matrix(train);
  const auto split = detail::split_samples(train, cfg.val_fraction, cfg.seed);
  if (cfg.fit.epochs == 0) {
    est.in_norm = Standardizer::identity(X.rows());
    est.out_norm = Standardizer::identity(6);
    return out;
  }
  out.log = detail::fit_estimator(est, X, Y, split, cfg, rng);
  return out;
}

struct ResidualSpec {
  Eigen::Index width = 256;
  std::size_t blocks = 2;
  IndexRange md_subset{};
  std::size_t frames = 5;
  bool zero_init_residual = false;
};

inline Trained<RdlEstimator> train_rdl(const Dataset& train, const ThresholdSet& ts,
                                       const ResidualSpec& spec, const TrainSettings& cfg) {
  if (train.empty()) throw Error("train_rdl: empty dataset");
  Trained<RdlEstimator> out;
  auto& est = out.model;
  est.features = {spec.frames, spec.md_subset};
  nn::Rng rng(cfg.seed);
  est.net = nn::ResidualNet(static_cast<Eigen::Index>(est.features.dim()), spec.width, spec.blocks,
                            6, rng, spec.zero_init_residual);
  const Matrix X = build_feature_matrix(train, ts, est.features);
  const Matrix Y = current_matrix(train);
  const auto split = detail::split_samples(train, cfg.val_fraction, cfg.seed);
  if (cfg.fit.epochs == 0) {
    est.in_norm = Standardizer::identity(X.rows());
    est.out_norm = Standardizer::identity(6);
    return out;
  }
  out.log = detail::fit_estimator(est, X, Y, split, cfg, rng);
  return out;
}

inline std::uint64_t hierarchy_seed(std::uint64_t seed, std::size_t j) {
  return seed + 0x9e3779b97f4a7c15ULL * j;
}

struct TrainedStack {
  HierarchyStack stack;
  std::vector<nn::TrainLog> logs;
};

/// Hierarchy 0 learns the measured currents; hierarchy j learns the measured
/// currents minus the summed training-set predictions of hierarchies 0..j-1.
/// Later hierarchies start as a constant correction and keep it unless
/// training improves on it for the held-out trajectories.
inline TrainedStack train_hrdl(const Dataset& train, const ThresholdSet& ts,
                               const std::vector<HierarchySpec>& specs, const TrainSettings& cfg) {
  if (specs.empty()) throw Error("train_hrdl: need at least one hierarchy");
  if (train.empty()) throw Error("train_hrdl: empty dataset");
  TrainedStack out;
  out.stack.thresholds = ts;
  Matrix target = current_matrix(train);
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (specs[j].frames != specs.front().frames)
      throw Error("train_hrdl: hierarchies must share the frame count");
    TrainSettings cj = cfg;
    cj.seed = hierarchy_seed(cfg.seed, j);
    if (j > 0) {
      cj.zero_output = true;
      cj.fit.keep_initial = true;
    }
    auto t = train_mlp(train, ts, specs[j], cj, &target);
    if (j + 1 < specs.size()) target -= t.model.predict(train, ts);
    out.stack.hierarchies.push_back(std::move(t.model));
    out.logs.push_back(std::move(t.log));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSTM baseline

/// Per-frame LSTM input: [q, dq, ddq].
inline Matrix frame_state_matrix(const Dataset& d) {
  return build_feature_matrix(d, ThresholdSet{}, FeatureSpec{1, {}});
}

struct LstmSpec {
  std::size_t window = 100;
  Eigen::Index encoder = 32;
  Eigen::Index hidden = 64;
  std::vector<Eigen::Index> decoder_hidden{64};
  std::size_t stride = 1;  // use every stride-th window end as a training sample
};

struct LstmEstimator {
  std::size_t window = 100;
  Standardizer in_norm;
  Standardizer out_norm;
  nn::LSTMStack net;

  /// Standardized input sequences ending at `ends` (left-padded at the
  /// trajectory start).
  std::vector<Matrix> sequences(const Matrix& F, const Dataset& d,
                                std::span<const Eigen::Index> ends) const {
    std::vector<Matrix> seq(window, Matrix(F.rows(), static_cast<Eigen::Index>(ends.size())));
    for (std::size_t b = 0; b < ends.size(); ++b) {
      const auto n = static_cast<std::size_t>(ends[b]);
      const std::size_t begin = d.trajectory(d.trajectory_of(n)).begin;
      for (std::size_t t = 0; t < window; ++t) {
        const std::size_t back = window - 1 - t;
        const std::size_t idx = n >= begin + back ? n - back : begin;
        seq[t].col(static_cast<Eigen::Index>(b)) = F.col(static_cast<Eigen::Index>(idx));
      }
    }
    return seq;
  }

  /// Sliding-window prediction for every frame (6 x N).
  Matrix predict(const Dataset& d) const {
    Matrix F = frame_state_matrix(d);
    in_norm.apply(F);
    Matrix Y(6, F.cols());
    const std::size_t chunk = 1024;
    std::vector<Eigen::Index> ends;
    for (std::size_t c0 = 0; c0 < d.size(); c0 += chunk) {
      const std::size_t c1 = std::min(d.size(), c0 + chunk);
      ends.clear();
      for (std::size_t n = c0; n < c1; ++n) ends.push_back(static_cast<Eigen::Index>(n));
      Y.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(c1 - c0)) =
          net.forward(sequences(F, d, ends), nullptr);
    }
    out_norm.invert(Y);
    return Y;
  }

  nlohmann::json to_json() const {
    return {{"format", "hrdl-model"},
            {"version", kFormatVersion},
            {"kind", "lstm"},
            {"window", window},
            {"input_norm", hrdl::to_json(in_norm)},
            {"output_norm", hrdl::to_json(out_norm)},
            {"network", net.to_json()}};
  }

  static LstmEstimator from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "lstm") throw Error("not an LSTM model");
    LstmEstimator e;
    e.window = j.at("window").get<std::size_t>();
    e.in_norm = standardizer_from_json(j.at("input_norm"));
    e.out_norm = standardizer_from_json(j.at("output_norm"));
    e.net = nn::LSTMStack::from_json(j.at("network"));
    return e;
  }
};

/// Stateful streaming use of an LSTM estimator: (h, c) carry over between
/// calls instead of re-running a fixed window.
class LstmStream {
 public:
  explicit LstmStream(const LstmEstimator& est)
      : est_(&est),
        h_(Vector::Zero(est.net.hidden_dim())),
        c_(Vector::Zero(est.net.hidden_dim())) {}

  Vec6 step(const JointFrame& f) {
    Vector x(18);
    for (std::size_t k = 0; k < kJoints; ++k) {
      x(static_cast<Eigen::Index>(k)) = f.q[k];
      x(static_cast<Eigen::Index>(6 + k)) = f.dq[k];
      x(static_cast<Eigen::Index>(12 + k)) = f.ddq[k];
    }
    est_->in_norm.apply(x.data());
    auto r = est_->net.step(x, h_, c_);
    h_ = r.h;
    c_ = r.c;
    est_->out_norm.invert(r.y.data());
    Vec6 out;
    for (std::size_t k = 0; k < kJoints; ++k) out[k] = r.y(static_cast<Eigen::Index>(k));
    return out;
  }

 private:
  const LstmEstimator* est_;
  Vector h_, c_;
};

/// Truncated-sequence training: each sample is the `window` frames ending at a
/// training frame, with the loss on the final step's output.
inline Trained<LstmEstimator> train_lstm(const Dataset& train, const LstmSpec& spec,
                                         const TrainSettings& cfg) {
  if (spec.window == 0) throw Error("train_lstm: window must be >= 1");
  if (train.empty()) throw Error("train_lstm: empty dataset");
  for (std::size_t i = 0; i < train.trajectory_count(); ++i)
    if (train.trajectory(i).size() < spec.window)
      throw Error("train_lstm: window exceeds trajectory length");

  Trained<LstmEstimator> out;
  auto& est = out.model;
  est.window = spec.window;
  nn::Rng rng(cfg.seed);
  est.net = nn::LSTMStack(18, spec.encoder, spec.hidden, spec.decoder_hidden, 6, rng);

  Matrix F = frame_state_matrix(train);
  Matrix Y = current_matrix(train);
  const auto split = detail::split_samples(train, cfg.val_fraction, cfg.seed);
  auto strided = [&](const std::vector<Eigen::Index>& v) {
    std::vector<Eigen::Index> s;
    for (std::size_t i = 0; i < v.size(); i += std::max<std::size_t>(1, spec.stride)) s.push_back(v[i]);
    return s;
  };
  const auto tr = strided(split.train);
  const auto va = strided(split.val);
  if (cfg.fit.epochs == 0) {
    est.in_norm = Standardizer::identity(18);
    est.out_norm = Standardizer::identity(6);
    return out;
  }
  est.in_norm = Standardizer::fit(detail::take_columns(F, split.train));
  est.out_norm = Standardizer::fit(detail::take_columns(Y, split.train));
  est.in_norm.apply(F);
  Y.colwise() -= est.out_norm.mean;
  Y.array().colwise() /= est.out_norm.scale.array();

  auto params = est.net.params();
  std::vector<Eigen::Index> order = tr;
  std::uint64_t t = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;
  std::size_t since_best = 0;
  nn::LSTMStack::Cache cache;
  for (std::size_t epoch = 0; epoch < cfg.fit.epochs; ++epoch) {
    nn::shuffle_indices(order, rng);
    double acc = 0.0;
    std::size_t nb = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.fit.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.fit.batch);
      const std::span<const Eigen::Index> ends(order.data() + b0, b1 - b0);
      const auto seq = est.sequences(F, train, ends);
      Matrix Yb(6, static_cast<Eigen::Index>(ends.size()));
      for (std::size_t b = 0; b < ends.size(); ++b) Yb.col(static_cast<Eigen::Index>(b)) = Y.col(ends[b]);
      nn::zero_grads(params);
      const Matrix P = est.net.forward(seq, &cache);
      const auto lr = nn::mse_loss(P, Yb);
      est.net.backward(cache, lr.grad);
      nn::adam_step(params, cfg.fit.adam, ++t);
      acc += lr.loss;
      ++nb;
    }
    out.log.train_loss.push_back(acc / static_cast<double>(nb));
    if (!va.empty()) {
      double vacc = 0.0;
      for (std::size_t b0 = 0; b0 < va.size(); b0 += 1024) {
        const std::size_t b1 = std::min(va.size(), b0 + 1024);
        const std::span<const Eigen::Index> ends(va.data() + b0, b1 - b0);
        const Matrix P = est.net.forward(est.sequences(F, train, ends), nullptr);
        for (std::size_t b = 0; b < ends.size(); ++b)
          vacc += (P.col(static_cast<Eigen::Index>(b)) - Y.col(ends[b])).squaredNorm();
      }
      const double v = vacc / static_cast<double>(6 * va.size());
      out.log.val_loss.push_back(v);
      if (v < best) {
        best = v;
        best_params = nn::snapshot(est.net);
        out.log.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.fit.patience) {
        break;
      }
    }
  }
  if (!best_params.empty()) nn::restore(est.net, best_params);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  Vec6 overall{};
  Vec6 static_frames{};
  Vec6 moving_frames{};
  std::size_t n_static = 0;
  std::size_t n_moving = 0;
};

inline bool is_static(const JointFrame& f, double motion_eps) {
  for (double v : f.dq)
    if (std::abs(v) >= motion_eps) return false;
  return true;
}

/// Per-joint RMSE of `pred` (6 x N) against the currents of `test`, overall
/// and split into static frames (all |dq| < motion_eps) and the rest.
inline EvalReport evaluate(const Matrix& pred, const Dataset& test, double motion_eps) {
  if (test.empty()) throw Error("evaluate: empty test set");
  if (pred.cols() != static_cast<Eigen::Index>(test.size()) || pred.rows() != 6)
    throw Error("evaluate: prediction shape mismatch");
  std::vector<Vec6> p_all, t_all, p_st, t_st, p_mv, t_mv;
  for (std::size_t n = 0; n < test.size(); ++n) {
    Vec6 p;
    for (std::size_t k = 0; k < kJoints; ++k)
      p[k] = pred(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    const auto& f = test.frames[n];
    p_all.push_back(p);
    t_all.push_back(f.current);
    if (is_static(f, motion_eps)) {
      p_st.push_back(p);
      t_st.push_back(f.current);
    } else {
      p_mv.push_back(p);
      t_mv.push_back(f.current);
    }
  }
  EvalReport r;
  r.overall = rmse_per_joint(p_all, t_all);
  r.n_static = p_st.size();
  r.n_moving = p_mv.size();
  if (!p_st.empty()) r.static_frames = rmse_per_joint(p_st, t_st);
  if (!p_mv.empty()) r.moving_frames = rmse_per_joint(p_mv, t_mv);
  return r;
}

/// Predictions of the hysteresis-free analytic model (gravity, viscous,
/// inertial terms with the simulator's true coefficients).
inline Matrix predict_analytic(const Dataset& d, const RobotParams& params) {
  Matrix Y(6, static_cast<Eigen::Index>(d.size()));
  for (std::size_t n = 0; n < d.size(); ++n) {
    const Vec6 c = hysteresis_free_current(d.frames[n], params);
    for (std::size_t k = 0; k < kJoints; ++k)
      Y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = c[k];
  }
  return Y;
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyStats {
  double median_us = 0.0;
  double p95_us = 0.0;
  double p99_us = 0.0;
};

inline constexpr std::size_t kWarmupCalls = 100;

/// Times `calls` invocations of fn(i) after kWarmupCalls untimed ones.
template <class Fn>
LatencyStats bench_latency(Fn&& fn, std::size_t calls, std::size_t warmup = kWarmupCalls) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn(i);
  std::vector<double> us(calls);
  for (std::size_t i = 0; i < calls; ++i) {
    const auto t0 = clock::now();
    fn(i);
    const auto t1 = clock::now();
    us[i] = std::chrono::duration<double, std::micro>(t1 - t0).count();
  }
  std::sort(us.begin(), us.end());
  auto q = [&](double p) {
    if (us.empty()) return 0.0;
    const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(us.size()))) - 1;
    return us[std::min(idx, us.size() - 1)];
  };
  LatencyStats s;
  if (!us.empty()) {
    const std::size_t m = us.size() / 2;
    s.median_us = us.size() % 2 ? us[m] : 0.5 * (us[m - 1] + us[m]);
  }
  s.p95_us = q(0.95);
  s.p99_us = q(0.99);
  return s;
}

}  // namespace hrdl
