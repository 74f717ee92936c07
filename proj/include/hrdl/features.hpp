#pragma once

// Model inputs: the Motion Discriminator (per-threshold retained
// suprathreshold joint velocities), multi-frame joint-state windows, and the
// Maxwell-Slip quantities the discriminator implies.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "hrdl/core.hpp"

namespace hrdl {

/// Velocity thresholds (rad/s), one 6-vector per threshold, grouped into
/// contiguous index ranges (one range per hierarchy).
struct ThresholdSet {
  std::vector<Vec6> thresholds;
  std::vector<IndexRange> groups;

  std::size_t size() const { return thresholds.size(); }
  IndexRange all() const { return {0, thresholds.size()}; }

  /// Builds a set whose thresholds apply equally to all six joints.
  static ThresholdSet broadcast(std::span<const double> values, std::vector<IndexRange> groups) {
    ThresholdSet ts;
    for (double v : values) {
      Vec6 t;
      t.fill(v);
      ts.thresholds.push_back(t);
    }
    ts.groups = std::move(groups);
    ts.validate();
    return ts;
  }

  void validate() const {
    for (const auto& t : thresholds)
      for (double v : t)
        if (!(v > 0.0)) throw Error("thresholds must be positive");
    std::size_t expect = 0;
    for (const auto& g : groups) {
      if (g.begin != expect || g.end <= g.begin || g.end > thresholds.size())
        throw Error("threshold groups must be contiguous, disjoint and in range");
      expect = g.end;
    }
  }
};

/// The shipped three-hierarchy grouping of fifteen thresholds.
inline ThresholdSet default_thresholds() {
  const double values[] = {0.003, 0.006, 0.009, 0.012, 0.015,   //
                           0.012, 0.016, 0.020, 0.024, 0.028,   //
                           0.002, 0.006, 0.010, 0.014, 0.018};
  return ThresholdSet::broadcast(values, {{0, 5}, {5, 10}, {10, 15}});
}

struct MDState {
  std::vector<Vec6> values;
  std::vector<std::array<bool, kJoints>> initialized;

  MDState() = default;
  explicit MDState(std::size_t n_thresholds)
      : values(n_thresholds, Vec6{}), initialized(n_thresholds, std::array<bool, kJoints>{}) {}

  std::size_t size() const { return values.size(); }
  friend bool operator==(const MDState&, const MDState&) = default;
};

inline void md_update_inplace(MDState& md, const Vec6& dq, const ThresholdSet& ts) {
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (std::size_t k = 0; k < kJoints; ++k)
      if (std::abs(dq[k]) >= ts.thresholds[i][k]) {
        md.values[i][k] = dq[k];
        md.initialized[i][k] = true;
      }
}

inline MDState md_update(MDState md, const Vec6& dq, const ThresholdSet& ts) {
  if (md.size() != ts.size()) throw Error("md_update: state/threshold size mismatch");
  md_update_inplace(md, dq, ts);
  return md;
}

/// Per-frame discriminator state; the state restarts at every trajectory.
inline std::vector<MDState> md_trace(const Dataset& d, const ThresholdSet& ts) {
  std::vector<MDState> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    const auto r = d.trajectory(i);
    MDState md(ts.size());
    for (std::size_t n = r.begin; n < r.end; ++n) {
      md_update_inplace(md, d.frames[n].dq, ts);
      out.push_back(md);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

inline std::size_t input_dim(std::size_t frames, std::size_t md_rows) {
  return 18 * frames + 6 * md_rows;
}

/// Writes [q, dq, ddq] for each frame (oldest first) followed by the MD rows in
/// `subset`, row by row. `window` must hold exactly the frames to encode.
inline void write_input(std::span<const JointFrame* const> window, const MDState& md,
                        IndexRange subset, double* out) {
  for (const JointFrame* f : window) {
    for (double v : f->q) *out++ = v;
    for (double v : f->dq) *out++ = v;
    for (double v : f->ddq) *out++ = v;
  }
  for (std::size_t i = subset.begin; i < subset.end; ++i)
    for (double v : md.values[i]) *out++ = v;
}

inline std::vector<double> build_input_vector(std::span<const JointFrame> frames, const MDState& md,
                                              IndexRange subset) {
  if (frames.empty()) throw Error("build_input_vector: empty window");
  if (subset.end > md.size()) throw Error("build_input_vector: subset outside MD state");
  std::vector<const JointFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  std::vector<double> out(input_dim(frames.size(), subset.size()));
  write_input(ptrs, md, subset, out.data());
  return out;
}

/// Frame pointers for the M-frame window ending at frame n, left-padded with
/// the first frame of n's trajectory.
inline void window_at(const Dataset& d, std::size_t n, std::size_t M, std::size_t traj_begin,
                      std::vector<const JointFrame*>& out) {
  out.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t back = M - 1 - m;
    const std::size_t idx = n >= traj_begin + back ? n - back : traj_begin;
    out[m] = &d.frames[idx];
  }
}

/// Describes how a network input is assembled.
struct FeatureSpec {
  std::size_t frames = 5;
  IndexRange md_subset{};

  std::size_t dim() const { return input_dim(frames, md_subset.size()); }
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Feature matrix with one column per frame of `d`.
inline Eigen::MatrixXd build_feature_matrix(const Dataset& d, const ThresholdSet& ts,
                                            const FeatureSpec& spec) {
  if (spec.frames == 0) throw Error("feature window must hold at least one frame");
  if (spec.md_subset.end > ts.size()) throw Error("MD subset outside threshold set");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(spec.dim()), static_cast<Eigen::Index>(d.size()));
  std::vector<const JointFrame*> win;
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    const auto r = d.trajectory(i);
    MDState md(ts.size());
    for (std::size_t n = r.begin; n < r.end; ++n) {
      md_update_inplace(md, d.frames[n].dq, ts);
      window_at(d, n, spec.frames, r.begin, win);
      write_input(win, md, spec.md_subset, X.col(static_cast<Eigen::Index>(n)).data());
    }
  }
  return X;
}

inline Eigen::MatrixXd current_matrix(const Dataset& d) {
  Eigen::MatrixXd Y(6, static_cast<Eigen::Index>(d.size()));
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t k = 0; k < kJoints; ++k)
      Y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = d.frames[n].current[k];
  return Y;
}

// ---------------------------------------------------------------------------

struct MSEquivalent {
  double z = 0.0;
  double delta_signed = 0.0;
  double zeta = 0.0;
};

/// z = q, delta_signed = sgn(md) * t_i / f, zeta = z - delta_signed, indexed
/// [threshold][joint]. An uninitialized entry has sign 0, so zeta = z.
inline std::vector<std::array<MSEquivalent, kJoints>> md_ms_equivalents(const MDState& md,
                                                                        const Vec6& q,
                                                                        const ThresholdSet& ts,
                                                                        double f) {
  if (!(f > 0.0)) throw Error("md_ms_equivalents: frequency must be positive");
  if (md.size() != ts.size()) throw Error("md_ms_equivalents: state/threshold size mismatch");
  std::vector<std::array<MSEquivalent, kJoints>> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (std::size_t k = 0; k < kJoints; ++k) {
      const double v = md.initialized[i][k] ? md.values[i][k] : 0.0;
      const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      const double delta = ts.thresholds[i][k] / f;
      auto& e = out[i][k];
      e.z = q[k];
      e.delta_signed = sgn * delta;
      e.zeta = e.z - e.delta_signed;
    }
  return out;
}

// ---------------------------------------------------------------------------

/// Per-dimension affine standardization (x - mean) / scale.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  /// Columns of X are samples. Dimensions with (near) zero spread get scale 1.
  static Standardizer fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    const double n = static_cast<double>(X.cols());
    s.mean = X.rowwise().sum() / n;
    s.scale.resize(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const double var = (X.row(r).array() - s.mean(r)).square().sum() / n;
      const double sd = std::sqrt(var);
      s.scale(r) = sd > 1e-9 ? sd : 1.0;
    }
    return s;
  }

  Eigen::Index dim() const { return mean.size(); }

  void apply(Eigen::MatrixXd& X) const {
    X.colwise() -= mean;
    X.array().colwise() /= scale.array();
  }
  void apply(double* x) const {
    for (Eigen::Index i = 0; i < mean.size(); ++i) x[i] = (x[i] - mean(i)) / scale(i);
  }
  void invert(Eigen::MatrixXd& Y) const {
    Y.array().colwise() *= scale.array();
    Y.colwise() += mean;
  }
  void invert(double* y) const {
    for (Eigen::Index i = 0; i < mean.size(); ++i) y[i] = y[i] * scale(i) + mean(i);
  }

  friend bool operator==(const Standardizer& a, const Standardizer& b) {
    return a.mean == b.mean && a.scale == b.scale;
  }
};

}  // namespace hrdl
