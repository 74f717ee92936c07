#pragma once

// Trajectory generators for the two training regimes (continuous via-point
// motion and on/off hysteresis-rich motion) plus signal conditioning.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hrdl/core.hpp"

namespace hrdl {

enum class TrajKind { continuous, hysteresis_rich };

struct JointLimit {
  double lo = -1.0;
  double hi = 1.0;
};

struct TrajSpec {
  TrajKind kind = TrajKind::continuous;
  double duration = 60.0;  // s
  double freq = 100.0;     // Hz
  std::array<JointLimit, kJoints> joint_limits{};
  Vec6 vel_limits{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  // continuous
  bool stop_at_via = false;
  double min_segment = 0.5;  // s
  // hysteresis-rich
  double speed_lo = 0.05;
  double speed_hi = 0.5;
  double block_seconds = 3.0;

  std::size_t frame_count() const {
    return static_cast<std::size_t>(std::llround(duration * freq));
  }

  void validate() const {
    if (!(duration > 0.0)) throw Error("trajectory duration must be positive");
    if (!(freq > 0.0)) throw Error("trajectory frequency must be positive");
    for (std::size_t k = 0; k < kJoints; ++k) {
      if (!(joint_limits[k].lo < joint_limits[k].hi)) throw Error("infeasible joint limits");
      if (!(vel_limits[k] > 0.0)) throw Error("infeasible velocity limits");
    }
    if (kind == TrajKind::hysteresis_rich &&
        !(speed_lo > 0.0 && speed_lo <= speed_hi && block_seconds > 0.0))
      throw Error("infeasible hysteresis-rich speed range");
  }
};

/// Quintic between (p0, v0, 0) and (p1, v1, 0) over duration T.
class QuinticSegment {
 public:
  QuinticSegment(double p0, double p1, double v0, double v1, double T) : T_(T) {
    const double h = p1 - p0;
    c_[0] = p0;
    c_[1] = v0;
    c_[2] = 0.0;
    c_[3] = (20.0 * h - (8.0 * v1 + 12.0 * v0) * T) / (2.0 * T * T * T);
    c_[4] = (-30.0 * h + (14.0 * v1 + 16.0 * v0) * T) / (2.0 * T * T * T * T);
    c_[5] = (12.0 * h - 6.0 * (v1 + v0) * T) / (2.0 * T * T * T * T * T);
  }

  double duration() const { return T_; }
  double pos(double t) const {
    return c_[0] + t * (c_[1] + t * (c_[2] + t * (c_[3] + t * (c_[4] + t * c_[5]))));
  }
  double vel(double t) const {
    return c_[1] + t * (2.0 * c_[2] + t * (3.0 * c_[3] + t * (4.0 * c_[4] + t * 5.0 * c_[5])));
  }
  double acc(double t) const {
    return 2.0 * c_[2] + t * (6.0 * c_[3] + t * (12.0 * c_[4] + t * 20.0 * c_[5]));
  }

 private:
  double T_;
  std::array<double, 6> c_{};
};

/// Samples a piecewise-quintic path through `via` at `freq`. Segment i lasts
/// durations[i] (a multiple of 1/freq) and starts/ends with via_vel[i] /
/// via_vel[i+1]. The final via point is included as the last frame.
inline std::vector<JointFrame> sample_via_path(std::span<const Vec6> via,
                                               std::span<const Vec6> via_vel,
                                               std::span<const double> durations, double freq,
                                               double t0 = 0.0) {
  if (via.size() < 2 || durations.size() != via.size() - 1 || via_vel.size() != via.size())
    throw Error("sample_via_path: inconsistent via-point description");
  std::vector<JointFrame> out;
  const double h = 1.0 / freq;
  std::size_t n = 0;
  for (std::size_t s = 0; s + 1 < via.size(); ++s) {
    const auto steps = static_cast<std::size_t>(std::llround(durations[s] * freq));
    std::array<std::optional<QuinticSegment>, kJoints> seg;
    for (std::size_t k = 0; k < kJoints; ++k)
      seg[k].emplace(via[s][k], via[s + 1][k], via_vel[s][k], via_vel[s + 1][k],
                     static_cast<double>(steps) * h);
    for (std::size_t m = 0; m < steps; ++m, ++n) {
      JointFrame f;
      f.t = t0 + static_cast<double>(n) * h;
      const double tl = static_cast<double>(m) * h;
      for (std::size_t k = 0; k < kJoints; ++k) {
        f.q[k] = seg[k]->pos(tl);
        f.dq[k] = seg[k]->vel(tl);
        f.ddq[k] = seg[k]->acc(tl);
      }
      out.push_back(f);
    }
  }
  JointFrame last;
  last.t = t0 + static_cast<double>(n) * h;
  last.q = via.back();
  last.dq = via_vel.back();
  out.push_back(last);
  return out;
}

/// Rest-to-rest path through `via`, each segment lasting `segment_seconds`.
inline std::vector<JointFrame> rest_to_rest_path(std::span<const Vec6> via, double segment_seconds,
                                                 double freq) {
  if (via.size() < 2) throw Error("rest_to_rest_path: need at least two via points");
  const std::vector<Vec6> vel(via.size(), Vec6{});
  const std::vector<double> dur(via.size() - 1, segment_seconds);
  return sample_via_path(via, vel, dur, freq, 0.0);
}

namespace detail {

inline Vec6 sample_in_limits(const TrajSpec& spec, std::mt19937_64& rng, double margin) {
  Vec6 q;
  for (std::size_t k = 0; k < kJoints; ++k) {
    const auto& l = spec.joint_limits[k];
    const double span = l.hi - l.lo;
    std::uniform_real_distribution<double> u(l.lo + margin * span, l.hi - margin * span);
    q[k] = u(rng);
  }
  return q;
}

inline bool segment_within(const QuinticSegment& s, double freq, double vmax, const JointLimit& l) {
  const auto steps = static_cast<std::size_t>(std::llround(s.duration() * freq));
  for (std::size_t m = 0; m <= steps; ++m) {
    const double t = static_cast<double>(m) / freq;
    if (std::abs(s.vel(t)) > vmax) return false;
    const double p = s.pos(t);
    if (p < l.lo || p > l.hi) return false;
  }
  return true;
}

}  // namespace detail

/// Random via points in joint space joined by quintic segments. Each segment
/// is time-scaled (in whole frames) until every joint respects its velocity
/// and position limits on the sample grid.
inline Dataset gen_continuous(const TrajSpec& spec) {
  spec.validate();
  if (spec.kind != TrajKind::continuous) throw Error("gen_continuous: spec kind mismatch");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> stretch(1.0, 1.6);
  const std::size_t n_frames = spec.frame_count();
  const double f = spec.freq;

  // Via points and provisional durations first, velocities second.
  std::vector<Vec6> via{detail::sample_in_limits(spec, rng, 0.05)};
  std::vector<double> dur;
  double total = 0.0;
  while (total * f < static_cast<double>(n_frames) + 1.0) {
    const Vec6 next = detail::sample_in_limits(spec, rng, 0.05);
    double T = spec.min_segment;
    for (std::size_t k = 0; k < kJoints; ++k)
      T = std::max(T, 15.0 / 8.0 * std::abs(next[k] - via.back()[k]) / spec.vel_limits[k]);
    T = std::ceil(T * stretch(rng) * f) / f;
    via.push_back(next);
    dur.push_back(T);
    total += T;
  }

  std::vector<Vec6> vel(via.size(), Vec6{});
  if (!spec.stop_at_via) {
    for (std::size_t i = 1; i + 1 < via.size(); ++i)
      for (std::size_t k = 0; k < kJoints; ++k) {
        const double s0 = (via[i][k] - via[i - 1][k]) / dur[i - 1];
        const double s1 = (via[i + 1][k] - via[i][k]) / dur[i];
        double v = (s0 * s1 > 0.0) ? 0.5 * (s0 + s1) : 0.0;
        const double cap = 0.5 * spec.vel_limits[k];
        vel[i][k] = std::clamp(v, -cap, cap);
      }
  }

  for (std::size_t s = 0; s < dur.size(); ++s) {
    for (int attempt = 0;; ++attempt) {
      bool ok = true;
      for (std::size_t k = 0; k < kJoints && ok; ++k) {
        QuinticSegment seg(via[s][k], via[s + 1][k], vel[s][k], vel[s + 1][k], dur[s]);
        ok = detail::segment_within(seg, f, spec.vel_limits[k], spec.joint_limits[k]);
      }
      if (ok) break;
      if (attempt == 20) {
        // Fall back to stopping at both ends of this segment; rest-to-rest
        // quintics never overshoot their end points.
        vel[s] = Vec6{};
        vel[s + 1] = Vec6{};
        attempt = 0;
        if (s > 0) --s;  // the previous segment's end velocity changed
        continue;
      }
      dur[s] = std::ceil(dur[s] * 1.15 * f) / f;
    }
  }

  auto frames = sample_via_path(via, vel, dur, f);
  frames.resize(n_frames);
  Dataset d;
  d.freq = f;
  d.label = "continuous";
  d.append_trajectory(frames);
  return d;
}

/// On/off motion: every joint heads for a random target at its own random
/// constant speed; motion is interrupted by a pause block after every block of
/// motion; arrived joints hold until all joints have arrived, then new targets
/// are drawn. Accelerations are reported as zero (the speed steps are not
/// resolved at the sample rate). `cycle_starts`, when given, receives the
/// first frame index of every target cycle.
inline Dataset gen_hysteresis_rich(const TrajSpec& spec,
                                   std::vector<std::size_t>* cycle_starts = nullptr) {
  spec.validate();
  if (spec.kind != TrajKind::hysteresis_rich) throw Error("gen_hysteresis_rich: spec kind mismatch");
  std::mt19937_64 rng(spec.seed);
  const std::size_t n_frames = spec.frame_count();
  const double h = 1.0 / spec.freq;
  const auto block = static_cast<std::size_t>(std::floor(spec.block_seconds * spec.freq));

  std::vector<JointFrame> frames;
  frames.reserve(n_frames);
  Vec6 q = detail::sample_in_limits(spec, rng, 0.0);
  JointFrame f0;
  f0.q = q;
  frames.push_back(f0);

  while (frames.size() < n_frames) {
    const Vec6 target = detail::sample_in_limits(spec, rng, 0.0);
    if (cycle_starts) cycle_starts->push_back(frames.size());
    Vec6 speed;
    for (std::size_t k = 0; k < kJoints; ++k) {
      const double hi = std::min(spec.speed_hi, spec.vel_limits[k]);
      const double lo = std::min(spec.speed_lo, hi);
      speed[k] = std::uniform_real_distribution<double>(lo, hi)(rng);
    }
    std::size_t in_block = 0;
    bool moving = true;
    auto all_arrived = [&] {
      for (std::size_t k = 0; k < kJoints; ++k)
        if (q[k] != target[k]) return false;
      return true;
    };
    while (!all_arrived() && frames.size() < n_frames) {
      JointFrame f;
      f.t = static_cast<double>(frames.size()) * h;
      if (moving) {
        for (std::size_t k = 0; k < kJoints; ++k) {
          const double d = target[k] - q[k];
          const double stepmax = speed[k] * h;
          if (std::abs(d) <= stepmax) {
            f.dq[k] = d / h;
            q[k] = target[k];
          } else {
            f.dq[k] = std::copysign(speed[k], d);
            q[k] += std::copysign(stepmax, d);
          }
        }
      }
      f.q = q;
      frames.push_back(f);
      if (++in_block == block) {
        in_block = 0;
        moving = !moving;
      }
    }
  }
  frames.resize(n_frames);
  if (cycle_starts)
    while (!cycle_starts->empty() && cycle_starts->back() >= n_frames) cycle_starts->pop_back();
  Dataset d;
  d.freq = spec.freq;
  d.label = "hysteresis-rich";
  d.append_trajectory(frames);
  return d;
}

// ---------------------------------------------------------------------------

/// Third-order Butterworth low-pass, bilinear transform with pre-warping,
/// applied causally (transposed direct form II, zero initial state).
class Butterworth3 {
 public:
  Butterworth3(double cutoff, double fs) {
    if (!(fs > 0.0) || !(cutoff > 0.0 && cutoff < fs / 2.0))
      throw Error("butterworth3: cutoff must lie in (0, fs/2)");
    // Cascade of the real-pole first-order section and the complex-pair
    // second-order section, K = tan(pi fc / fs).
    const double K = std::tan(std::numbers::pi * cutoff / fs);
    const double K2 = K * K;
    const std::array<double, 2> b1{K, K};
    const std::array<double, 2> a1{1.0 + K, K - 1.0};
    const std::array<double, 3> b2{K2, 2.0 * K2, K2};
    const std::array<double, 3> a2{1.0 + K + K2, 2.0 * (K2 - 1.0), 1.0 - K + K2};
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        b_[i + j] += b1[i] * b2[j];
        a_[i + j] += a1[i] * a2[j];
      }
    const double a0 = a_[0];
    for (auto& x : b_) x /= a0;
    for (auto& x : a_) x /= a0;
    // Pin the DC gain to one.
    const double sa = a_[0] + a_[1] + a_[2] + a_[3];
    const double sb = b_[0] + b_[1] + b_[2] + b_[3];
    for (auto& x : b_) x *= sa / sb;
  }

  const std::array<double, 4>& b() const { return b_; }
  const std::array<double, 4>& a() const { return a_; }

  void reset() { s_ = {}; }

  double step(double x) {
    const double y = b_[0] * x + s_[0];
    s_[0] = b_[1] * x - a_[1] * y + s_[1];
    s_[1] = b_[2] * x - a_[2] * y + s_[2];
    s_[2] = b_[3] * x - a_[3] * y;
    return y;
  }

 private:
  std::array<double, 4> b_{};
  std::array<double, 4> a_{};
  std::array<double, 3> s_{};
};

inline std::vector<double> butterworth3(std::span<const double> signal, double cutoff, double fs) {
  Butterworth3 filt(cutoff, fs);
  std::vector<double> out;
  out.reserve(signal.size());
  for (double x : signal) out.push_back(filt.step(x));
  return out;
}

/// Filters the currents of every trajectory independently.
inline void filter_currents(Dataset& d, double cutoff) {
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    const auto r = d.trajectory(i);
    for (std::size_t k = 0; k < kJoints; ++k) {
      Butterworth3 filt(cutoff, d.freq);
      for (std::size_t n = r.begin; n < r.end; ++n)
        d.frames[n].current[k] = filt.step(d.frames[n].current[k]);
    }
  }
}

struct Derivatives {
  std::vector<Vec6> dq;
  std::vector<Vec6> ddq;
};

/// Central differences inside, second-order one-sided differences at both ends.
inline Derivatives finite_diff_derivatives(std::span<const Vec6> q, double fs) {
  if (q.size() < 3) throw Error("finite_diff_derivatives: need at least 3 samples");
  if (!(fs > 0.0)) throw Error("finite_diff_derivatives: fs must be positive");
  const double h = 1.0 / fs;
  const std::size_t n = q.size();
  Derivatives d{std::vector<Vec6>(n), std::vector<Vec6>(n)};
  for (std::size_t k = 0; k < kJoints; ++k) {
    for (std::size_t i = 1; i + 1 < n; ++i) {
      d.dq[i][k] = (q[i + 1][k] - q[i - 1][k]) / (2.0 * h);
      d.ddq[i][k] = (q[i + 1][k] - 2.0 * q[i][k] + q[i - 1][k]) / (h * h);
    }
    d.dq[0][k] = (-3.0 * q[0][k] + 4.0 * q[1][k] - q[2][k]) / (2.0 * h);
    d.dq[n - 1][k] = (3.0 * q[n - 1][k] - 4.0 * q[n - 2][k] + q[n - 3][k]) / (2.0 * h);
    d.ddq[0][k] = (q[0][k] - 2.0 * q[1][k] + q[2][k]) / (h * h);
    d.ddq[n - 1][k] = (q[n - 1][k] - 2.0 * q[n - 2][k] + q[n - 3][k]) / (h * h);
  }
  return d;
}

}  // namespace hrdl
