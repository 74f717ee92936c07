#pragma once

// Joint compliance: residual filtering, deadzone-gated admittance, and a
// closed loop in which the simulated robot executes the commanded velocity.

#include <functional>
#include <ostream>

#include "hrdl/parallel.hpp"
#include "hrdl/robosim.hpp"
#include "hrdl/trajgen.hpp"

namespace hrdl {

struct DeadzoneSpec {
  Vec6 boundary{6.0, 6.0, 6.0, 9.0, 11.0, 11.0};  // %Use
  Vec6 band{2.0, 2.0, 2.0, 2.0, 2.0, 2.0};        // %Use, width of the linear ramp
  Vec6 Kp{0.005, 0.005, 0.005, 0.005, 0.005, 0.005};  // rad/s per %Use

  void validate() const {
    for (std::size_t k = 0; k < kJoints; ++k) {
      if (!(boundary[k] > 0.0)) throw Error("deadzone boundary must be > 0");
      if (!(band[k] >= 0.0)) throw Error("deadzone band must be >= 0");
      if (!(Kp[k] >= 0.0) || !std::isfinite(Kp[k])) throw Error("Kp must be finite and >= 0");
    }
  }
};

/// First-order low-pass on measured - estimated: s += alpha * (r - s),
/// starting from zero.
class ResidualFilter {
 public:
  explicit ResidualFilter(double alpha = 0.1) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("residual filter alpha must lie in (0, 1]");
  }

  const Vec6& update(const Vec6& measured, const Vec6& estimated) {
    for (std::size_t k = 0; k < kJoints; ++k)
      state_[k] += alpha_ * ((measured[k] - estimated[k]) - state_[k]);
    return state_;
  }

  const Vec6& value() const { return state_; }
  void reset() { state_ = {}; }
  double alpha() const { return alpha_; }

 private:
  double alpha_;
  Vec6 state_{};
};

/// Per joint, with e = |r| - boundary:
///   e <= 0          -> 0
///   0 < e < band    -> Kp * sgn(r) * e * e / band
///   e >= band       -> Kp * sgn(r) * e
inline double admittance_joint(double r, double boundary, double band, double Kp) {
  const double e = std::abs(r) - boundary;
  if (e <= 0.0) return 0.0;
  const double s = r > 0.0 ? 1.0 : -1.0;
  if (e < band) return Kp * s * e * (e / band);
  return Kp * s * e;
}

inline Vec6 admittance_command(const Vec6& r, const DeadzoneSpec& dz) {
  Vec6 out;
  for (std::size_t k = 0; k < kJoints; ++k)
    out[k] = admittance_joint(r[k], dz.boundary[k], dz.band[k], dz.Kp[k]);
  return out;
}

/// Measured current minus the hysteresis-free model; keeps the friction
/// hysteresis as a spurious residual.
inline Vec6 analytic_baseline_residual(const RobotParams& params, const JointFrame& frame) {
  const Vec6 model = hysteresis_free_current(frame, params);
  Vec6 r;
  for (std::size_t k = 0; k < kJoints; ++k) r[k] = frame.current[k] - model[k];
  return r;
}

// ---------------------------------------------------------------------------
// Torque scripts: rows "t,tau1..tau6", held until the next row.

struct TorqueScript {
  std::vector<double> t;
  std::vector<Vec6> tau;  // Nm

  bool empty() const { return t.empty(); }
  double end_time() const { return t.empty() ? 0.0 : t.back(); }

  Vec6 at(double time) const {
    auto it = std::upper_bound(t.begin(), t.end(), time + 1e-9);
    if (it == t.begin()) return {};
    return tau[static_cast<std::size_t>(it - t.begin()) - 1];
  }

  void add(double time, const Vec6& v) {
    if (!t.empty() && !(time > t.back())) throw Error("torque script times must increase");
    t.push_back(time);
    tau.push_back(v);
  }

  /// Constant torque on one joint over [t0, t1), zero elsewhere.
  static TorqueScript pulse(std::size_t joint, double torque, double t0, double t1) {
    TorqueScript s;
    Vec6 v{};
    v.at(joint) = torque;
    s.add(t0, v);
    s.add(t1, Vec6{});
    return s;
  }
};

inline void write_torque_script(std::ostream& os, const TorqueScript& s) {
  os << "t,tau1,tau2,tau3,tau4,tau5,tau6\n";
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    os << format_value(s.t[i]);
    for (double v : s.tau[i]) os << ',' << format_value(v);
    os << '\n';
  }
}

inline TorqueScript read_torque_script(std::istream& is) {
  TorqueScript s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto cols = detail::split_csv(line);
    if (!header) {
      if (cols != std::vector<std::string>{"t", "tau1", "tau2", "tau3", "tau4", "tau5", "tau6"})
        throw ParseError(lineno, "torque script header must be t,tau1..tau6");
      header = true;
      continue;
    }
    if (cols.size() != 7) throw ParseError(lineno, "torque script rows need 7 values");
    Vec6 v;
    for (std::size_t k = 0; k < kJoints; ++k)
      v[k] = detail::parse_double(cols[k + 1], lineno, "tau" + std::to_string(k + 1));
    const double t = detail::parse_double(cols[0], lineno, "t");
    if (!s.t.empty() && !(t > s.t.back())) throw ParseError(lineno, "non-monotonic time");
    s.add(t, v);
  }
  if (!header) throw ParseError(lineno, "missing torque script header");
  return s;
}

// ---------------------------------------------------------------------------

struct ComplianceLog {
  std::vector<double> t;
  std::vector<Vec6> q;
  std::vector<Vec6> command;   // rad/s, executed
  std::vector<Vec6> residual;  // filtered, %Use
  std::vector<Vec6> tau_ext;   // Nm
  std::vector<Vec6> measured;
  std::vector<Vec6> estimated;
  std::vector<Vec6> hysteresis;  // simulator's friction term, for diagnostics
  std::vector<bool> limited;     // a velocity or position limit clamped this frame

  std::size_t size() const { return t.size(); }
};

inline void write_compliance_log(std::ostream& os, const ComplianceLog& log) {
  os << "t";
  for (const char* p : {"q", "cmd", "r", "tau", "meas", "est"})
    for (std::size_t k = 1; k <= kJoints; ++k) os << ',' << p << k;
  os << ",limited\n";
  for (std::size_t n = 0; n < log.size(); ++n) {
    os << format_value(log.t[n]);
    for (const auto* v : {&log.q[n], &log.command[n], &log.residual[n], &log.tau_ext[n],
                          &log.measured[n], &log.estimated[n]})
      for (double x : *v) os << ',' << format_value(x);
    os << ',' << (log.limited[n] ? 1 : 0) << '\n';
  }
}

/// Current estimate from the frame window (newest last) and MD state.
using CurrentModel =
    std::function<Vec6(std::span<const JointFrame* const> window, const MDState& md)>;

struct ComplianceSetup {
  Vec6 q0{0.0, 0.3, 0.4, 0.0, 0.3, 0.0};
  // Position-controlled motion executed before compliance starts (may be
  // empty). Gives the friction banks and the MD a realistic history.
  std::vector<JointFrame> approach;
  double duration = 10.0;  // s of compliance after the approach
  double freq = 100.0;
  std::array<JointLimit, kJoints> joint_limits{};
  Vec6 vel_limits{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  double filter_alpha = 0.1;
  bool noise = true;
  std::uint64_t seed = 0;

  ComplianceSetup() {
    joint_limits.fill({-2.5, 2.5});
  }
};

/// Generic closed loop. The torque script's clock starts with compliance
/// (time 0 = first compliance frame); the log covers the compliance phase only.
inline ComplianceLog compliance_loop(const CurrentModel& model, std::size_t window_frames,
                                     const ThresholdSet& ts, RobotParams params,
                                     const TorqueScript& script, const DeadzoneSpec& dz,
                                     const ComplianceSetup& setup) {
  dz.validate();
  if (!(setup.freq > 0.0)) throw Error("compliance: frequency must be positive");
  if (!(setup.duration > 0.0)) throw Error("compliance: duration must be positive");
  if (script.end_time() > setup.duration + 1e-9)
    throw Error("compliance: torque script longer than the simulated duration");
  if (window_frames == 0) throw Error("compliance: model window must be >= 1 frame");
  if (!setup.noise) params.noise_sigma = 0.0;

  const double h = 1.0 / setup.freq;
  RobotSimulator sim(params, setup.seed);
  MDState md(ts.size());
  ResidualFilter filter(setup.filter_alpha);
  std::vector<JointFrame> history;  // last window_frames frames, with currents
  std::vector<const JointFrame*> win(window_frames);

  auto push = [&](const JointFrame& f) {
    history.push_back(f);
    if (history.size() > window_frames) history.erase(history.begin());
    for (std::size_t m = 0; m < window_frames; ++m) {
      const std::size_t back = window_frames - 1 - m;
      win[m] = &history[history.size() > back ? history.size() - 1 - back : 0];
    }
  };

  const Vec6 start_q = setup.approach.empty() ? setup.q0 : setup.approach.front().q;
  sim.reset(start_q);
  double t = 0.0;
  for (const auto& a : setup.approach) {
    JointFrame f = a;
    f.t = t;
    f.current = sim.step(f);
    md_update_inplace(md, f.dq, ts);
    push(f);
    filter.update(f.current, model(win, md));
    t += h;
  }

  ComplianceLog log;
  Vec6 q = setup.approach.empty() ? setup.q0 : setup.approach.back().q;
  Vec6 dq = setup.approach.empty() ? Vec6{} : setup.approach.back().dq;
  Vec6 dq_prev = dq;
  const auto n_frames = static_cast<std::size_t>(std::llround(setup.duration * setup.freq));
  for (std::size_t n = 0; n < n_frames; ++n) {
    const double tc = static_cast<double>(n) * h;
    JointFrame f;
    f.t = t + tc;
    f.q = q;
    f.dq = dq;
    for (std::size_t k = 0; k < kJoints; ++k) f.ddq[k] = (dq[k] - dq_prev[k]) * setup.freq;
    const Vec6 tau = script.at(tc);
    f.current = sim.step(f, tau);
    md_update_inplace(md, f.dq, ts);
    push(f);
    const Vec6 est = model(win, md);
    const Vec6 r = filter.update(f.current, est);
    Vec6 cmd = admittance_command(r, dz);

    bool limited = false;
    Vec6 q_next;
    for (std::size_t k = 0; k < kJoints; ++k) {
      const double v = setup.vel_limits[k];
      if (std::abs(cmd[k]) > v) {
        cmd[k] = std::clamp(cmd[k], -v, v);
        limited = true;
      }
      q_next[k] = q[k] + cmd[k] * h;
      const auto& lim = setup.joint_limits[k];
      if (q_next[k] > lim.hi || q_next[k] < lim.lo) {
        q_next[k] = std::clamp(q_next[k], lim.lo, lim.hi);
        cmd[k] = (q_next[k] - q[k]) * setup.freq;
        limited = true;
      }
    }

    log.t.push_back(tc);
    log.q.push_back(q);
    log.command.push_back(cmd);
    log.residual.push_back(r);
    log.tau_ext.push_back(tau);
    log.measured.push_back(f.current);
    log.estimated.push_back(est);
    log.hysteresis.push_back(sim.hysteresis());
    log.limited.push_back(limited);

    dq_prev = dq;
    dq = cmd;
    q = q_next;
  }
  return log;
}

/// Closed loop with a hierarchy stack as the current model.
inline ComplianceLog compliance_sim(const HierarchyStack& stack, const RobotParams& params,
                                    const TorqueScript& script, const DeadzoneSpec& dz,
                                    const ComplianceSetup& setup,
                                    InferMode mode = InferMode::sequential) {
  StackRunner runner(stack, mode);
  const CurrentModel model = [&](std::span<const JointFrame* const> w, const MDState& md) {
    return runner.infer(w, md);
  };
  return compliance_loop(model, stack.frames(), stack.thresholds, params, script, dz, setup);
}

/// Same loop with the hysteresis-free analytic model as the estimator.
inline ComplianceLog compliance_sim_analytic(const RobotParams& params, const TorqueScript& script,
                                             const DeadzoneSpec& dz,
                                             const ComplianceSetup& setup) {
  const CurrentModel model = [&](std::span<const JointFrame* const> w, const MDState&) {
    return hysteresis_free_current(*w.back(), params);
  };
  return compliance_loop(model, 1, ThresholdSet{}, params, script, dz, setup);
}

}  // namespace hrdl
