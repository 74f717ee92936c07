#pragma once

// End-effector wrench estimation. The compound scheme feeds current
// residuals (measured minus learned current estimate) plus joint state to a
// network; the single-model baseline feeds raw currents plus joint state.
// jacobian_wrench_check is the analytic cross-check w = J^-T (kappa * r).

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <utility>

#include "hrdl/models.hpp"
#include "hrdl/parallel.hpp"
#include "hrdl/trajgen.hpp"

namespace hrdl {

enum class WrenchMode { compound, single };

inline const char* to_string(WrenchMode m) { return m == WrenchMode::compound ? "compound" : "single"; }

inline WrenchMode wrench_mode_from_string(const std::string& s) {
  if (s == "compound") return WrenchMode::compound;
  if (s == "single") return WrenchMode::single;
  throw Error("unknown wrench mode: " + s);
}

class SingularConfiguration : public Error {
 public:
  SingularConfiguration(double cond)
      : Error("Jacobian near singular (condition number " + std::to_string(cond) + ")"),
        cond_(cond) {}
  double condition() const { return cond_; }

 private:
  double cond_;
};

inline constexpr double kMaxJacobianCondition = 1e6;

inline double jacobian_condition(const Mat6& J) {
  Eigen::JacobiSVD<Mat6> svd(J);
  const auto& s = svd.singularValues();
  return s(5) > 0.0 ? s(0) / s(5) : std::numeric_limits<double>::infinity();
}

namespace detail {

// Gaussian elimination with partial pivoting in plain loops. Eigen's
// vectorized small solves pick their summation order from the runtime stack
// alignment, which made IK poses differ in the last bits between runs.
inline EVec6 solve6(Mat6 A, EVec6 b) {
  for (int c = 0; c < 6; ++c) {
    int piv = c;
    for (int r = c + 1; r < 6; ++r)
      if (std::abs(A(r, c)) > std::abs(A(piv, c))) piv = r;
    if (piv != c) {
      for (int k = 0; k < 6; ++k) std::swap(A(c, k), A(piv, k));
      std::swap(b(c), b(piv));
    }
    for (int r = c + 1; r < 6; ++r) {
      const double f = A(r, c) / A(c, c);
      for (int k = c; k < 6; ++k) A(r, k) -= f * A(c, k);
      b(r) -= f * b(c);
    }
  }
  EVec6 x;
  for (int r = 5; r >= 0; --r) {
    double acc = b(r);
    for (int k = r + 1; k < 6; ++k) acc -= A(r, k) * x(k);
    x(r) = acc / A(r, r);
  }
  return x;
}

}  // namespace detail

/// w = J^-T (kappa * r) for a residual r in %Use.
inline WrenchSample jacobian_wrench_check(const RobotParams& params, const Vec6& q,
                                          const Vec6& residual, double* condition = nullptr) {
  const Mat6 J = jacobian(q, params);
  const double c = jacobian_condition(J);
  if (condition) *condition = c;
  if (!(c <= kMaxJacobianCondition)) throw SingularConfiguration(c);
  EVec6 tau;
  for (std::size_t k = 0; k < kJoints; ++k)
    tau(static_cast<Eigen::Index>(k)) = params.torque_per_use[k] * residual[k];
  return WrenchSample::from_stacked(detail::solve6(J.transpose(), tau));
}

/// The residual a wrench produces in a noise-free, hysteresis-free reading.
inline Vec6 ideal_wrench_residual(const RobotParams& params, const Vec6& q, const WrenchSample& w) {
  Vec6 tau = external_to_joint_torque(w, q, params);
  for (std::size_t k = 0; k < kJoints; ++k) tau[k] /= params.torque_per_use[k];
  return tau;
}

// ---------------------------------------------------------------------------
// Fixed-orientation poses

/// Tool axis pointing straight down.
inline Eigen::Matrix3d tool_down_orientation() {
  return Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

/// Newton iterations on the 6-D pose error. Returns nullopt when the
/// iteration does not converge.
inline std::optional<Vec6> solve_ik(const Eigen::Vector3d& position, const Eigen::Matrix3d& rotation,
                                    const Vec6& seed, const RobotParams& params,
                                    int max_iter = 100, double tol = 1e-12) {
  Vec6 q = seed;
  for (int it = 0; it < max_iter; ++it) {
    const Pose p = fk_pose(q, params);
    EVec6 e;
    e.head<3>() = position - p.position;
    Eigen::Vector3d er = Eigen::Vector3d::Zero();
    for (int i = 0; i < 3; ++i) er += 0.5 * p.rotation.col(i).cross(rotation.col(i));
    e.tail<3>() = er;
    double err2 = 0.0;
    for (int i = 0; i < 6; ++i) err2 += e(i) * e(i);
    if (err2 < tol * tol) return q;
    const Mat6 J = jacobian(q, params);
    Mat6 A;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) {
        double acc = r == c ? 1e-10 : 0.0;
        for (int k = 0; k < 6; ++k) acc += J(r, k) * J(c, k);
        A(r, c) = acc;
      }
    const EVec6 y = detail::solve6(A, e);
    EVec6 dq;
    for (int k = 0; k < 6; ++k) {
      double acc = 0.0;
      for (int r = 0; r < 6; ++r) acc += J(r, k) * y(r);
      dq(k) = acc;
    }
    for (std::size_t k = 0; k < kJoints; ++k) q[k] += dq(static_cast<Eigen::Index>(k));
  }
  return std::nullopt;
}

struct WrenchWorkspace {
  Eigen::Vector3d lo{0.30, -0.20, 0.15};
  Eigen::Vector3d hi{0.50, 0.20, 0.35};
  double max_condition = 60.0;  // poses above this are rejected as ill-conditioned
  Vec6 ik_seed{0.0, 0.6, 1.2, 0.0, std::numbers::pi - 1.8, 0.0};
  JointLimit limit{-2.5, 2.5};
};

/// Random well-conditioned joint configuration with the tool pointing down.
inline Vec6 random_tool_down_pose(const RobotParams& params, const WrenchWorkspace& ws,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Matrix3d R = tool_down_orientation();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Eigen::Vector3d p;
    for (int i = 0; i < 3; ++i) p(i) = ws.lo(i) + (ws.hi(i) - ws.lo(i)) * u(rng);
    const auto q = solve_ik(p, R, ws.ik_seed, params);
    if (!q) continue;
    bool ok = true;
    for (double v : *q) ok = ok && v >= ws.limit.lo && v <= ws.limit.hi;
    if (ok && jacobian_condition(jacobian(*q, params)) <= ws.max_condition) return *q;
  }
  throw Error("could not find a well-conditioned pose in the wrench workspace");
}

// ---------------------------------------------------------------------------
// Datasets

struct WrenchBounds {
  double force = 30.0;  // N, per component
  double moment = 5.0;  // Nm, per component
};

struct WrenchData {
  std::vector<JointFrame> frames;  // q, dq, ddq and measured current
  std::vector<Vec6> residual;      // measured - learned estimate (compound input)
  std::vector<Vec6> ideal_residual;  // J^T w / kappa
  std::vector<WrenchSample> wrench;  // ground truth

  std::size_t size() const { return frames.size(); }
};

struct WrenchDataSpec {
  std::size_t n_samples = 20000;
  std::size_t hold_frames = 50;  // static frames recorded per pose
  double move_seconds = 2.0;     // unrecorded rest-to-rest move between poses
  double zero_wrench_fraction = 0.1;
  WrenchBounds bounds{};
  WrenchWorkspace workspace{};
  double freq = 100.0;
};

/// Moves between random tool-down poses; at each pose a random constant
/// wrench acts while the robot holds still and `hold_frames` frames are
/// recorded. Residuals come from `stack` run over the whole motion so its MD
/// state and window are realistic. Without a stack residuals equal the
/// measured currents minus the hysteresis-free model.
inline WrenchData gen_wrench_dataset(const RobotParams& params, const WrenchDataSpec& spec,
                                     std::uint64_t seed, const HierarchyStack* stack = nullptr) {
  if (spec.hold_frames == 0) throw Error("gen_wrench_dataset: hold_frames must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RobotSimulator sim(params, seed ^ 0xA5A5A5A5ULL);
  std::unique_ptr<StackRunner> runner;
  const ThresholdSet ts = stack ? stack->thresholds : ThresholdSet{};
  const std::size_t M = stack ? stack->frames() : 1;
  if (stack) runner = std::make_unique<StackRunner>(*stack, InferMode::sequential);
  MDState md(ts.size());
  std::vector<JointFrame> history;
  std::vector<const JointFrame*> win(M);

  WrenchData out;
  Vec6 q = random_tool_down_pose(params, spec.workspace, rng);
  sim.reset(q);
  double t = 0.0;
  const double h = 1.0 / spec.freq;

  auto step = [&](JointFrame f, const WrenchSample& w, bool record) {
    f.t = t;
    t += h;
    f.current = sim.step(f, external_to_joint_torque(w, f.q, params));
    md_update_inplace(md, f.dq, ts);
    history.push_back(f);
    if (history.size() > M) history.erase(history.begin());
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t back = M - 1 - m;
      win[m] = &history[history.size() > back ? history.size() - 1 - back : 0];
    }
    if (!record) return;
    const Vec6 est = runner ? runner->infer(win, md) : hysteresis_free_current(f, params);
    Vec6 r;
    for (std::size_t k = 0; k < kJoints; ++k) r[k] = f.current[k] - est[k];
    out.frames.push_back(f);
    out.residual.push_back(r);
    out.ideal_residual.push_back(ideal_wrench_residual(params, f.q, w));
    out.wrench.push_back(w);
  };

  while (out.size() < spec.n_samples) {
    const Vec6 target = random_tool_down_pose(params, spec.workspace, rng);
    const Vec6 via[] = {q, target};
    for (const auto& f : rest_to_rest_path(via, spec.move_seconds, spec.freq)) step(f, {}, false);
    q = target;
    WrenchSample w;
    if (u01(rng) >= spec.zero_wrench_fraction) {
      for (int i = 0; i < 3; ++i) w.force(i) = spec.bounds.force * u(rng);
      for (int i = 0; i < 3; ++i) w.moment(i) = spec.bounds.moment * u(rng);
    }
    JointFrame hold;
    hold.q = q;
    for (std::size_t n = 0; n < spec.hold_frames && out.size() < spec.n_samples; ++n)
      step(hold, w, true);
  }
  return out;
}

/// Noise-free samples with exact residuals J^T w / kappa at random
/// tool-down poses; no friction, no history.
inline WrenchData gen_ideal_wrench_samples(const RobotParams& params, std::size_t n,
                                           const WrenchBounds& bounds, const WrenchWorkspace& ws,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  WrenchData out;
  for (std::size_t i = 0; i < n; ++i) {
    JointFrame f;
    f.t = static_cast<double>(i);
    f.q = random_tool_down_pose(params, ws, rng);
    WrenchSample w;
    for (int c = 0; c < 3; ++c) w.force(c) = bounds.force * u(rng);
    for (int c = 0; c < 3; ++c) w.moment(c) = bounds.moment * u(rng);
    const Vec6 r = ideal_wrench_residual(params, f.q, w);
    f.current = r;
    out.frames.push_back(f);
    out.residual.push_back(r);
    out.ideal_residual.push_back(r);
    out.wrench.push_back(w);
  }
  return out;
}

inline void write_wrench_data(std::ostream& os, const WrenchData& d) {
  os << "t,fx,fy,fz,mx,my,mz";
  for (const char* p : {"q", "dq", "i", "r", "ri"})
    for (std::size_t k = 1; k <= kJoints; ++k) os << ',' << p << k;
  os << '\n';
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto& f = d.frames[n];
    os << format_value(f.t);
    const EVec6 w = d.wrench[n].stacked();
    for (int i = 0; i < 6; ++i) os << ',' << format_value(w(i));
    for (const auto* v : {&f.q, &f.dq, &f.current, &d.residual[n], &d.ideal_residual[n]})
      for (double x : *v) os << ',' << format_value(x);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Models

/// Network input: [residual or current, q, dq].
inline void wrench_input(const JointFrame& f, const Vec6& signal, double* out) {
  for (double v : signal) *out++ = v;
  for (double v : f.q) *out++ = v;
  for (double v : f.dq) *out++ = v;
}

inline constexpr Eigen::Index kWrenchInputDim = 18;

struct WrenchModel {
  WrenchMode mode = WrenchMode::compound;
  Standardizer in_norm;
  Standardizer out_norm;
  nn::DenseNet net;

  nlohmann::json to_json() const {
    return {{"format", "hrdl-wrench"},
            {"version", kFormatVersion},
            {"mode", to_string(mode)},
            {"input_norm", hrdl::to_json(in_norm)},
            {"output_norm", hrdl::to_json(out_norm)},
            {"network", net.to_json()}};
  }

  static WrenchModel from_json(const nlohmann::json& j) {
    if (j.at("format").get<std::string>() != "hrdl-wrench") throw Error("not a wrench model");
    WrenchModel m;
    m.mode = wrench_mode_from_string(j.at("mode").get<std::string>());
    m.in_norm = standardizer_from_json(j.at("input_norm"));
    m.out_norm = standardizer_from_json(j.at("output_norm"));
    m.net = nn::DenseNet::from_json(j.at("network"));
    if (m.net.input_dim() != kWrenchInputDim || m.net.output_dim() != 6)
      throw Error("wrench network must map 18 inputs to 6 outputs");
    return m;
  }
};

/// Which signal a mode reads from a dataset sample.
inline const Vec6& wrench_signal(const WrenchData& d, std::size_t n, WrenchMode mode) {
  return mode == WrenchMode::compound ? d.residual[n] : d.frames[n].current;
}

struct WrenchTrainSpec {
  std::vector<Eigen::Index> hidden{128, 128, 128};
  TrainSettings train{};
};

inline Trained<WrenchModel> train_wrench(const WrenchData& data, WrenchMode mode,
                                         const WrenchTrainSpec& spec) {
  if (data.size() == 0) throw Error("train_wrench: empty dataset");
  Trained<WrenchModel> out;
  auto& m = out.model;
  m.mode = mode;
  nn::Rng rng(spec.train.seed);
  m.net = nn::DenseNet(kWrenchInputDim, spec.hidden, 6, rng);
  const auto N = static_cast<Eigen::Index>(data.size());
  Matrix X(kWrenchInputDim, N), Y(6, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto i = static_cast<std::size_t>(n);
    wrench_input(data.frames[i], wrench_signal(data, i, mode), X.col(n).data());
    Y.col(n) = data.wrench[i].stacked();
  }
  if (spec.train.fit.epochs == 0) {
    m.in_norm = Standardizer::identity(kWrenchInputDim);
    m.out_norm = Standardizer::identity(6);
    return out;
  }
  // Hold out the last val_fraction of samples (whole poses stay together
  // apart from at most one boundary pose).
  const auto n_val = static_cast<Eigen::Index>(std::floor(spec.train.val_fraction * static_cast<double>(N)));
  const Eigen::Index n_tr = N - n_val;
  Matrix Xt = X.leftCols(n_tr), Yt = Y.leftCols(n_tr);
  m.in_norm = Standardizer::fit(Xt);
  m.out_norm = Standardizer::fit(Yt);
  auto norm_y = [&](Matrix& M) {
    M.colwise() -= m.out_norm.mean;
    M.array().colwise() /= m.out_norm.scale.array();
  };
  m.in_norm.apply(Xt);
  norm_y(Yt);
  Matrix Xv = X.rightCols(n_val), Yv = Y.rightCols(n_val);
  m.in_norm.apply(Xv);
  norm_y(Yv);
  out.log = nn::fit(m.net, Xt, Yt, n_val > 0 ? &Xv : nullptr, n_val > 0 ? &Yv : nullptr,
                    spec.train.fit, rng);
  return out;
}

inline WrenchSample estimate_wrench(const WrenchModel& m, WrenchMode mode, const JointFrame& f,
                                    const Vec6& residual_or_current) {
  if (mode != m.mode)
    throw Error(std::string("wrench model expects ") + to_string(m.mode) + " input, got " +
                to_string(mode));
  Vector x(kWrenchInputDim);
  wrench_input(f, residual_or_current, x.data());
  m.in_norm.apply(x.data());
  Vector y = m.net.infer(x);
  m.out_norm.invert(y.data());
  return WrenchSample::from_stacked(y);
}

/// Force and moment RMSE (per component, pooled over xyz) over a dataset.
struct WrenchError {
  double force_rmse = 0.0;
  double moment_rmse = 0.0;
};

inline WrenchError evaluate_wrench(const WrenchModel& m, const WrenchData& d) {
  if (d.size() == 0) throw Error("evaluate_wrench: empty dataset");
  double fe = 0.0, me = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto w = estimate_wrench(m, m.mode, d.frames[n], wrench_signal(d, n, m.mode));
    fe += (w.force - d.wrench[n].force).squaredNorm();
    me += (w.moment - d.wrench[n].moment).squaredNorm();
  }
  const double n3 = 3.0 * static_cast<double>(d.size());
  return {std::sqrt(fe / n3), std::sqrt(me / n3)};
}

// ---------------------------------------------------------------------------
// Task-space admittance

struct TaskDeadzone {
  double force = 5.0;    // N
  double moment = 0.5;   // Nm
  double linear_gain = 0.002;   // (m/s) per N beyond the deadzone
  double angular_gain = 0.02;   // (rad/s) per Nm beyond the deadzone
};

/// Twist (linear 0-2, angular 3-5) from an estimated wrench; zero while the
/// force and moment norms stay inside their deadzones.
inline EVec6 task_space_command(const WrenchSample& w, const TaskDeadzone& dz) {
  EVec6 v = EVec6::Zero();
  const double fn = w.force.norm();
  if (fn > dz.force) v.head<3>() = dz.linear_gain * (fn - dz.force) * w.force / fn;
  const double mn = w.moment.norm();
  if (mn > dz.moment) v.tail<3>() = dz.angular_gain * (mn - dz.moment) * w.moment / mn;
  return v;
}

}  // namespace hrdl
