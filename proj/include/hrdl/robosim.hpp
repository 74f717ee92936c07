#pragma once

// Synthetic six-joint manipulator. Maps joint trajectories (and optional
// end-effector wrenches) to motor currents in %Use, and supplies the
// kinematics used for wrench estimation.
//
// Kinematic chain (all links along the local z axis, joint j sits at the end
// of link j-1, the base joint at the origin):
//
//   joint   1  2  3  4  5  6
//   axis    z  y  y  z  y  z
//
// p_{j+1} = p_j + R_j * (0, 0, l_j), R_j = R_{j-1} * Rot(axis_j, q_j).
// At q = 0 the arm points straight up and the end effector sits at
// (0, 0, l_1 + ... + l_6). Joints 1, 4 and 6 rotate about axes that carry no
// gravity load in the current model below.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "hrdl/core.hpp"
#include "hrdl/mssim.hpp"

namespace hrdl {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using EVec6 = Eigen::Matrix<double, 6, 1>;

inline EVec6 to_eigen(const Vec6& v) { return Eigen::Map<const EVec6>(v.data()); }
inline Vec6 from_eigen(const EVec6& v) {
  Vec6 out;
  Eigen::Map<EVec6>(out.data()) = v;
  return out;
}

/// Gravity load coefficients (%Use):
///   g2 = shoulder * cos(q2) + elbow_on_shoulder * cos(q2 + q3)
///   g3 = elbow * cos(q2 + q3)
///   g5 = wrist * cos(q2 + q3 + q5)
struct GravityGains {
  double shoulder = 30.0;
  double elbow_on_shoulder = 15.0;
  double elbow = 15.0;
  double wrist = 5.0;
};

struct RobotParams {
  GravityGains gravity;
  Vec6 viscous{8.0, 10.0, 8.0, 4.0, 4.0, 3.0};   // %Use per rad/s
  Vec6 inertial{2.0, 3.0, 2.0, 0.5, 0.5, 0.3};   // %Use per rad/s^2
  std::array<MSBank, kJoints> ms_banks{default_bank(), default_bank(), default_bank(),
                                       default_bank(), default_bank(), default_bank()};
  double coupling_decay = 0.02;  // per frame, in [0, 1]
  double motion_eps = 1e-3;      // rad/s
  double noise_sigma = 1.0;      // %Use
  // Nm per %Use, from the ratio of torque to current deadzone boundaries
  // measured on a Denso VS060 (4.26/6, 4.86/6, 2.42/6, 1.01/9, 1.58/11, 0.84/11).
  Vec6 torque_per_use{4.26 / 6.0, 4.86 / 6.0, 2.42 / 6.0, 1.01 / 9.0, 1.58 / 11.0, 0.84 / 11.0};
  Vec6 link_lengths{0.34, 0.30, 0.26, 0.10, 0.10, 0.07};  // m

  void validate() const {
    if (!(coupling_decay >= 0.0 && coupling_decay <= 1.0))
      throw Error("coupling_decay must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw Error("noise_sigma must be >= 0");
    if (!(motion_eps >= 0.0)) throw Error("motion_eps must be >= 0");
    for (std::size_t k = 0; k < kJoints; ++k) {
      if (!(torque_per_use[k] > 0.0)) throw Error("torque_per_use must be > 0");
      if (!(link_lengths[k] > 0.0)) throw Error("link_lengths must be > 0");
      ms_banks[k].validate();
    }
  }
};

struct WrenchSample {
  Eigen::Vector3d force = Eigen::Vector3d::Zero();
  Eigen::Vector3d moment = Eigen::Vector3d::Zero();

  EVec6 stacked() const {
    EVec6 w;
    w << force, moment;
    return w;
  }
  static WrenchSample from_stacked(const EVec6& w) {
    return {w.head<3>(), w.tail<3>()};
  }
};

struct Pose {
  Eigen::Vector3d position;
  Eigen::Matrix3d rotation;
};

namespace detail {

inline constexpr int kJointAxis[kJoints] = {2, 1, 1, 2, 1, 2};  // z y y z y z

inline Eigen::Matrix3d axis_rotation(int axis, double angle) {
  const Eigen::Vector3d a = Eigen::Vector3d::Unit(axis);
  return Eigen::AngleAxisd(angle, a).toRotationMatrix();
}

struct ChainState {
  std::array<Eigen::Vector3d, kJoints> joint_pos;
  std::array<Eigen::Vector3d, kJoints> joint_axis;  // world frame
  Pose ee;
};

inline ChainState chain(const Vec6& q, const RobotParams& params) {
  ChainState s;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.joint_pos[j] = p;
    s.joint_axis[j] = R.col(kJointAxis[j]);
    R = R * axis_rotation(kJointAxis[j], q[j]);
    p = p + R * Eigen::Vector3d(0.0, 0.0, params.link_lengths[j]);
  }
  s.ee = {p, R};
  return s;
}

}  // namespace detail

inline Pose fk_pose(const Vec6& q, const RobotParams& params) {
  return detail::chain(q, params).ee;
}

/// Geometric Jacobian; rows 0-2 map to linear velocity, rows 3-5 to angular.
inline Mat6 jacobian(const Vec6& q, const RobotParams& params) {
  const auto s = detail::chain(q, params);
  Mat6 J;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const Eigen::Vector3d& a = s.joint_axis[j];
    J.block<3, 1>(0, j) = a.cross(s.ee.position - s.joint_pos[j]);
    J.block<3, 1>(3, j) = a;
  }
  return J;
}

/// tau = J^T w, with the moment taken about the end-effector point.
inline Vec6 external_to_joint_torque(const WrenchSample& w, const Vec6& q,
                                     const RobotParams& params) {
  return from_eigen(jacobian(q, params).transpose() * w.stacked());
}

inline Vec6 gravity_current(const Vec6& q, const RobotParams& p) {
  const auto& g = p.gravity;
  Vec6 out{};
  out[1] = g.shoulder * std::cos(q[1]) + g.elbow_on_shoulder * std::cos(q[1] + q[2]);
  out[2] = g.elbow * std::cos(q[1] + q[2]);
  out[4] = g.wrist * std::cos(q[1] + q[2] + q[4]);
  return out;
}

/// Gravity + viscous + inertial current, i.e. the model without hysteresis.
inline Vec6 hysteresis_free_current(const JointFrame& f, const RobotParams& p) {
  Vec6 out = gravity_current(f.q, p);
  for (std::size_t k = 0; k < kJoints; ++k)
    out[k] += p.viscous[k] * f.dq[k] + p.inertial[k] * f.ddq[k];
  return out;
}

/// Frame-by-frame current oracle. Owns the friction banks and the noise stream.
class RobotSimulator {
 public:
  RobotSimulator(RobotParams params, std::uint64_t seed)
      : params_(std::move(params)), rng_(seed), banks_(params_.ms_banks) {
    params_.validate();
  }

  const RobotParams& params() const { return params_; }

  /// Fresh (unloaded) banks positioned at q0.
  void reset(const Vec6& q0) {
    banks_ = params_.ms_banks;
    for (std::size_t k = 0; k < kJoints; ++k) banks_[k].reset(q0[k]);
    hysteresis_ = {};
  }

  /// Advances friction state to frame `f` and returns the measured current.
  /// `tau_ext` is the external joint torque in Nm.
  Vec6 step(const JointFrame& f, const Vec6& tau_ext = {}) {
    bool any_moving = false;
    std::array<bool, kJoints> moving{};
    for (std::size_t k = 0; k < kJoints; ++k) {
      moving[k] = std::abs(f.dq[k]) >= params_.motion_eps;
      any_moving = any_moving || moving[k];
    }
    for (std::size_t k = 0; k < kJoints; ++k) {
      ms_step(banks_[k], f.q[k]);
      if (!moving[k] && any_moving && params_.coupling_decay > 0.0)
        banks_[k].relax(f.q[k], params_.coupling_decay);
      hysteresis_[k] = banks_[k].force_at(f.q[k]);
    }
    ideal_ = hysteresis_free_current(f, params_);
    Vec6 out;
    for (std::size_t k = 0; k < kJoints; ++k) {
      ideal_[k] += hysteresis_[k] + tau_ext[k] / params_.torque_per_use[k];
      out[k] = ideal_[k] + (params_.noise_sigma > 0.0 ? params_.noise_sigma * normal_(rng_) : 0.0);
    }
    return out;
  }

  /// Hysteresis term of the last step.
  const Vec6& hysteresis() const { return hysteresis_; }
  /// Noise-free current of the last step.
  const Vec6& ideal_current() const { return ideal_; }
  const std::array<MSBank, kJoints>& banks() const { return banks_; }

 private:
  RobotParams params_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::array<MSBank, kJoints> banks_;
  Vec6 hysteresis_{};
  Vec6 ideal_{};
};

/// Fills in the currents of every frame. Banks start fresh at each trajectory.
/// `wrench_profile`, when given, holds one end-effector wrench per frame.
inline Dataset simulate_currents(const Dataset& traj, const RobotParams& params,
                                 const std::vector<WrenchSample>* wrench_profile,
                                 std::uint64_t seed) {
  if (!(traj.freq > 0.0)) throw Error("simulate_currents: frequency must be positive");
  if (wrench_profile && wrench_profile->size() != traj.size())
    throw Error("simulate_currents: wrench profile length mismatch");
  Dataset out = traj;
  RobotSimulator sim(params, seed);
  for (std::size_t i = 0; i < out.trajectory_count(); ++i) {
    const auto r = out.trajectory(i);
    sim.reset(out.frames[r.begin].q);
    for (std::size_t n = r.begin; n < r.end; ++n) {
      auto& f = out.frames[n];
      Vec6 tau{};
      if (wrench_profile) tau = external_to_joint_torque((*wrench_profile)[n], f.q, params);
      f.current = sim.step(f, tau);
    }
  }
  return out;
}

inline Dataset simulate_currents(const Dataset& traj, const RobotParams& params,
                                 std::uint64_t seed) {
  return simulate_currents(traj, params, nullptr, seed);
}

}  // namespace hrdl
