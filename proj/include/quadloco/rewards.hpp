#pragma once

#include <array>
#include <cmath>

#include "quadloco/simcore.hpp"

// Per-step reward terms and the termination signal. Velocities, angular
// rates and gravity all live in the base frame, heights are measured
// relative to the local terrain, so the total is invariant under a yaw
// rotation of the world.

namespace quadloco::rewards {

constexpr double kTrackingSigma = 0.25;
constexpr int kNumTerms = 11;

constexpr std::array<double, kNumTerms> kWeights = {
    1.0,      // 0 linear velocity tracking
    0.5,      // 1 angular velocity tracking
    -2.0,     // 2 vertical velocity
    -0.05,    // 3 roll/pitch angular velocity
    -0.2,     // 4 orientation (horizontal gravity components)
    -2.5e-7,  // 5 joint accelerations
    -2e-5,    // 6 joint power
    -1.0,     // 7 body height
    -0.01,    // 8 foot clearance
    -0.01,    // 9 action rate
    -0.01,    // 10 smoothness
};

inline const char* term_name(int k) {
  constexpr const char* names[kNumTerms] = {
      "lin_track", "ang_track",  "lin_vel_z",   "ang_vel_xy",
      "orientation", "joint_acc", "joint_power", "body_height",
      "foot_clearance", "action_rate", "smoothness"};
  return names[k];
}

struct RewardBreakdown {
  std::array<double, kNumTerms> terms{};  // raw r_i, before weights
  double total = 0;                       // sum w_i r_i * policy_dt
};

inline RewardBreakdown compute(const sim::SimWorldState& st, int i,
                               const sim::EnvPhysicsParams& params,
                               const RobotDescription& robot,
                               const HeightField& field,
                               const Eigen::Vector3d& cmd,
                               const sim::Vec12& action,
                               const sim::Vec12& prev_action,
                               const sim::Vec12& prev_prev_action,
                               double policy_dt) {
  RewardBreakdown rb;
  const Eigen::Matrix3d R = st.quat[i].toRotationMatrix();
  const Eigen::Vector3d v_body = R.transpose() * st.lin_vel[i];
  const Eigen::Vector3d& w_body = st.ang_vel[i];
  const Eigen::Vector3d& g_body = st.gravity_body[i];

  const double lin_err2 = (cmd.head<2>() - v_body.head<2>()).squaredNorm();
  rb.terms[0] = std::exp(-lin_err2 / kTrackingSigma);
  const double ang_err = cmd[2] - w_body[2];
  rb.terms[1] = std::exp(-ang_err * ang_err / kTrackingSigma);
  rb.terms[2] = v_body[2] * v_body[2];
  rb.terms[3] = w_body.head<2>().squaredNorm();
  rb.terms[4] = g_body.head<2>().squaredNorm();
  rb.terms[5] = st.joint_acc[i].squaredNorm();
  double power = 0;
  for (int j = 0; j < 12; ++j)
    power += std::abs(st.joint_torque[i][j] * st.joint_vel[i][j]);
  rb.terms[6] = power;

  const Eigen::Vector3d base = sim::base_origin(st, i, params);
  const double ground = field.height_at_clamped(base.x(), base.y());
  const double dh = robot.base_height_target - (base.z() - ground);
  rb.terms[7] = dh * dh;

  double clearance = 0;
  for (int leg = 0; leg < 4; ++leg) {
    const Eigen::Vector3d& pf = st.foot_pos[i][leg];
    const double local = field.height_at_clamped(pf.x(), pf.y());
    const double pz = pf.z() - local;  // clearance above local terrain
    const Eigen::Vector3d vf_body = R.transpose() * st.foot_vel[i][leg];
    const double speed_xy = vf_body.head<2>().norm();
    const double d = robot.foot_clearance_target - pz;
    clearance += d * d * speed_xy;
  }
  rb.terms[8] = clearance;
  rb.terms[9] = (action - prev_action).squaredNorm();
  rb.terms[10] = (action - 2.0 * prev_action + prev_prev_action).squaredNorm();

  double total = 0;
  for (int k = 0; k < kNumTerms; ++k) total += kWeights[k] * rb.terms[k];
  rb.total = total * policy_dt;
  return rb;
}

constexpr double kMinBaseClearance = 0.05;  // m
constexpr double kMaxTiltCos = 0.17364817766693041;  // cos(80 deg)

inline bool terminated(const sim::SimWorldState& st, int i,
                       const sim::EnvPhysicsParams& params,
                       const HeightField& field) {
  if (st.blown_up[i]) return true;
  const Eigen::Vector3d base = sim::base_origin(st, i, params);
  const double clearance =
      base.z() - field.height_at_clamped(base.x(), base.y());
  if (clearance < kMinBaseClearance) return true;
  // upright means gravity_body ~ (0,0,-1); tilt angle above 80 deg terminates
  return -st.gravity_body[i].z() < kMaxTiltCos;
}

}  // namespace quadloco::rewards
