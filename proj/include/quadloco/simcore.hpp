#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <vector>

#include "quadloco/config.hpp"
#include "quadloco/rng.hpp"
#include "quadloco/terrain.hpp"

// Batched surrogate quadruped dynamics. Each robot is a rigid 6-DoF base
// with four massless 3-joint legs: joints follow PD-driven second-order
// dynamics, feet are point contacts against the heightfield through a
// spring-damper normal force and clamped-viscous Coulomb friction, and the
// resulting foot forces act on the base. All environments are independent,
// so stepping is embarrassingly parallel across the env dimension.

namespace quadloco::sim {

using Vec3 = Eigen::Vector3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

constexpr double kGravity = 9.81;
constexpr double kJointInertia = 0.05;   // lumped per-joint, kg m^2
constexpr double kJointDamping = 0.01;   // viscous, N m s/rad
constexpr double kContactStiffness = 2e4;  // N/m
constexpr double kContactDampingMax = 300.0;  // N s/m at restitution 0
constexpr double kTangentialGain = 300.0;     // N s/m, stiction approximation
// the base+contact dynamics integrate on finer internal steps than the
// joints: the viscous contact terms act on rotation through ~0.3 m lever
// arms and need the shorter step to stay inside the explicit stability limit
constexpr int kBaseMicroSteps = 4;
constexpr double kBlowupLimit = 1e6;

// leg order FL FR RL RR; sign of (x, y) hip placement in the base frame
constexpr std::array<std::array<double, 2>, 4> kLegSign = {
    {{+1.0, +1.0}, {+1.0, -1.0}, {-1.0, +1.0}, {-1.0, -1.0}}};

struct EnvPhysicsParams {
  double body_mass = 12.0;      // randomized base mass
  double link_mass_sum = 3.0;   // randomized lumped link mass
  Vec3 com_offset = Vec3::Zero();
  double payload = 0.0;
  double friction = 1.0;
  double restitution = 0.0;
  double motor_strength = 1.0;  // scales the nominal torque limit
  double kp = 20.0, kd = 0.5;
  int delay_steps = 0;          // whole control ticks
  Vec3 external_force = Vec3::Zero();  // body frame, N
  Vec3 inertia_diag = Vec3(0.11, 0.18, 0.25);

  double total_mass() const { return body_mass + link_mass_sum + payload; }
};

// Table 5 draws: uniform and independent per parameter; scale-type entries
// multiply the nominal value.
inline EnvPhysicsParams randomize(const RandomizationRanges& rr,
                                  const RobotDescription& robot,
                                  rng::Stream& rs) {
  EnvPhysicsParams p;
  const double body_scale = rs.uniform(rr.body_mass_scale.lo, rr.body_mass_scale.hi);
  p.body_mass = body_scale * robot.base_mass_nominal;
  double link_sum = 0;
  for (double m : robot.link_masses_nominal) link_sum += m;
  p.link_mass_sum = rs.uniform(rr.link_mass_scale.lo, rr.link_mass_scale.hi) * link_sum;
  for (int a = 0; a < 3; ++a)
    p.com_offset[a] = rs.uniform(rr.com_offset[a].lo, rr.com_offset[a].hi);
  p.payload = rs.uniform(rr.payload.lo, rr.payload.hi);
  p.friction = rs.uniform(rr.friction.lo, rr.friction.hi);
  p.restitution = rs.uniform(rr.restitution.lo, rr.restitution.hi);
  p.motor_strength = rs.uniform(rr.motor_strength_scale.lo, rr.motor_strength_scale.hi);
  p.kp = rs.uniform(rr.kp_scale.lo, rr.kp_scale.hi) * rr.kp_nominal;
  p.kd = rs.uniform(rr.kd_scale.lo, rr.kd_scale.hi) * rr.kd_nominal;
  int dlo = static_cast<int>(std::lround(rr.delay_steps.lo));
  int dhi = static_cast<int>(std::lround(rr.delay_steps.hi));
  p.delay_steps = dlo + static_cast<int>(rs.integer(static_cast<std::uint64_t>(dhi - dlo + 1)));
  for (int a = 0; a < 3; ++a)
    p.external_force[a] = rs.uniform(rr.external_force[a].lo, rr.external_force[a].hi);
  p.inertia_diag = body_scale * Vec3(robot.base_inertia_diag[0],
                                     robot.base_inertia_diag[1],
                                     robot.base_inertia_diag[2]);
  return p;
}

struct SimWorldState {
  int num_envs = 0;
  std::vector<Vec3> com_pos;    // CoM, world frame
  std::vector<Quat> quat;       // body -> world
  std::vector<Vec3> lin_vel;    // CoM, world frame
  std::vector<Vec3> ang_vel;    // body frame
  std::vector<Vec12> joint_pos, joint_vel, joint_acc, joint_torque;
  std::vector<std::array<Vec3, 4>> foot_pos, foot_vel;  // world frame
  std::vector<Vec3> gravity_body;  // unit gravity direction in the base frame
  std::vector<double> time;
  std::vector<std::uint8_t> blown_up;

  void resize(int n) {
    num_envs = n;
    com_pos.assign(n, Vec3::Zero());
    quat.assign(n, Quat::Identity());
    lin_vel.assign(n, Vec3::Zero());
    ang_vel.assign(n, Vec3::Zero());
    joint_pos.assign(n, Vec12::Zero());
    joint_vel.assign(n, Vec12::Zero());
    joint_acc.assign(n, Vec12::Zero());
    joint_torque.assign(n, Vec12::Zero());
    foot_pos.assign(n, {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
    foot_vel.assign(n, {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
    gravity_body.assign(n, Vec3(0, 0, -1));
    time.assign(n, 0.0);
    blown_up.assign(n, 0);
  }
};

// Analytic 3-joint chain (hip abduction about x, hip pitch and knee about y)
// in the base frame. q = (abd, hip, knee); optional 3x3 Jacobian d foot / d q.
inline Vec3 leg_forward_kinematics(const RobotDescription& robot, int leg,
                                   const Vec3& q, Mat3* jac = nullptr) {
  const double L1 = robot.leg_link_lengths[0];
  const double L2 = robot.leg_link_lengths[1];
  const double L3 = robot.leg_link_lengths[2];
  const double sy = kLegSign[leg][1];
  const double c1 = std::cos(q[0]), s1 = std::sin(q[0]);
  const double s2 = std::sin(q[1]), c2 = std::cos(q[1]);
  const double s23 = std::sin(q[1] + q[2]), c23 = std::cos(q[1] + q[2]);

  const Vec3 pre(-L2 * s2 - L3 * s23, sy * L1, -L2 * c2 - L3 * c23);
  Mat3 rx;
  rx << 1, 0, 0, 0, c1, -s1, 0, s1, c1;
  const Vec3 hip(kLegSign[leg][0] * robot.hip_offset_x,
                 sy * robot.hip_offset_y, 0.0);
  if (jac) {
    Mat3 drx;
    drx << 0, 0, 0, 0, -s1, -c1, 0, c1, -s1;
    jac->col(0) = drx * pre;
    jac->col(1) = rx * Vec3(-L2 * c2 - L3 * c23, 0, L2 * s2 + L3 * s23);
    jac->col(2) = rx * Vec3(-L3 * c23, 0, L3 * s23);
  }
  return hip + rx * pre;
}

// tau = kp (q_target - q) - kd q_dot, clamped to the randomized torque limit.
inline Vec12 apply_pd(const Vec12& q, const Vec12& dq, const Vec12& q_target,
                      const EnvPhysicsParams& p, const RobotDescription& robot) {
  const double lim = p.motor_strength * robot.motor_torque_nominal;
  Vec12 tau = p.kp * (q_target - q) - p.kd * dq;
  return tau.cwiseMax(-lim).cwiseMin(lim);
}

// Spring-damper normal force with clamped-viscous Coulomb friction. `depth`
// is the vertical penetration (positive in contact), `v_foot` the world-frame
// foot velocity. Normal force is never negative; the tangential magnitude is
// bounded by friction * normal.
inline Vec3 contact_force(double depth, const Vec3& v_foot, double friction,
                          double restitution) {
  if (depth <= 0) return Vec3::Zero();
  const double d_c = kContactDampingMax * (1.0 - restitution);
  double fn = kContactStiffness * depth - d_c * v_foot.z();
  if (fn < 0) fn = 0;
  Vec3 f(0, 0, fn);
  const double slip = std::hypot(v_foot.x(), v_foot.y());
  if (slip > 1e-9) {
    const double ft = std::min(friction * fn, kTangentialGain * slip);
    f.x() = -ft * v_foot.x() / slip;
    f.y() = -ft * v_foot.y() / slip;
  }
  return f;
}

// Recomputes world-frame foot positions and velocities from the current
// base and joint state.
inline void refresh_feet(SimWorldState& st, int i, const EnvPhysicsParams& p,
                         const RobotDescription& robot) {
  const Mat3 R = st.quat[i].toRotationMatrix();
  const Vec3 base_origin = st.com_pos[i] - R * p.com_offset;
  const Vec3 omega_w = R * st.ang_vel[i];
  for (int leg = 0; leg < 4; ++leg) {
    Mat3 J;
    const Vec3 q = st.joint_pos[i].segment<3>(3 * leg);
    const Vec3 dq = st.joint_vel[i].segment<3>(3 * leg);
    const Vec3 p_body = leg_forward_kinematics(robot, leg, q, &J);
    const Vec3 p_w = base_origin + R * p_body;
    st.foot_pos[i][leg] = p_w;
    st.foot_vel[i][leg] =
        st.lin_vel[i] + omega_w.cross(p_w - st.com_pos[i]) + R * (J * dq);
  }
}

// One semi-implicit Euler substep for env i. The effective joint target must
// already account for the action delay. Joints integrate at dt; the base and
// contacts integrate at dt / kBaseMicroSteps against the frozen leg pose.
inline void step_env(SimWorldState& st, int i, const EnvPhysicsParams& p,
                     const Vec12& q_target, const HeightField& field,
                     const RobotDescription& robot, double dt) {
  if (st.blown_up[i]) return;

  // joint dynamics (massless legs: contacts do not load the joints)
  const Vec12 tau = apply_pd(st.joint_pos[i], st.joint_vel[i], q_target, p, robot);
  const Vec12 ddq = (tau - kJointDamping * st.joint_vel[i]) / kJointInertia;
  st.joint_torque[i] = tau;
  st.joint_acc[i] = ddq;
  st.joint_vel[i] += ddq * dt;
  st.joint_pos[i] += st.joint_vel[i] * dt;

  // leg geometry in the base frame, fixed for the micro-steps
  std::array<Vec3, 4> r_body, v_joint;
  bool joints_ok = true;
  for (int leg = 0; leg < 4; ++leg) {
    Mat3 J;
    const Vec3 q = st.joint_pos[i].segment<3>(3 * leg);
    r_body[static_cast<size_t>(leg)] =
        leg_forward_kinematics(robot, leg, q, &J);
    v_joint[static_cast<size_t>(leg)] = J * st.joint_vel[i].segment<3>(3 * leg);
    joints_ok = joints_ok && r_body[static_cast<size_t>(leg)].allFinite();
  }
  if (!joints_ok) {
    st.blown_up[i] = 1;
    return;
  }

  const double M = p.total_mass();
  const double h = dt / kBaseMicroSteps;
  for (int m = 0; m < kBaseMicroSteps; ++m) {
    const Mat3 R = st.quat[i].toRotationMatrix();
    const Vec3 base_origin = st.com_pos[i] - R * p.com_offset;
    const Vec3 omega_w = R * st.ang_vel[i];

    Vec3 force = Vec3(0, 0, -kGravity * M) + R * p.external_force;
    Vec3 torque = (base_origin - st.com_pos[i]).cross(R * p.external_force);
    for (int leg = 0; leg < 4; ++leg) {
      const Vec3 pf = base_origin + R * r_body[static_cast<size_t>(leg)];
      const Vec3 vf = st.lin_vel[i] + omega_w.cross(pf - st.com_pos[i]) +
                      R * v_joint[static_cast<size_t>(leg)];
      if (!pf.allFinite()) {
        st.blown_up[i] = 1;
        return;
      }
      const double depth = field.height_at_clamped(pf.x(), pf.y()) - pf.z();
      if (depth <= 0) continue;
      const Vec3 f = contact_force(depth, vf, p.friction, p.restitution);
      force += f;
      torque += (pf - st.com_pos[i]).cross(f);
    }

    st.lin_vel[i] += force * (h / M);
    st.com_pos[i] += st.lin_vel[i] * h;

    const Vec3 tau_body = R.transpose() * torque;
    const Vec3 Iw = p.inertia_diag.cwiseProduct(st.ang_vel[i]);
    const Vec3 dw =
        (tau_body - st.ang_vel[i].cross(Iw)).cwiseQuotient(p.inertia_diag);
    st.ang_vel[i] += dw * h;
    const Vec3 dtheta = st.ang_vel[i] * h;
    const double angle = dtheta.norm();
    if (angle > 1e-12)
      st.quat[i] = st.quat[i] * Quat(Eigen::AngleAxisd(angle, dtheta / angle));
    st.quat[i].normalize();
  }

  st.gravity_body[i] = st.quat[i].toRotationMatrix().transpose() * Vec3(0, 0, -1);
  st.time[i] += dt;
  refresh_feet(st, i, p, robot);

  // blow-up detection
  auto bad = [](double v) { return !std::isfinite(v) || std::abs(v) > kBlowupLimit; };
  bool blown = false;
  for (int a = 0; a < 3; ++a)
    blown = blown || bad(st.com_pos[i][a]) || bad(st.lin_vel[i][a]) ||
            bad(st.ang_vel[i][a]);
  for (int j = 0; j < 12 && !blown; ++j)
    blown = bad(st.joint_pos[i][j]) || bad(st.joint_vel[i][j]);
  if (blown) st.blown_up[i] = 1;
}

// Base-frame origin (the point the hips are measured from).
inline Vec3 base_origin(const SimWorldState& st, int i, const EnvPhysicsParams& p) {
  return st.com_pos[i] - st.quat[i].toRotationMatrix() * p.com_offset;
}

// Base linear velocity expressed in the base frame (the quantity the
// velocity head regresses and the tracking terms use).
inline Vec3 base_lin_vel_body(const SimWorldState& st, int i) {
  return st.quat[i].toRotationMatrix().transpose() * st.lin_vel[i];
}

}  // namespace quadloco::sim
