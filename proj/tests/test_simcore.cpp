#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "quadloco/simcore.hpp"

using namespace quadloco;
using Catch::Approx;
using sim::Vec12;
using sim::Vec3;

namespace {

RandomizationRanges degenerate_ranges() {
  RandomizationRanges r;
  r.body_mass_scale = {1, 1};
  r.link_mass_scale = {1, 1};
  for (auto& iv : r.com_offset) iv = {0, 0};
  r.payload = {0, 0};
  r.friction = {1, 1};
  r.restitution = {0, 0};
  r.motor_strength_scale = {1, 1};
  r.kp_scale = {1, 1};
  r.kd_scale = {1, 1};
  r.init_joint_scale = {1, 1};
  r.delay_steps = {0, 0};
  for (auto& iv : r.external_force) iv = {0, 0};
  return r;
}

HeightField flat_field() {
  TerrainConfig cfg;
  cfg.tile_rows = 1;
  cfg.tile_cols = 1;
  cfg.proportions = {1, 0, 0, 0};  // level-0 slope = flat
  return build_field(cfg, 0);
}

Vec12 nominal_joints(const RobotDescription& r) {
  Vec12 q;
  for (int j = 0; j < 12; ++j) q[j] = r.nominal_joint_positions[j];
  return q;
}

// places the robot standing on flat ground with the static penetration
void spawn_standing(sim::SimWorldState& st, int i, const sim::EnvPhysicsParams& p,
                    const RobotDescription& robot, double x = 5, double y = 5) {
  Vec12 q = nominal_joints(robot);
  st.joint_pos[i] = q;
  double foot_z = 1e30;
  for (int leg = 0; leg < 4; ++leg)
    foot_z = std::min(foot_z,
                      sim::leg_forward_kinematics(robot, leg, q.segment<3>(3 * leg)).z());
  const double settle = p.total_mass() * sim::kGravity / (4 * sim::kContactStiffness);
  st.com_pos[i] = Vec3(x, y, -foot_z - settle) + p.com_offset;
  sim::refresh_feet(st, i, p, robot);
}

}  // namespace

TEST_CASE("randomize: degenerate ranges return the nominals exactly") {
  RobotDescription robot;
  rng::Stream rs(1, rng::Tag::Test);
  auto p = sim::randomize(degenerate_ranges(), robot, rs);
  CHECK(p.body_mass == robot.base_mass_nominal);
  CHECK(p.link_mass_sum == Approx(3.0));
  CHECK(p.payload == 0.0);
  CHECK(p.friction == 1.0);
  CHECK(p.kp == 20.0);
  CHECK(p.kd == 0.5);
  CHECK(p.motor_strength == 1.0);
  CHECK(p.delay_steps == 0);
  CHECK(p.external_force.norm() == 0.0);
}

TEST_CASE("randomize: empirical ranges and means match the tabled intervals") {
  RobotDescription robot;
  RandomizationRanges rr;  // defaults
  rng::Stream rs(2, rng::Tag::Test);
  double fmin = 1e9, fmax = -1e9, fsum = 0;
  double kpmin = 1e9, kpmax = -1e9;
  std::array<int, 4> delay_hist{};
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    auto p = sim::randomize(rr, robot, rs);
    fmin = std::min(fmin, p.friction);
    fmax = std::max(fmax, p.friction);
    fsum += p.friction;
    kpmin = std::min(kpmin, p.kp);
    kpmax = std::max(kpmax, p.kp);
    REQUIRE(p.delay_steps >= 0);
    REQUIRE(p.delay_steps <= 3);
    delay_hist[static_cast<size_t>(p.delay_steps)] += 1;
    REQUIRE(std::abs(p.external_force.x()) <= 30.0);
  }
  CHECK(fmin >= 0.2);
  CHECK(fmax <= 2.75);
  CHECK(fsum / n == Approx(1.475).margin(0.02));
  CHECK(kpmin >= 16.0);
  CHECK(kpmax <= 24.0);
  for (int d = 0; d < 4; ++d)  // all whole-tick delays occur
    CHECK(delay_hist[static_cast<size_t>(d)] > n / 10);
}

TEST_CASE("pd law: zero error zero rate gives zero torque") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  Vec12 q = nominal_joints(robot);
  Vec12 tau = sim::apply_pd(q, Vec12::Zero(), q, p, robot);
  CHECK(tau.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pd law: hand-evaluated gain and saturation") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  p.kp = 20.0;
  p.kd = 0.5;
  Vec12 q = Vec12::Zero(), tgt = Vec12::Zero();
  tgt[3] = 0.1;
  Vec12 tau = sim::apply_pd(q, Vec12::Zero(), tgt, p, robot);
  CHECK(tau[3] == Approx(2.0));

  tgt[3] = 100.0;  // kp * 100 >> clamp
  tau = sim::apply_pd(q, Vec12::Zero(), tgt, p, robot);
  CHECK(tau[3] == Approx(p.motor_strength * robot.motor_torque_nominal));
  tgt[3] = -100.0;
  tau = sim::apply_pd(q, Vec12::Zero(), tgt, p, robot);
  CHECK(tau[3] == Approx(-p.motor_strength * robot.motor_torque_nominal));
}

TEST_CASE("forward kinematics: straight leg hangs below the hip") {
  RobotDescription robot;  // thigh = calf = 0.2
  for (int leg = 0; leg < 4; ++leg) {
    Vec3 p = sim::leg_forward_kinematics(robot, leg, Vec3::Zero());
    CHECK(p.z() == Approx(-0.4));
    CHECK(p.x() == Approx(sim::kLegSign[leg][0] * robot.hip_offset_x));
    CHECK(p.y() == Approx(sim::kLegSign[leg][1] *
                          (robot.hip_offset_y + robot.leg_link_lengths[0])));
  }
}

TEST_CASE("forward kinematics: right-angle knee folds the calf horizontal") {
  RobotDescription robot;
  Vec3 q(0, 0, M_PI / 2);
  Vec3 p = sim::leg_forward_kinematics(robot, 0, q);
  // planar two-link: thigh straight down 0.2 m, calf horizontal 0.2 m behind
  CHECK(p.z() == Approx(-0.2 + robot.hip_offset_x * 0));
  CHECK(p.z() - 0.0 == Approx(-0.2));
  CHECK(p.x() - robot.hip_offset_x == Approx(-0.2));
}

TEST_CASE("analytic jacobian matches central differences") {
  RobotDescription robot;
  rng::Stream rs(5, rng::Tag::Test);
  for (int rep = 0; rep < 50; ++rep) {
    const int leg = static_cast<int>(rs.integer(4));
    Vec3 q(rs.uniform(-1.0, 1.0), rs.uniform(-1.5, 1.5), rs.uniform(-2.4, -0.3));
    sim::Mat3 jac;
    sim::leg_forward_kinematics(robot, leg, q, &jac);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Vec3 qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      Vec3 fd = (sim::leg_forward_kinematics(robot, leg, qp) -
                 sim::leg_forward_kinematics(robot, leg, qm)) /
                (2 * h);
      REQUIRE((fd - jac.col(j)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("contact force: clamps and friction cone") {
  rng::Stream rs(6, rng::Tag::Test);
  CHECK(sim::contact_force(-0.01, Vec3::Zero(), 1.0, 0.0).norm() == 0.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const double depth = rs.uniform(-0.01, 0.05);
    const Vec3 v(rs.normal(), rs.normal(), rs.normal());
    const double mu = rs.uniform(0.0, 3.0);
    const double rest = rs.uniform(0.0, 1.0);
    Vec3 f = sim::contact_force(depth, v, mu, rest);
    REQUIRE(f.z() >= 0.0);
    REQUIRE(std::hypot(f.x(), f.y()) <= mu * f.z() + 1e-9);
  }
  // frictionless limit: no tangential force at all
  Vec3 f = sim::contact_force(0.01, Vec3(1.0, 0.5, 0.0), 0.0, 0.0);
  CHECK(f.x() == 0.0);
  CHECK(f.y() == 0.0);
  CHECK(f.z() == Approx(sim::kContactStiffness * 0.01));
}

TEST_CASE("free fall: vertical acceleration is exactly -g") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  st.com_pos[0] = Vec3(5, 5, 5);  // far above ground
  st.joint_pos[0] = nominal_joints(robot);
  const double dt = 0.005;
  const double v0 = st.lin_vel[0].z();
  sim::step_env(st, 0, p, nominal_joints(robot), field, robot, dt);
  const double a = (st.lin_vel[0].z() - v0) / dt;
  CHECK(a == Approx(-9.81).epsilon(1e-12));
}

TEST_CASE("standing at rest stays put: contact springs balance gravity") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  spawn_standing(st, 0, p, robot);
  const double z0 = st.com_pos[0].z();
  for (int k = 0; k < 100; ++k)
    sim::step_env(st, 0, p, nominal_joints(robot), field, robot, 0.005);
  CHECK(std::abs(st.com_pos[0].z() - z0) < 0.01);
  CHECK(st.lin_vel[0].norm() < 0.05);
  CHECK(st.blown_up[0] == 0);
}

TEST_CASE("frictionless ground: a lateral push just slides the base") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  p.friction = 0.0;
  p.external_force = Vec3(10, 0, 0);  // constant body-frame push
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  spawn_standing(st, 0, p, robot);
  const double x0 = st.com_pos[0].x();
  for (int k = 0; k < 200; ++k)
    sim::step_env(st, 0, p, nominal_joints(robot), field, robot, 0.005);
  // base slides: x displacement close to 0.5 * (F/m) t^2, nothing resists
  const double t = 200 * 0.005;
  const double expected = 0.5 * (10.0 / p.total_mass()) * t * t;
  CHECK(st.com_pos[0].x() - x0 == Approx(expected).epsilon(0.05));
}

TEST_CASE("energy drift stays below 1% without contacts or damping sources") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  p.kp = 0.0;  // zero torque
  p.kd = 0.0;
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  st.com_pos[0] = Vec3(5, 5, 200.0);  // stays airborne for the whole horizon
  st.lin_vel[0] = Vec3(1.0, -0.5, 2.0);
  st.ang_vel[0] = Vec3(0.3, -0.2, 0.4);
  st.joint_pos[0] = nominal_joints(robot);
  const double M = p.total_mass();
  auto energy = [&] {
    const Vec3 Iw = p.inertia_diag.cwiseProduct(st.ang_vel[0]);
    return 0.5 * M * st.lin_vel[0].squaredNorm() +
           M * sim::kGravity * st.com_pos[0].z() +
           0.5 * st.ang_vel[0].dot(Iw);
  };
  const double e0 = energy();
  for (int k = 0; k < 1000; ++k)
    sim::step_env(st, 0, p, nominal_joints(robot), field, robot, 0.005);
  CHECK(std::abs(energy() - e0) / std::abs(e0) < 0.01);
}

TEST_CASE("quaternion norm stays within 1e-6 over long horizons") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  spawn_standing(st, 0, p, robot);
  st.ang_vel[0] = Vec3(0.5, 0.3, -0.7);
  Vec12 tgt = nominal_joints(robot);
  for (int k = 0; k < 100000; ++k) {
    sim::step_env(st, 0, p, tgt, field, robot, 0.005);
    if (k % 10000 == 0)
      REQUIRE(std::abs(st.quat[0].norm() - 1.0) < 1e-6);
  }
  CHECK(std::abs(st.quat[0].norm() - 1.0) < 1e-6);
  CHECK(std::abs(st.gravity_body[0].norm() - 1.0) < 1e-6);
}

TEST_CASE("identical inputs give bit-identical trajectories") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  p.external_force = Vec3(5, -3, 0);
  HeightField field = flat_field();
  auto run = [&] {
    sim::SimWorldState st;
    st.resize(1);
    spawn_standing(st, 0, p, robot);
    Vec12 tgt = nominal_joints(robot);
    tgt[1] += 0.3;
    for (int k = 0; k < 500; ++k)
      sim::step_env(st, 0, p, tgt, field, robot, 0.005);
    return st;
  };
  auto a = run(), b = run();
  CHECK(std::memcmp(a.com_pos[0].data(), b.com_pos[0].data(), 24) == 0);
  CHECK(std::memcmp(a.joint_pos[0].data(), b.joint_pos[0].data(), 96) == 0);
  CHECK(std::memcmp(a.quat[0].coeffs().data(), b.quat[0].coeffs().data(), 32) == 0);
}

TEST_CASE("blow-up detection flags the env for reset") {
  RobotDescription robot;
  sim::EnvPhysicsParams p;
  HeightField field = flat_field();
  sim::SimWorldState st;
  st.resize(1);
  spawn_standing(st, 0, p, robot);
  st.lin_vel[0] = Vec3(1e7, 0, 0);  // forced out of range
  sim::step_env(st, 0, p, nominal_joints(robot), field, robot, 0.005);
  CHECK(st.blown_up[0] == 1);
  // once flagged the env freezes until reset
  auto keep = st.com_pos[0];
  sim::step_env(st, 0, p, nominal_joints(robot), field, robot, 0.005);
  CHECK(st.com_pos[0] == keep);
}
