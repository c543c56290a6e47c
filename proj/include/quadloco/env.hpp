#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "quadloco/config.hpp"
#include "quadloco/nn.hpp"
#include "quadloco/parallel.hpp"
#include "quadloco/rewards.hpp"
#include "quadloco/rng.hpp"
#include "quadloco/simcore.hpp"
#include "quadloco/terrain.hpp"

// RL-facing vectorized environment: assembles actor/critic observations,
// maps actions to joint targets, runs the terrain and command curricula,
// resamples commands, resets episodes. The actor observation is strictly
// proprioceptive (command, joint state, IMU, last action); terrain, friction,
// forces and height scans only ever appear in the critic observation.

namespace quadloco {

constexpr int kObsDim = 45;
constexpr int kNumActions = 12;
constexpr int kMaxDelayTicks = 4;  // queue slots for delays 0..3
constexpr float kObsClip = 100.0f;

using MatX = nn::Mat<float>;  // row-major batches, one env per row

struct EnvStepOut {
  Eigen::VectorXf reward;
  std::vector<std::uint8_t> terminated, truncated;
  MatX next_obs;         // successor frame, before any auto-reset
  MatX next_critic_obs;  // for time-limit bootstrapping
  MatX true_vel;         // post-step base velocity in the base frame
};

// Level transition on episode end: promote when the mean per-step linear
// tracking term reaches the threshold (graduating from the top level to a
// uniformly random one), otherwise demote when the robot failed to travel
// half a tile. Deterministic given the episode statistics.
inline int curriculum_next_level(int level, double mean_tracking,
                                 double distance, const CurriculumConfig& cc,
                                 double tile_side, rng::Stream& graduation_rng) {
  if (mean_tracking >= cc.promote_tracking_threshold) {
    if (level >= cc.max_level)
      level = static_cast<int>(graduation_rng.integer(
          static_cast<std::uint64_t>(cc.max_level) + 1));
    else
      level += 1;
  } else if (distance < 0.5 * tile_side) {
    level -= 1;
  }
  return std::clamp(level, 0, cc.max_level);
}

struct EnvIterationStats {
  std::array<double, rewards::kNumTerms> term_sums{};
  double reward_sum = 0;
  double nlts_sum = 0, nats_sum = 0;
  long steps = 0;
  std::vector<double> finished_returns;
  std::vector<int> finished_levels;
  void clear() { *this = EnvIterationStats{}; }
};

class VecEnv {
 public:
  // track_critic_history keeps a ring of privileged frames as well (used by
  // the oracle ablation, whose actor sees a full-observation history)
  VecEnv(const TrainConfig& cfg, ThreadPool* pool,
         bool track_critic_history = false)
      : cfg_(cfg), pool_(pool), field_(build_field(cfg.terrain, cfg.seed)),
        track_critic_history_(track_critic_history) {
    n_ = cfg.num_envs;
    hist_len_ = cfg.him.history_len;
    hist_dim_ = kObsDim * (hist_len_ + 1);
    height_pts_ = cfg.env.height_points_per_axis * cfg.env.height_points_per_axis;
    critic_vel_dims_ = cfg.env.critic_sees_velocity ? 3 : 0;
    critic_dim_ = kObsDim + critic_vel_dims_ + 3 + height_pts_;
    episode_len_ = cfg.episode_length_steps();
    push_steps_ = cfg.env.push_interval_s > 0
                      ? std::max(1, static_cast<int>(std::lround(
                                        cfg.env.push_interval_s / cfg.policy_dt())))
                      : 0;

    state_.resize(n_);
    params_.assign(n_, sim::EnvPhysicsParams{});
    command_.assign(n_, Eigen::Vector3d::Zero());
    level_.assign(n_, 0);
    terrain_row_.assign(n_, 0);
    episode_step_.assign(n_, 0);
    episode_id_.assign(n_, -1);
    target_queue_.assign(static_cast<size_t>(n_) * kMaxDelayTicks,
                         sim::Vec12::Zero());
    last_action_.assign(n_, sim::Vec12::Zero());
    prev_action_.assign(n_, sim::Vec12::Zero());
    lin_track_sum_.assign(n_, 0.0);
    episode_return_.assign(n_, 0.0);
    spawn_xy_.assign(n_, Eigen::Vector2d::Zero());
    cmd_scale_.assign(n_, cfg.curriculum.command_curriculum
                              ? cfg.curriculum.command_scale_init
                              : 1.0);
    hist_ring_.assign(static_cast<size_t>(n_) * hist_len_ * kObsDim, 0.0f);
    if (track_critic_history_)
      critic_ring_.assign(static_cast<size_t>(n_) * hist_len_ * critic_dim_, 0.0f);
    nlts_acc_.assign(n_, 0.0);
    nats_acc_.assign(n_, 0.0);
    obs_ = MatX::Zero(n_, kObsDim);
    critic_obs_ = MatX::Zero(n_, critic_dim_);
    for (int i = 0; i < n_; ++i) terrain_row_[i] = i % cfg.terrain.tile_rows;
    for (int i = 0; i < n_; ++i) reset_env(i);
  }

  int num_envs() const { return n_; }
  int obs_dim() const { return kObsDim; }
  int hist_dim() const { return hist_dim_; }
  int critic_dim() const { return critic_dim_; }
  const HeightField& field() const { return field_; }
  const TrainConfig& config() const { return cfg_; }

  const MatX& obs() const { return obs_; }
  const MatX& critic_obs() const { return critic_obs_; }

  // Window o_{t-H..t}: H ring frames (oldest first) then the current frame.
  void write_history(MatX& out) const {
    out.resize(n_, hist_dim_);
    for (int i = 0; i < n_; ++i) write_history_row(i, out.row(i).data());
  }

  int critic_hist_dim() const { return critic_dim_ * (hist_len_ + 1); }
  void write_critic_history(MatX& out) const {
    out.resize(n_, critic_hist_dim());
    for (int i = 0; i < n_; ++i) {
      const float* ring = &critic_ring_[static_cast<size_t>(i) * hist_len_ * critic_dim_];
      float* o = out.row(i).data();
      std::copy(ring, ring + hist_len_ * critic_dim_, o);
      std::copy(critic_obs_.row(i).data(), critic_obs_.row(i).data() + critic_dim_,
                o + hist_len_ * critic_dim_);
    }
  }

  TerrainType env_terrain_type(int i) const {
    return field_.tile(terrain_row_[i], 0).type;
  }
  int env_level(int i) const { return level_[i]; }
  double mean_level() const {
    double s = 0;
    for (int l : level_) s += l;
    return s / n_;
  }

  // --- evaluation hooks -----------------------------------------------
  void set_curriculum_enabled(bool on) { curriculum_enabled_ = on; }
  void set_auto_resample(bool on) { auto_resample_ = on; }
  void set_command_sampler(std::function<Eigen::Vector3d(int, rng::Stream&)> f) {
    command_sampler_ = std::move(f);
  }
  void force_terrain_row(int i, int row) { terrain_row_[i] = row; }
  void force_level(int i, int level) {
    level_[i] = std::clamp(level, 0, cfg_.curriculum.max_level);
  }
  void reset_all() {
    for (int i = 0; i < n_; ++i) reset_env(i);
  }
  // rows of the field carrying a given family (every row has one type)
  std::vector<int> rows_of_type(TerrainType t) const {
    std::vector<int> rows;
    for (int r = 0; r < cfg_.terrain.tile_rows; ++r)
      if (field_.tile(r, 0).type == t) rows.push_back(r);
    return rows;
  }

  EnvIterationStats& stats() { return stats_; }

  EnvStepOut step(const MatX& actions) {
    EnvStepOut out;
    out.reward.resize(n_);
    out.terminated.assign(n_, 0);
    out.truncated.assign(n_, 0);
    out.next_obs.resize(n_, kObsDim);
    out.next_critic_obs.resize(n_, critic_dim_);
    out.true_vel.resize(n_, 3);

    std::vector<std::array<double, rewards::kNumTerms>> term_acc(
        static_cast<size_t>((n_ + kEnvChunk - 1) / kEnvChunk));
    for (auto& a : term_acc) a.fill(0.0);

    auto run = [&](long b, long e, long chunk) {
      for (long i = b; i < e; ++i)
        step_one(static_cast<int>(i), actions, out,
                 term_acc[static_cast<size_t>(chunk)]);
    };
    if (pool_)
      pool_->for_chunks(n_, kEnvChunk, run);
    else
      run(0, n_, 0);

    // ordered reductions and episode transitions
    for (const auto& acc : term_acc)
      for (int k = 0; k < rewards::kNumTerms; ++k)
        stats_.term_sums[k] += acc[k];
    for (int i = 0; i < n_; ++i) {
      stats_.reward_sum += out.reward[i];
      stats_.nlts_sum += nlts_acc_[i];
      stats_.nats_sum += nats_acc_[i];
      stats_.steps += 1;
      if (out.terminated[i] || out.truncated[i]) {
        stats_.finished_returns.push_back(episode_return_[i]);
        stats_.finished_levels.push_back(static_cast<int>(level_[i]));
        if (curriculum_enabled_) update_curriculum(i);
        reset_env(i);
      }
    }
    return out;
  }

  // per-env curriculum transition, applied on episode end
  void update_curriculum(int i) {
    const double steps = std::max<std::int64_t>(1, episode_step_[i]);
    const double mean_track = lin_track_sum_[i] / steps;
    const Eigen::Vector3d base = sim::base_origin(state_, i, params_[i]);
    const double dist = (base.head<2>() - spawn_xy_[i]).norm();
    rng::Stream grad(cfg_.seed, rng::Tag::Curriculum,
                     static_cast<std::uint64_t>(i),
                     static_cast<std::uint64_t>(episode_id_[i]));
    level_[i] = curriculum_next_level(static_cast<int>(level_[i]), mean_track,
                                      dist, cfg_.curriculum,
                                      cfg_.terrain.tile_side, grad);
    if (cfg_.curriculum.command_curriculum &&
        mean_track >= cfg_.curriculum.promote_tracking_threshold)
      cmd_scale_[i] = std::min(1.0, cmd_scale_[i] +
                                        cfg_.curriculum.command_scale_step);
  }

  double command_scale(int i) const { return cmd_scale_[i]; }
  double mean_command_scale() const {
    double s = 0;
    for (double v : cmd_scale_) s += v;
    return s / n_;
  }

  void reset_env(int i) {
    episode_id_[i] += 1;
    rng::Stream rs(cfg_.seed, rng::Tag::EnvReset, static_cast<std::uint64_t>(i),
                   static_cast<std::uint64_t>(episode_id_[i]));
    params_[i] = sim::randomize(cfg_.rand, cfg_.robot, rs);

    // spawn on the flat platform of the env's (type row, level column) tile
    const int col = level_[i];
    Eigen::Vector2d center = field_.tile_center(terrain_row_[i], col);
    const double ox = rs.uniform(-0.5, 0.5);
    const double oy = rs.uniform(-0.5, 0.5);
    const double yaw = rs.uniform(-M_PI, M_PI);

    sim::Vec12 q;
    for (int j = 0; j < 12; ++j)
      q[j] = cfg_.robot.nominal_joint_positions[j] *
             rs.uniform(cfg_.rand.init_joint_scale.lo, cfg_.rand.init_joint_scale.hi);

    state_.joint_pos[i] = q;
    state_.joint_vel[i].setZero();
    state_.joint_acc[i].setZero();
    state_.joint_torque[i].setZero();
    state_.ang_vel[i].setZero();
    state_.quat[i] = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
    // spawn kick, sampled in the body frame
    const Eigen::Vector3d v_kick(
        rs.uniform(cfg_.rand.init_base_vel.lo, cfg_.rand.init_base_vel.hi),
        rs.uniform(cfg_.rand.init_base_vel.lo, cfg_.rand.init_base_vel.hi), 0.0);
    state_.lin_vel[i] = state_.quat[i].toRotationMatrix() * v_kick;
    state_.time[i] = 0;
    state_.blown_up[i] = 0;

    // place the lowest foot at the static spring penetration depth
    const Eigen::Matrix3d R = state_.quat[i].toRotationMatrix();
    const double settle =
        params_[i].total_mass() * sim::kGravity / (4.0 * sim::kContactStiffness);
    double base_z = -1e30;
    for (int leg = 0; leg < 4; ++leg) {
      Eigen::Vector3d p_body =
          sim::leg_forward_kinematics(cfg_.robot, leg, q.segment<3>(3 * leg));
      Eigen::Vector3d p_rot = R * p_body;
      double ground = field_.height_at_clamped(center.x() + ox + p_rot.x(),
                                               center.y() + oy + p_rot.y());
      base_z = std::max(base_z, ground - p_rot.z());
    }
    Eigen::Vector3d origin(center.x() + ox, center.y() + oy, base_z - settle);
    state_.com_pos[i] = origin + R * params_[i].com_offset;
    state_.gravity_body[i] = R.transpose() * Eigen::Vector3d(0, 0, -1);
    sim::refresh_feet(state_, i, params_[i], cfg_.robot);

    for (int k = 0; k < kMaxDelayTicks; ++k)
      target_queue_[static_cast<size_t>(i) * kMaxDelayTicks + k] = nominal_q();
    last_action_[i].setZero();
    prev_action_[i].setZero();
    episode_step_[i] = 0;
    lin_track_sum_[i] = 0;
    episode_return_[i] = 0;
    spawn_xy_[i] = origin.head<2>();
    command_[i] = draw_command(i, rs);

    assemble_obs(i);
    assemble_critic(i);
    backfill_history(i);
  }

  Eigen::Vector3d draw_command(int i, rng::Stream& rs) {
    if (command_sampler_) return command_sampler_(i, rs);
    return cmd_scale_[i] * sample_command(env_terrain_type(i), rs);
  }

  // command ranges per terrain family
  Eigen::Vector3d sample_command(TerrainType t, rng::Stream& rs) const {
    const auto& cur = cfg_.curriculum;
    const bool wide =
        (t == TerrainType::Slope || t == TerrainType::RoughSlope);
    const Interval& lx = wide ? cur.slope_lin_x : cur.stair_lin_x;
    const Interval& ly = wide ? cur.slope_lin_y : cur.stair_lin_y;
    const Interval& az = wide ? cur.slope_ang : cur.stair_ang;
    return {rs.uniform(lx.lo, lx.hi), rs.uniform(ly.lo, ly.hi),
            rs.uniform(az.lo, az.hi)};
  }

  // theta_target = theta_0 + k a, with the action clipped first
  sim::Vec12 act(const sim::Vec12& a) const {
    const double c = cfg_.env.action_clip;
    return nominal_q() + cfg_.env.action_scale * a.cwiseMax(-c).cwiseMin(c);
  }

  sim::Vec12 nominal_q() const {
    sim::Vec12 q;
    for (int j = 0; j < 12; ++j) q[j] = cfg_.robot.nominal_joint_positions[j];
    return q;
  }

  const sim::SimWorldState& state() const { return state_; }
  sim::SimWorldState& mutable_state() { return state_; }
  const sim::EnvPhysicsParams& env_params(int i) const { return params_[i]; }
  const Eigen::Vector3d& env_command(int i) const { return command_[i]; }

  // Serialization of every mutable per-env field; `f(name, ptr, count)` with
  // double*, float*, or int64_t*.
  template <class F>
  void visit_state(F&& f) {
    const long n = n_;
    f("env.com_pos", state_.com_pos[0].data(), n * 3);
    f("env.quat", state_.quat[0].coeffs().data(), n * 4);
    f("env.lin_vel", state_.lin_vel[0].data(), n * 3);
    f("env.ang_vel", state_.ang_vel[0].data(), n * 3);
    f("env.joint_pos", state_.joint_pos[0].data(), n * 12);
    f("env.joint_vel", state_.joint_vel[0].data(), n * 12);
    f("env.joint_acc", state_.joint_acc[0].data(), n * 12);
    f("env.joint_torque", state_.joint_torque[0].data(), n * 12);
    f("env.foot_pos", state_.foot_pos[0][0].data(), n * 12);
    f("env.foot_vel", state_.foot_vel[0][0].data(), n * 12);
    f("env.gravity_body", state_.gravity_body[0].data(), n * 3);
    f("env.time", state_.time.data(), n);
    f("env.blown_up", state_.blown_up.data(), n);
    f("env.params", reinterpret_cast<std::uint8_t*>(params_.data()),
      static_cast<long>(params_.size() * sizeof(sim::EnvPhysicsParams)));
    f("env.command", command_[0].data(), n * 3);
    f("env.level", level_.data(), n);
    f("env.terrain_row", terrain_row_.data(), n);
    f("env.episode_step", episode_step_.data(), n);
    f("env.episode_id", episode_id_.data(), n);
    f("env.target_queue", target_queue_[0].data(), n * kMaxDelayTicks * 12);
    f("env.last_action", last_action_[0].data(), n * 12);
    f("env.prev_action", prev_action_[0].data(), n * 12);
    f("env.lin_track_sum", lin_track_sum_.data(), n);
    f("env.episode_return", episode_return_.data(), n);
    f("env.spawn_xy", spawn_xy_[0].data(), n * 2);
    f("env.hist_ring", hist_ring_.data(), static_cast<long>(hist_ring_.size()));
    if (track_critic_history_)
      f("env.critic_ring", critic_ring_.data(),
        static_cast<long>(critic_ring_.size()));
    f("env.obs", obs_.data(), static_cast<long>(obs_.size()));
    f("env.critic_obs", critic_obs_.data(), static_cast<long>(critic_obs_.size()));
  }

 private:
  static constexpr long kEnvChunk = 16;

  void step_one(int i, const MatX& actions, EnvStepOut& out,
                std::array<double, rewards::kNumTerms>& term_acc) {
    // the acting frame becomes the newest history entry
    push_history(i);

    sim::Vec12 a;
    for (int j = 0; j < 12; ++j) a[j] = actions(i, j);
    const double c = cfg_.env.action_clip;
    a = a.cwiseMax(-c).cwiseMin(c);

    // advance the delay queue: slot 0 is the freshest target
    for (int k = kMaxDelayTicks - 1; k > 0; --k)
      target_queue_[static_cast<size_t>(i) * kMaxDelayTicks + k] =
          target_queue_[static_cast<size_t>(i) * kMaxDelayTicks + k - 1];
    target_queue_[static_cast<size_t>(i) * kMaxDelayTicks] = act(a);
    const sim::Vec12& eff =
        target_queue_[static_cast<size_t>(i) * kMaxDelayTicks +
                      std::min(params_[i].delay_steps, kMaxDelayTicks - 1)];

    for (int s = 0; s < cfg_.control_decimation; ++s)
      sim::step_env(state_, i, params_[i], eff, field_, cfg_.robot, cfg_.sim_dt);

    episode_step_[i] += 1;

    rewards::RewardBreakdown rb;
    if (!state_.blown_up[i]) {
      rb = rewards::compute(state_, i, params_[i], cfg_.robot, field_,
                            command_[i], a, last_action_[i], prev_action_[i],
                            cfg_.policy_dt());
      if (!std::isfinite(rb.total)) rb = rewards::RewardBreakdown{};
    }
    out.reward[i] = static_cast<float>(rb.total);
    episode_return_[i] += rb.total;
    lin_track_sum_[i] += rb.terms[0];
    for (int k = 0; k < rewards::kNumTerms; ++k) term_acc[k] += rb.terms[k];

    prev_action_[i] = last_action_[i];
    last_action_[i] = a;

    const bool term = rewards::terminated(state_, i, params_[i], field_);
    const bool trunc = !term && episode_step_[i] >= episode_len_;
    out.terminated[i] = term;
    out.truncated[i] = trunc;

    // periodic push: an instantaneous planar velocity kick
    if (push_steps_ > 0 && !term && !trunc &&
        episode_step_[i] % push_steps_ == 0) {
      rng::Stream ps(cfg_.seed, rng::Tag::Push, static_cast<std::uint64_t>(i),
                     static_cast<std::uint64_t>(episode_id_[i]) * 100000 +
                         static_cast<std::uint64_t>(episode_step_[i]));
      const double v = cfg_.env.push_vel;
      state_.lin_vel[i] += state_.quat[i].toRotationMatrix() *
                           Eigen::Vector3d(ps.uniform(-v, v), ps.uniform(-v, v), 0);
    }

    // command resample happens on the step boundary, before the successor
    // frame is assembled
    if (auto_resample_ && !term && !trunc &&
        episode_step_[i] % cfg_.curriculum.resample_interval == 0) {
      rng::Stream rs(cfg_.seed, rng::Tag::Command, static_cast<std::uint64_t>(i),
                     static_cast<std::uint64_t>(episode_id_[i]) * 100000 +
                         static_cast<std::uint64_t>(episode_step_[i]));
      command_[i] = draw_command(i, rs);
    }

    const Eigen::Vector3d v_body = sim::base_lin_vel_body(state_, i);
    for (int k = 0; k < 3; ++k)
      out.true_vel(i, k) = state_.blown_up[i] ? 0.0f : static_cast<float>(v_body[k]);

    assemble_obs(i);
    assemble_critic(i);
    out.next_obs.row(i) = obs_.row(i);
    out.next_critic_obs.row(i) = critic_obs_.row(i);
    // stats NLTS/NATS reuse the tracking terms (same sigma)
    nlts_acc_[i] = rb.terms[0];
    nats_acc_[i] = rb.terms[1];
  }

  void assemble_obs(int i) {
    float* o = obs_.row(i).data();
    Eigen::Matrix<float, kObsDim, 1> frame;
    int k = 0;
    for (int a = 0; a < 3; ++a) frame[k++] = static_cast<float>(command_[i][a]);
    for (int j = 0; j < 12; ++j)
      frame[k++] = static_cast<float>(state_.joint_pos[i][j] -
                                      cfg_.robot.nominal_joint_positions[j]);
    for (int j = 0; j < 12; ++j)
      frame[k++] =
          static_cast<float>(state_.joint_vel[i][j] * cfg_.env.obs_scale_joint_vel);
    for (int a = 0; a < 3; ++a)
      frame[k++] =
          static_cast<float>(state_.ang_vel[i][a] * cfg_.env.obs_scale_ang_vel);
    for (int a = 0; a < 3; ++a)
      frame[k++] = static_cast<float>(state_.gravity_body[i][a]);
    for (int j = 0; j < 12; ++j)
      frame[k++] = static_cast<float>(last_action_[i][j]);
    for (int j = 0; j < kObsDim; ++j) {
      float v = frame[j];
      if (!std::isfinite(v)) v = 0.0f;
      o[j] = std::clamp(v, -kObsClip, kObsClip);
    }
  }

  void assemble_critic(int i) {
    // actor frame ++ [base velocity] ++ external force ++ height scan
    critic_obs_.row(i).head(kObsDim) = obs_.row(i);
    float* c = critic_obs_.row(i).data();
    int k0 = kObsDim;
    if (critic_vel_dims_ > 0) {
      const Eigen::Vector3d v = sim::base_lin_vel_body(state_, i);
      for (int a = 0; a < 3; ++a) {
        float vv = static_cast<float>(v[a]);
        c[k0 + a] = std::isfinite(vv) ? std::clamp(vv, -kObsClip, kObsClip) : 0.0f;
      }
      k0 += 3;
    }
    for (int a = 0; a < 3; ++a)
      c[k0 + a] = static_cast<float>(params_[i].external_force[a]);
    k0 += 3;
    const Eigen::Vector3d base = sim::base_origin(state_, i, params_[i]);
    const auto& qt = state_.quat[i];
    const double yaw =
        std::atan2(2.0 * (qt.w() * qt.z() + qt.x() * qt.y()),
                   1.0 - 2.0 * (qt.y() * qt.y() + qt.z() * qt.z()));
    std::vector<double> h(static_cast<size_t>(height_pts_));
    height_samples(field_, base, yaw, cfg_.env.height_points_per_axis,
                   cfg_.env.height_span, h.data());
    for (int k = 0; k < height_pts_; ++k) {
      float v = static_cast<float>(h[static_cast<size_t>(k)]);
      if (!std::isfinite(v)) v = 0.0f;
      c[k0 + k] = std::clamp(v, -kObsClip, kObsClip);
    }
  }

  void push_history(int i) {
    float* ring = &hist_ring_[static_cast<size_t>(i) * hist_len_ * kObsDim];
    // shift toward the old end; slot (hist_len_-1) is the newest past frame
    for (int k = 0; k < hist_len_ - 1; ++k)
      std::copy(ring + (k + 1) * kObsDim, ring + (k + 2) * kObsDim,
                ring + k * kObsDim);
    const float* cur = obs_.row(i).data();
    std::copy(cur, cur + kObsDim, ring + (hist_len_ - 1) * kObsDim);
    if (track_critic_history_) {
      float* cring = &critic_ring_[static_cast<size_t>(i) * hist_len_ * critic_dim_];
      for (int k = 0; k < hist_len_ - 1; ++k)
        std::copy(cring + (k + 1) * critic_dim_, cring + (k + 2) * critic_dim_,
                  cring + k * critic_dim_);
      const float* cc = critic_obs_.row(i).data();
      std::copy(cc, cc + critic_dim_, cring + (hist_len_ - 1) * critic_dim_);
    }
  }

  void backfill_history(int i) {
    float* ring = &hist_ring_[static_cast<size_t>(i) * hist_len_ * kObsDim];
    const float* cur = obs_.row(i).data();
    for (int k = 0; k < hist_len_; ++k)
      std::copy(cur, cur + kObsDim, ring + k * kObsDim);
    if (track_critic_history_) {
      float* cring = &critic_ring_[static_cast<size_t>(i) * hist_len_ * critic_dim_];
      const float* cc = critic_obs_.row(i).data();
      for (int k = 0; k < hist_len_; ++k)
        std::copy(cc, cc + critic_dim_, cring + k * critic_dim_);
    }
  }

  void write_history_row(int i, float* out) const {
    const float* ring = &hist_ring_[static_cast<size_t>(i) * hist_len_ * kObsDim];
    std::copy(ring, ring + hist_len_ * kObsDim, out);
    const float* cur = obs_.row(i).data();
    std::copy(cur, cur + kObsDim, out + hist_len_ * kObsDim);
  }

  TrainConfig cfg_;
  ThreadPool* pool_ = nullptr;
  HeightField field_;
  int n_ = 0, hist_len_ = 5, hist_dim_ = 0, critic_dim_ = 0, height_pts_ = 0;
  int critic_vel_dims_ = 0;
  int episode_len_ = 1000;
  int push_steps_ = 0;
  bool curriculum_enabled_ = true;
  bool auto_resample_ = true;
  std::function<Eigen::Vector3d(int, rng::Stream&)> command_sampler_;

  sim::SimWorldState state_;
  std::vector<sim::EnvPhysicsParams> params_;
  std::vector<Eigen::Vector3d> command_;
  std::vector<std::int64_t> level_, terrain_row_;
  std::vector<std::int64_t> episode_step_;
  std::vector<std::int64_t> episode_id_;
  std::vector<sim::Vec12> target_queue_;  // n * kMaxDelayTicks, slot 0 newest
  std::vector<sim::Vec12> last_action_, prev_action_;
  std::vector<double> lin_track_sum_, episode_return_;
  std::vector<Eigen::Vector2d> spawn_xy_;
  std::vector<float> hist_ring_;    // n * hist_len * kObsDim
  std::vector<float> critic_ring_;  // oracle mode only
  std::vector<double> nlts_acc_, nats_acc_;
  MatX obs_, critic_obs_;
  EnvIterationStats stats_;
  bool track_critic_history_ = false;
};

}  // namespace quadloco
