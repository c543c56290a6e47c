#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Run configuration: robot description, terrain layout, randomization
// ranges, HIM/PPO hyperparameters, curriculum settings. Stored as a flat
// key-value text format with dotted section paths, e.g.
//
//   num_envs = 256
//   ppo.gamma = 0.99
//   rand.friction = 0.2 2.75
//   terrain.proportions = 0.1 0.2 0.6 0.1
//
// Unset keys keep their defaults. The same format serves for the optional
// robot description file referenced by `robot_file = <path>`.

namespace quadloco {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Interval {
  double lo = 0.0, hi = 0.0;
  bool operator==(const Interval&) const = default;
  double span() const { return hi - lo; }
};

struct RobotDescription {
  int num_joints = 12;
  // per-leg order FL FR RL RR; per-joint order (hip abduction, hip pitch, knee)
  std::array<double, 12> nominal_joint_positions = {
      0.0, 0.8, -1.5, 0.0, 0.8, -1.5, 0.0, 0.8, -1.5, 0.0, 0.8, -1.5};
  std::array<double, 3> leg_link_lengths = {0.08, 0.2, 0.2};  // abd, thigh, calf
  double hip_offset_x = 0.18;  // hips at (+-x, +-y) in the base frame
  double hip_offset_y = 0.05;
  double base_mass_nominal = 12.0;
  std::array<double, 12> link_masses_nominal = {0.25, 0.25, 0.25, 0.25,
                                                0.25, 0.25, 0.25, 0.25,
                                                0.25, 0.25, 0.25, 0.25};
  std::array<double, 3> base_inertia_diag = {0.11, 0.18, 0.25};  // kg m^2
  double motor_torque_nominal = 33.5;  // N m
  double base_height_target = 0.29;    // m
  double foot_clearance_target = 0.08;  // m
};

struct RandomizationRanges {
  Interval body_mass_scale{0.8, 1.2};
  Interval link_mass_scale{0.8, 1.2};
  std::array<Interval, 3> com_offset = {Interval{-0.1, 0.1}, Interval{-0.1, 0.1},
                                        Interval{-0.1, 0.1}};  // m
  Interval payload{-1.0, 3.0};       // kg
  Interval friction{0.2, 2.75};
  Interval restitution{0.0, 1.0};
  Interval motor_strength_scale{0.8, 1.2};
  Interval kp_scale{0.8, 1.2};
  double kp_nominal = 20.0;
  Interval kd_scale{0.8, 1.2};
  double kd_nominal = 0.5;
  Interval init_joint_scale{0.5, 1.5};
  Interval delay_steps{0, 3};         // whole control ticks
  std::array<Interval, 3> external_force = {Interval{-30, 30}, Interval{-30, 30},
                                            Interval{-30, 30}};  // N, body frame
  // spawn kick: initial planar base velocity, body frame (m/s); off by default
  Interval init_base_vel{0.0, 0.0};
};

struct HimConfig {
  int history_len = 5;
  int latent_dim = 16;
  int num_prototypes = 16;
  double temperature = 0.1;
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_iters = 3;
  double contrastive_scale = 1.0;
  double velocity_scale = 1.0;
  double learning_rate = 1e-3;
  double grad_clip = 10.0;
  double adam_epsilon = 1e-8;
  std::vector<int> encoder_hidden = {512, 256, 128};
  std::vector<int> target_hidden = {128, 64};
  double aug_noise_std = 0.01;  // shared per-sequence observation noise; 0 disables
  int steps_per_iter = 1;       // optimizer steps per training iteration
  int batch_cap = 0;            // subsample the pair batch; 0 = use all pairs
  bool train_prototypes = true;
};

struct PpoConfig {
  double clip_range = 0.2;
  double entropy_coef = 0.01;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double desired_kl = 0.01;
  double learning_rate = 1e-3;
  int num_epochs = 5;
  int num_minibatches = 4;
  double grad_clip = 10.0;
  double adam_epsilon = 1e-8;
  double value_coef = 1.0;
  bool joint_him_gradient = false;  // let actor gradients reach the encoder
  std::vector<int> actor_hidden = {512, 256, 128};
  std::vector<int> critic_hidden = {512, 256, 128};
};

struct CurriculumConfig {
  int resample_interval = 25;  // policy steps between command resamples
  int max_level = 9;
  double promote_tracking_threshold = 0.8;
  // easy-to-hard command ranges: per-env scale on the sampling intervals,
  // grown after each episode that clears the tracking threshold
  bool command_curriculum = false;
  double command_scale_init = 0.3;
  double command_scale_step = 0.1;
  // command ranges; slopes and rough slopes get the wide set
  Interval slope_lin_x{-3.0, 3.0};
  Interval slope_lin_y{-1.0, 1.0};
  Interval slope_ang{-3.0, 3.0};
  Interval stair_lin_x{-1.0, 1.0};
  Interval stair_lin_y{-1.0, 1.0};
  Interval stair_ang{-2.0, 2.0};
};

struct TerrainConfig {
  int tile_rows = 20;
  int tile_cols = 10;
  double tile_side = 10.0;   // m
  double cell_size = 0.05;   // m
  std::array<double, 4> proportions = {0.1, 0.2, 0.6, 0.1};
};

struct EnvConfig {
  double action_scale = 0.25;
  double action_clip = 100.0;
  double episode_length_s = 20.0;
  double obs_scale_joint_vel = 0.05;
  double obs_scale_ang_vel = 0.25;
  int height_points_per_axis = 11;  // critic height scan, square pattern
  double height_span = 1.0;         // m, body-frame extent of the scan
  // periodic base-velocity pushes (perturbation teacher); 0 disables
  double push_interval_s = 0.0;
  double push_vel = 0.5;  // m/s, planar, uniform per component
  // privileged critic: expose the true base velocity alongside force and
  // heights (the tracking return is velocity-driven, so a velocity-blind
  // value function is a large variance source)
  bool critic_sees_velocity = true;
};

struct TrainConfig {
  int num_envs = 4096;
  int rollout_length = 100;
  int num_iterations = 1000;
  std::uint64_t seed = 1;
  double sim_dt = 0.005;
  int control_decimation = 4;
  int checkpoint_interval = 50;
  int workers = 0;  // 0 = hardware concurrency
  PpoConfig ppo;
  HimConfig him;
  CurriculumConfig curriculum;
  TerrainConfig terrain;
  EnvConfig env;
  RobotDescription robot;
  RandomizationRanges rand;

  double policy_dt() const { return sim_dt * control_decimation; }
  int episode_length_steps() const {
    return static_cast<int>(std::lround(env.episode_length_s / policy_dt()));
  }
};

namespace detail {

// One visitor drives parsing, serialization and key lookup so the three can
// never drift apart. F is called as f(key, field_ref) for every field.
template <class F>
void visit_fields(TrainConfig& c, F&& f) {
  f("num_envs", c.num_envs);
  f("rollout_length", c.rollout_length);
  f("num_iterations", c.num_iterations);
  f("seed", c.seed);
  f("sim_dt", c.sim_dt);
  f("control_decimation", c.control_decimation);
  f("checkpoint_interval", c.checkpoint_interval);
  f("workers", c.workers);

  f("ppo.clip_range", c.ppo.clip_range);
  f("ppo.entropy_coef", c.ppo.entropy_coef);
  f("ppo.gamma", c.ppo.gamma);
  f("ppo.gae_lambda", c.ppo.gae_lambda);
  f("ppo.desired_kl", c.ppo.desired_kl);
  f("ppo.learning_rate", c.ppo.learning_rate);
  f("ppo.num_epochs", c.ppo.num_epochs);
  f("ppo.num_minibatches", c.ppo.num_minibatches);
  f("ppo.grad_clip", c.ppo.grad_clip);
  f("ppo.adam_epsilon", c.ppo.adam_epsilon);
  f("ppo.value_coef", c.ppo.value_coef);
  f("ppo.joint_him_gradient", c.ppo.joint_him_gradient);
  f("ppo.actor_hidden", c.ppo.actor_hidden);
  f("ppo.critic_hidden", c.ppo.critic_hidden);

  f("him.history_len", c.him.history_len);
  f("him.latent_dim", c.him.latent_dim);
  f("him.num_prototypes", c.him.num_prototypes);
  f("him.temperature", c.him.temperature);
  f("him.sinkhorn_epsilon", c.him.sinkhorn_epsilon);
  f("him.sinkhorn_iters", c.him.sinkhorn_iters);
  f("him.contrastive_scale", c.him.contrastive_scale);
  f("him.velocity_scale", c.him.velocity_scale);
  f("him.learning_rate", c.him.learning_rate);
  f("him.grad_clip", c.him.grad_clip);
  f("him.adam_epsilon", c.him.adam_epsilon);
  f("him.encoder_hidden", c.him.encoder_hidden);
  f("him.target_hidden", c.him.target_hidden);
  f("him.aug_noise_std", c.him.aug_noise_std);
  f("him.steps_per_iter", c.him.steps_per_iter);
  f("him.batch_cap", c.him.batch_cap);
  f("him.train_prototypes", c.him.train_prototypes);

  f("curriculum.resample_interval", c.curriculum.resample_interval);
  f("curriculum.max_level", c.curriculum.max_level);
  f("curriculum.promote_tracking_threshold",
    c.curriculum.promote_tracking_threshold);
  f("curriculum.command_curriculum", c.curriculum.command_curriculum);
  f("curriculum.command_scale_init", c.curriculum.command_scale_init);
  f("curriculum.command_scale_step", c.curriculum.command_scale_step);
  f("curriculum.slope_lin_x", c.curriculum.slope_lin_x);
  f("curriculum.slope_lin_y", c.curriculum.slope_lin_y);
  f("curriculum.slope_ang", c.curriculum.slope_ang);
  f("curriculum.stair_lin_x", c.curriculum.stair_lin_x);
  f("curriculum.stair_lin_y", c.curriculum.stair_lin_y);
  f("curriculum.stair_ang", c.curriculum.stair_ang);

  f("terrain.tile_rows", c.terrain.tile_rows);
  f("terrain.tile_cols", c.terrain.tile_cols);
  f("terrain.tile_side", c.terrain.tile_side);
  f("terrain.cell_size", c.terrain.cell_size);
  f("terrain.proportions", c.terrain.proportions);

  f("env.action_scale", c.env.action_scale);
  f("env.action_clip", c.env.action_clip);
  f("env.episode_length_s", c.env.episode_length_s);
  f("env.obs_scale_joint_vel", c.env.obs_scale_joint_vel);
  f("env.obs_scale_ang_vel", c.env.obs_scale_ang_vel);
  f("env.height_points_per_axis", c.env.height_points_per_axis);
  f("env.height_span", c.env.height_span);
  f("env.push_interval_s", c.env.push_interval_s);
  f("env.push_vel", c.env.push_vel);
  f("env.critic_sees_velocity", c.env.critic_sees_velocity);

  f("robot.num_joints", c.robot.num_joints);
  f("robot.nominal_joint_positions", c.robot.nominal_joint_positions);
  f("robot.leg_link_lengths", c.robot.leg_link_lengths);
  f("robot.hip_offset_x", c.robot.hip_offset_x);
  f("robot.hip_offset_y", c.robot.hip_offset_y);
  f("robot.base_mass_nominal", c.robot.base_mass_nominal);
  f("robot.link_masses_nominal", c.robot.link_masses_nominal);
  f("robot.base_inertia_diag", c.robot.base_inertia_diag);
  f("robot.motor_torque_nominal", c.robot.motor_torque_nominal);
  f("robot.base_height_target", c.robot.base_height_target);
  f("robot.foot_clearance_target", c.robot.foot_clearance_target);

  f("rand.body_mass_scale", c.rand.body_mass_scale);
  f("rand.link_mass_scale", c.rand.link_mass_scale);
  f("rand.com_offset", c.rand.com_offset);
  f("rand.payload", c.rand.payload);
  f("rand.friction", c.rand.friction);
  f("rand.restitution", c.rand.restitution);
  f("rand.motor_strength_scale", c.rand.motor_strength_scale);
  f("rand.kp_scale", c.rand.kp_scale);
  f("rand.kp_nominal", c.rand.kp_nominal);
  f("rand.kd_scale", c.rand.kd_scale);
  f("rand.kd_nominal", c.rand.kd_nominal);
  f("rand.init_joint_scale", c.rand.init_joint_scale);
  f("rand.delay_steps", c.rand.delay_steps);
  f("rand.external_force", c.rand.external_force);
  f("rand.init_base_vel", c.rand.init_base_vel);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_text(const int& v) { return std::to_string(v); }
inline std::string to_text(const std::uint64_t& v) { return std::to_string(v); }
inline std::string to_text(const bool& v) { return v ? "true" : "false"; }
inline std::string to_text(const double& v) { return fmt_double(v); }
inline std::string to_text(const Interval& v) {
  return fmt_double(v.lo) + " " + fmt_double(v.hi);
}
inline std::string to_text(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i)
    s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}
template <size_t N>
std::string to_text(const std::array<double, N>& v) {
  std::string s;
  for (size_t i = 0; i < N; ++i) s += (i ? " " : "") + fmt_double(v[i]);
  return s;
}
template <size_t N>
std::string to_text(const std::array<Interval, N>& v) {
  std::string s;
  for (size_t i = 0; i < N; ++i) s += (i ? " " : "") + to_text(v[i]);
  return s;
}

inline std::vector<std::string> tokens(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

inline bool parse_one(const std::string& t, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(t, &pos);
    return pos == t.size();
  } catch (...) {
    return false;
  }
}
inline bool parse_one(const std::string& t, int& out) {
  try {
    size_t pos = 0;
    out = std::stoi(t, &pos);
    return pos == t.size();
  } catch (...) {
    return false;
  }
}
inline bool parse_one(const std::string& t, std::uint64_t& out) {
  try {
    size_t pos = 0;
    out = std::stoull(t, &pos);
    return pos == t.size();
  } catch (...) {
    return false;
  }
}
inline bool parse_one(const std::string& t, bool& out) {
  if (t == "true" || t == "1") { out = true; return true; }
  if (t == "false" || t == "0") { out = false; return true; }
  return false;
}

template <class T>
bool from_text_scalar(const std::string& text, T& out) {
  auto ts = tokens(text);
  if (ts.size() != 1) return false;
  return parse_one(ts[0], out);
}

inline bool from_text(const std::string& s, int& v) { return from_text_scalar(s, v); }
inline bool from_text(const std::string& s, std::uint64_t& v) { return from_text_scalar(s, v); }
inline bool from_text(const std::string& s, double& v) { return from_text_scalar(s, v); }
inline bool from_text(const std::string& s, bool& v) { return from_text_scalar(s, v); }
inline bool from_text(const std::string& s, Interval& v) {
  auto ts = tokens(s);
  return ts.size() == 2 && parse_one(ts[0], v.lo) && parse_one(ts[1], v.hi);
}
inline bool from_text(const std::string& s, std::vector<int>& v) {
  auto ts = tokens(s);
  std::vector<int> out(ts.size());
  for (size_t i = 0; i < ts.size(); ++i)
    if (!parse_one(ts[i], out[i])) return false;
  v = std::move(out);
  return true;
}
template <size_t N>
bool from_text(const std::string& s, std::array<double, N>& v) {
  auto ts = tokens(s);
  if (ts.size() != N) return false;
  for (size_t i = 0; i < N; ++i)
    if (!parse_one(ts[i], v[i])) return false;
  return true;
}
template <size_t N>
bool from_text(const std::string& s, std::array<Interval, N>& v) {
  auto ts = tokens(s);
  if (ts.size() != 2 * N) return false;
  for (size_t i = 0; i < N; ++i) {
    if (!parse_one(ts[2 * i], v[i].lo)) return false;
    if (!parse_one(ts[2 * i + 1], v[i].hi)) return false;
  }
  return true;
}

struct KvLine {
  std::string key, value;
  int line = 0;
};

inline std::vector<KvLine> parse_kv_text(const std::string& text,
                                         const std::string& origin) {
  std::vector<KvLine> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    KvLine kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    if (kv.key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

inline void apply_kv(TrainConfig& cfg, const std::vector<KvLine>& kvs,
                     const std::string& origin) {
  for (const auto& kv : kvs) {
    if (kv.key == "robot_file") continue;  // handled by the loader
    bool found = false, ok = false;
    visit_fields(cfg, [&](const char* key, auto& field) {
      if (!found && kv.key == key) {
        found = true;
        ok = from_text(kv.value, field);
      }
    });
    if (!found)
      throw ConfigError(origin + ":" + std::to_string(kv.line) +
                        ": unknown key '" + kv.key + "'");
    if (!ok)
      throw ConfigError(origin + ":" + std::to_string(kv.line) +
                        ": cannot parse value for '" + kv.key + "'");
  }
}

}  // namespace detail

inline std::string serialize(const TrainConfig& cfg) {
  std::string out;
  detail::visit_fields(const_cast<TrainConfig&>(cfg),
                       [&](const char* key, auto& field) {
                         out += key;
                         out += " = ";
                         out += detail::to_text(field);
                         out += "\n";
                       });
  return out;
}

inline std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> v;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };
  check(c.num_envs >= 1, "num_envs must be >= 1");
  check(c.rollout_length >= 2, "rollout_length must be >= 2");
  check(c.num_iterations >= 0, "num_iterations must be >= 0");
  check(c.sim_dt > 0, "sim_dt must be > 0");
  check(c.control_decimation >= 1, "control_decimation must be >= 1");

  check(c.ppo.gamma > 0 && c.ppo.gamma <= 1, "gamma must be in (0,1]");
  check(c.ppo.gae_lambda >= 0 && c.ppo.gae_lambda <= 1,
        "gae_lambda must be in [0,1]");
  check(c.ppo.clip_range > 0, "clip_range must be > 0");
  check(c.ppo.num_epochs >= 1, "ppo.num_epochs must be >= 1");
  check(c.ppo.num_minibatches >= 1, "ppo.num_minibatches must be >= 1");

  check(c.him.history_len >= 1, "history_len must be >= 1");
  check(c.him.latent_dim >= 1, "latent_dim must be >= 1");
  check(c.him.num_prototypes >= 2, "num_prototypes must be >= 2");
  check(c.him.temperature > 0, "temperature must be > 0");
  check(c.him.sinkhorn_epsilon > 0, "sinkhorn_epsilon must be > 0");
  check(c.him.sinkhorn_iters >= 1, "sinkhorn_iters must be >= 1");

  check(c.robot.num_joints == 12, "robot.num_joints must be 12");
  for (double l : c.robot.leg_link_lengths)
    check(l >= 0, "leg_link_lengths must be >= 0");
  check(c.robot.leg_link_lengths[1] > 0 && c.robot.leg_link_lengths[2] > 0,
        "thigh and calf lengths must be > 0");
  check(c.robot.base_mass_nominal > 0, "base_mass_nominal must be > 0");
  for (double m : c.robot.link_masses_nominal)
    check(m >= 0, "link_masses_nominal must be >= 0");
  check(c.robot.motor_torque_nominal > 0, "motor_torque_nominal must be > 0");
  check(c.robot.base_height_target > 0, "base_height_target must be > 0");

  detail::visit_fields(
      const_cast<TrainConfig&>(c), [&](const char* key, auto& field) {
        using T = std::decay_t<decltype(field)>;
        std::string k(key);
        if constexpr (std::is_same_v<T, Interval>) {
          if (field.lo > field.hi) v.push_back(k + ": min > max");
        } else if constexpr (std::is_same_v<T, std::array<Interval, 3>>) {
          for (const auto& iv : field)
            if (iv.lo > iv.hi) {
              v.push_back(k + ": min > max");
              break;
            }
        }
      });

  double psum = 0;
  for (double p : c.terrain.proportions) {
    psum += p;
    check(p >= 0, "terrain.proportions must be >= 0");
  }
  check(std::abs(psum - 1.0) < 1e-9, "terrain.proportions must sum to 1");
  check(c.terrain.tile_rows >= 1 && c.terrain.tile_cols >= 1,
        "terrain grid must be at least 1x1");
  check(c.terrain.cell_size > 0, "terrain.cell_size must be > 0");
  check(c.terrain.tile_side / c.terrain.cell_size >= 4,
        "tile_side must span at least 4 cells");
  check(c.curriculum.max_level >= 0 && c.curriculum.max_level <= 9,
        "curriculum.max_level must be in 0..9");
  check(c.curriculum.resample_interval >= 1,
        "curriculum.resample_interval must be >= 1");
  check(c.env.height_points_per_axis >= 2,
        "env.height_points_per_axis must be >= 2");
  check(c.env.episode_length_s > 0, "env.episode_length_s must be > 0");
  return v;
}

inline TrainConfig parse_config_text(const std::string& text,
                                     const std::string& origin = "<string>") {
  TrainConfig cfg;
  auto kvs = detail::parse_kv_text(text, origin);
  // optional robot description file, merged before the main keys
  for (const auto& kv : kvs) {
    if (kv.key == "robot_file") {
      std::filesystem::path p(kv.value);
      if (p.is_relative())
        p = std::filesystem::path(origin).parent_path() / p;
      std::ifstream in(p);
      if (!in)
        throw ConfigError(origin + ":" + std::to_string(kv.line) +
                          ": cannot open robot_file '" + p.string() + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      detail::apply_kv(cfg, detail::parse_kv_text(ss.str(), p.string()),
                       p.string());
    }
  }
  detail::apply_kv(cfg, kvs, origin);
  auto violations = validate(cfg);
  if (!violations.empty()) {
    std::string msg = origin + ": invalid config:";
    for (const auto& s : violations) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return serialize(a) == serialize(b);
}

}  // namespace quadloco
