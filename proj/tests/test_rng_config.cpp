#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "quadloco/config.hpp"
#include "quadloco/rng.hpp"

using namespace quadloco;

TEST_CASE("counter rng is deterministic and scheduling-independent") {
  rng::Stream a(42, rng::Tag::Test, 1, 2);
  rng::Stream b(42, rng::Tag::Test, 1, 2);
  for (int i = 0; i < 100; ++i) REQUIRE(a.bits() == b.bits());

  rng::Stream c(42, rng::Tag::Test, 1, 3);
  REQUIRE(rng::Stream(42, rng::Tag::Test, 1, 2).bits() != c.bits());
}

TEST_CASE("uniform draws cover the interval with the right mean") {
  rng::Stream s(7, rng::Tag::Test);
  double lo = 1e9, hi = -1e9, sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double v = s.uniform(0.2, 2.75);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  REQUIRE(lo >= 0.2);
  REQUIRE(hi <= 2.75);
  REQUIRE(sum / n == Catch::Approx(1.475).margin(0.02));
}

TEST_CASE("normal draws have unit variance") {
  rng::Stream s(7, rng::Tag::Test, 9);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double v = s.normal();
    sum += v;
    sq += v * v;
  }
  REQUIRE(sum / n == Catch::Approx(0.0).margin(0.02));
  REQUIRE(sq / n == Catch::Approx(1.0).margin(0.03));
}

TEST_CASE("default config matches the tabled values") {
  TrainConfig c;
  CHECK(c.ppo.clip_range == 0.2);
  CHECK(c.ppo.entropy_coef == 0.01);
  CHECK(c.ppo.gamma == 0.99);
  CHECK(c.ppo.gae_lambda == 0.95);
  CHECK(c.ppo.desired_kl == 0.01);
  CHECK(c.ppo.learning_rate == 1e-3);
  CHECK(c.ppo.num_epochs == 5);
  CHECK(c.ppo.adam_epsilon == 1e-8);
  CHECK(c.ppo.grad_clip == 10.0);
  CHECK(c.him.num_prototypes == 16);
  CHECK(c.him.latent_dim == 16);
  CHECK(c.him.history_len == 5);
  CHECK(c.him.contrastive_scale == 1.0);
  CHECK(c.him.velocity_scale == 1.0);
  CHECK(c.him.learning_rate == 1e-3);
  CHECK(c.num_envs == 4096);
  CHECK(c.rollout_length == 100);

  // Table 5 rows, field by field
  CHECK(c.rand.body_mass_scale == Interval{0.8, 1.2});
  CHECK(c.rand.link_mass_scale == Interval{0.8, 1.2});
  for (auto& iv : c.rand.com_offset) CHECK(iv == Interval{-0.1, 0.1});
  CHECK(c.rand.payload == Interval{-1.0, 3.0});
  CHECK(c.rand.friction == Interval{0.2, 2.75});
  CHECK(c.rand.restitution == Interval{0.0, 1.0});
  CHECK(c.rand.motor_strength_scale == Interval{0.8, 1.2});
  CHECK(c.rand.kp_scale == Interval{0.8, 1.2});
  CHECK(c.rand.kp_nominal == 20.0);
  CHECK(c.rand.kd_scale == Interval{0.8, 1.2});
  CHECK(c.rand.kd_nominal == 0.5);
  CHECK(c.rand.init_joint_scale == Interval{0.5, 1.5});
  CHECK(c.rand.delay_steps == Interval{0, 3});
  for (auto& iv : c.rand.external_force) CHECK(iv == Interval{-30, 30});

  CHECK(c.terrain.proportions == std::array<double, 4>{0.1, 0.2, 0.6, 0.1});
  CHECK(validate(c).empty());
}

TEST_CASE("empty file loads pure defaults") {
  TrainConfig c = parse_config_text("");
  CHECK(c.ppo.clip_range == 0.2);
  CHECK(c.ppo.gamma == 0.99);
  CHECK(c.him.num_prototypes == 16);
}

TEST_CASE("single override keeps everything else default") {
  TrainConfig c = parse_config_text("him.num_prototypes = 64\n");
  CHECK(c.him.num_prototypes == 64);
  TrainConfig d;
  d.him.num_prototypes = 64;
  CHECK(c == d);
}

TEST_CASE("invariant violations are reported by name") {
  CHECK_THROWS_WITH(parse_config_text("ppo.gamma = 1.5\n"),
                    Catch::Matchers::ContainsSubstring("gamma must be in (0,1]"));

  TrainConfig c;
  c.rand.friction = {2.75, 0.2};
  auto v = validate(c);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == "rand.friction: min > max");

  c = TrainConfig{};
  c.him.history_len = 0;
  v = validate(c);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == "history_len must be >= 1");
}

TEST_CASE("parse errors carry line information") {
  CHECK_THROWS_WITH(parse_config_text("ppo.gamma 0.99\n", "f.cfg"),
                    Catch::Matchers::ContainsSubstring("f.cfg:1"));
  CHECK_THROWS_WITH(parse_config_text("\n\nnot_a_key = 3\n", "f.cfg"),
                    Catch::Matchers::ContainsSubstring("f.cfg:3"));
  CHECK_THROWS_WITH(parse_config_text("ppo.gamma = zebra\n", "f.cfg"),
                    Catch::Matchers::ContainsSubstring("cannot parse"));
}

TEST_CASE("serialize/parse round trip") {
  TrainConfig c;
  c.num_envs = 17;
  c.ppo.gamma = 0.977;
  c.him.encoder_hidden = {64, 32};
  c.rand.friction = {0.4, 1.9};
  c.terrain.proportions = {0.5, 0.5, 0.0, 0.0};
  c.robot.nominal_joint_positions[3] = 0.123456789012345;
  TrainConfig back = parse_config_text(serialize(c));
  CHECK(back == c);
}

TEST_CASE("robot description file merges before main keys") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "ql_cfg_test";
  fs::create_directories(dir);
  {
    std::ofstream r(dir / "robot.cfg");
    r << "robot.base_mass_nominal = 9.5\nrobot.motor_torque_nominal = 28\n";
  }
  {
    std::ofstream m(dir / "main.cfg");
    m << "robot_file = robot.cfg\n";
    m << "robot.motor_torque_nominal = 30\n";  // main file wins
    m << "num_envs = 8\n";
  }
  TrainConfig c = load_config((dir / "main.cfg").string());
  CHECK(c.robot.base_mass_nominal == 9.5);
  CHECK(c.robot.motor_torque_nominal == 30.0);
  CHECK(c.num_envs == 8);
}
