#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "quadloco/trainer.hpp"

// Evaluation harness: tracking-score protocol over terrain types and command
// regimes, the latent separability probe, the velocity-estimator check, and
// the ablation / prototype-count sweeps.

namespace quadloco::eval {

inline double nlts(const Eigen::Vector2d& v, const Eigen::Vector2d& v_target) {
  return std::exp(-(v - v_target).squaredNorm() / 0.25);
}
inline double nats(double w, double w_target) {
  return std::exp(-(w - w_target) * (w - w_target) / 0.25);
}

enum class Regime { Linear, Angular, Combined };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Linear: return "lin";
    case Regime::Angular: return "ang";
    case Regime::Combined: return "combined";
  }
  return "?";
}

struct EvalProtocol {
  TerrainType terrain = TerrainType::Slope;
  Regime regime = Regime::Combined;
  int range_level = 1;  // 1..3: commands sampled in +-range_level
  int num_envs = 64;
  int episodes = 1;
  double episode_seconds = 10.0;
  std::uint64_t seed = 97;
};

struct EvalReport {
  double lin_err_mean = 0, lin_err_ci = 0;
  double ang_err_mean = 0, ang_err_ci = 0;
  double nlts_mean = 0, nlts_ci = 0;
  double nats_mean = 0, nats_ci = 0;
  long trials = 0;
};

// One trial = one env over one evaluation episode.
struct TrialTrace {
  std::vector<double> lin_err;  // ||v_xy - v_xy^target|| per step
  std::vector<double> ang_err;  // |w_yaw - w_yaw^target| per step
};

inline EvalReport report_from_traces(const std::vector<TrialTrace>& traces) {
  EvalReport rep;
  rep.trials = static_cast<long>(traces.size());
  std::vector<double> le, ae, ls, as;
  for (const auto& t : traces) {
    if (t.lin_err.empty()) continue;
    double l = 0, a = 0, sl = 0, sa = 0;
    for (size_t k = 0; k < t.lin_err.size(); ++k) {
      l += t.lin_err[k];
      a += t.ang_err[k];
      sl += std::exp(-t.lin_err[k] * t.lin_err[k] / 0.25);
      sa += std::exp(-t.ang_err[k] * t.ang_err[k] / 0.25);
    }
    const double n = static_cast<double>(t.lin_err.size());
    le.push_back(l / n);
    ae.push_back(a / n);
    ls.push_back(sl / n);
    as.push_back(sa / n);
  }
  auto mean_ci = [](const std::vector<double>& xs, double& mean, double& ci) {
    if (xs.empty()) { mean = ci = 0; return; }
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - m) * (x - m);
    var /= std::max<size_t>(1, xs.size() - 1);
    mean = m;
    ci = 1.96 * std::sqrt(var / static_cast<double>(xs.size()));
  };
  mean_ci(le, rep.lin_err_mean, rep.lin_err_ci);
  mean_ci(ae, rep.ang_err_mean, rep.ang_err_ci);
  mean_ci(ls, rep.nlts_mean, rep.nlts_ci);
  mean_ci(as, rep.nats_mean, rep.nats_ci);
  return rep;
}

// Deterministic policy driver shared by the evaluation entry points.
class PolicyRunner {
 public:
  PolicyRunner(const PolicyBundle& b, ThreadPool* pool) : b_(b), pool_(pool) {}

  // mean actions; also exposes the embedding used for the actor input
  MatX act(VecEnv& env, him::Embedding<float>* emb_out = nullptr) {
    MatX actor_in;
    env.write_history(hist_);
    if (b_.ablation.oracle_mode) {
      env.write_critic_history(actor_in);
    } else {
      him::Embedding<float> emb = him::encode_source<float>(b_.him, hist_, nullptr, pool_);
      actor_in.resize(env.num_envs(), kObsDim + 3 + b_.cfg.him.latent_dim);
      actor_in.leftCols(kObsDim) = env.obs();
      actor_in.middleCols(kObsDim, 3) =
          b_.ablation.zero_velocity_input ? MatX::Zero(env.num_envs(), 3)
                                          : emb.vel;
      actor_in.rightCols(b_.cfg.him.latent_dim) =
          b_.ablation.zero_latent_input
              ? MatX::Zero(env.num_envs(), b_.cfg.him.latent_dim)
              : emb.latent;
      if (emb_out) *emb_out = std::move(emb);
    }
    return nn::forward<float>(b_.ac.actor, actor_in, nullptr, pool_);
  }

 private:
  const PolicyBundle& b_;
  ThreadPool* pool_;
  MatX hist_;
};

// Appendix-style protocol: terrain levels 1..4 equally distributed,
// commands drawn once per trial from the regime ranges, linear-only runs set
// the angular target to 0 and vice versa, deterministic policy.
inline EvalReport evaluate(const PolicyBundle& bundle, const EvalProtocol& proto,
                           int workers = 0) {
  ThreadPool pool(workers);
  TrainConfig cfg = bundle.cfg;
  cfg.num_envs = proto.num_envs;
  cfg.seed = proto.seed;
  cfg.curriculum.max_level = 9;
  // every family present so any terrain can be requested
  cfg.terrain.proportions = {0.25, 0.25, 0.25, 0.25};

  VecEnv env(cfg, &pool, bundle.ablation.oracle_mode);
  env.set_curriculum_enabled(false);
  env.set_auto_resample(false);
  const double r = static_cast<double>(proto.range_level);
  const double lat = std::min(r, 1.0);
  const Regime regime = proto.regime;
  env.set_command_sampler([r, lat, regime](int, rng::Stream& rs) {
    Eigen::Vector3d c(rs.uniform(-r, r), rs.uniform(-lat, lat),
                      rs.uniform(-r, r));
    if (regime == Regime::Linear) c[2] = 0;
    if (regime == Regime::Angular) { c[0] = 0; c[1] = 0; }
    return c;
  });
  auto rows = env.rows_of_type(proto.terrain);
  for (int i = 0; i < env.num_envs(); ++i) {
    env.force_terrain_row(i, rows[static_cast<size_t>(i) % rows.size()]);
    env.force_level(i, 1 + (i % 4));
  }

  const int steps = static_cast<int>(std::lround(proto.episode_seconds /
                                                 cfg.policy_dt()));
  PolicyRunner runner(bundle, &pool);
  std::vector<TrialTrace> traces;
  for (int ep = 0; ep < proto.episodes; ++ep) {
    env.reset_all();
    std::vector<TrialTrace> ep_traces(static_cast<size_t>(env.num_envs()));
    for (int t = 0; t < steps; ++t) {
      MatX actions = runner.act(env);
      env.step(actions);
      for (int i = 0; i < env.num_envs(); ++i) {
        const Eigen::Vector3d v = sim::base_lin_vel_body(env.state(), i);
        const Eigen::Vector3d& cmd = env.env_command(i);
        auto& tr = ep_traces[static_cast<size_t>(i)];
        tr.lin_err.push_back((v.head<2>() - cmd.head<2>()).norm());
        tr.ang_err.push_back(std::abs(env.state().ang_vel[i][2] - cmd[2]));
      }
    }
    for (auto& tr : ep_traces) traces.push_back(std::move(tr));
  }
  return report_from_traces(traces);
}

// ---- latent separability probe -------------------------------------------

struct ProbeResult {
  double accuracy = 0;           // held-out accuracy of the linear probe
  double control_accuracy = 0;   // same pipeline with shuffled labels
  double chance = 0.25;
  double chance_band = 0;        // 1.96 binomial half-width around chance
  long n_train = 0, n_test = 0;
};

namespace detail {

// multinomial logistic regression on (x, label); returns held-out accuracy
inline double fit_linear_probe(const MatX& x_train,
                               const std::vector<int>& y_train,
                               const MatX& x_test,
                               const std::vector<int>& y_test, int classes) {
  const long B = x_train.rows();
  nn::Mlp<float> probe;
  nn::Layer<float> layer;
  layer.W = nn::Mat<float>::Zero(x_train.cols(), classes);
  layer.b = nn::Vec<float>::Zero(classes);
  layer.act = nn::Act::Identity;
  probe.layers.push_back(std::move(layer));
  nn::ParamSet<float> params, grads_ref;
  nn::collect(probe, params);
  nn::MlpGrads<float> grads;
  grads.init_like(probe);
  nn::collect(grads, grads_ref);
  nn::AdamState<float> adam;
  adam.init(nn::total_size(params));

  for (int epoch = 0; epoch < 400; ++epoch) {
    nn::Tape<float> tape;
    MatX z = nn::forward(probe, x_train, &tape);
    MatX dz(B, classes);
    for (long i = 0; i < B; ++i) {
      double mx = z.row(i).maxCoeff();
      double sum = 0;
      for (int k = 0; k < classes; ++k) sum += std::exp(z(i, k) - mx);
      for (int k = 0; k < classes; ++k) {
        const double p = std::exp(z(i, k) - mx) / sum;
        dz(i, k) = static_cast<float>(
            (p - (y_train[static_cast<size_t>(i)] == k ? 1.0 : 0.0)) /
            static_cast<double>(B));
      }
    }
    grads.zero();
    nn::backward(probe, tape, dz, grads);
    nn::adam_step(adam, params, grads_ref, 0.05, 1e-8, 0.0);
  }

  MatX zt = nn::forward(probe, x_test);
  long correct = 0;
  for (long i = 0; i < zt.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < classes; ++k)
      if (zt(i, k) > zt(i, best)) best = k;
    if (best == y_test[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(zt.rows());
}

}  // namespace detail

// Rolls the policy over all four terrain families, collects (latent, family)
// pairs, fits a linear probe on a held-out split and runs the shuffled-label
// control. Optionally dumps the raw rows for external plotting.
inline ProbeResult latent_probe(const PolicyBundle& bundle, int samples_per_class,
                                std::uint64_t seed, const std::string& rows_path = "",
                                int workers = 0, int max_level = 2) {
  if (bundle.ablation.oracle_mode)
    throw std::runtime_error("latent probe needs a policy with an encoder");
  ThreadPool pool(workers);
  TrainConfig cfg = bundle.cfg;
  cfg.num_envs = 64;
  cfg.seed = seed;
  cfg.terrain.proportions = {0.25, 0.25, 0.25, 0.25};
  VecEnv env(cfg, &pool);
  env.set_curriculum_enabled(false);
  for (int i = 0; i < env.num_envs(); ++i) {
    const auto type = static_cast<TerrainType>(i % 4);
    auto rows = env.rows_of_type(type);
    env.force_terrain_row(i, rows[static_cast<size_t>(i / 4) % rows.size()]);
    env.force_level(i, (i / 4) % (max_level + 1));
  }
  env.reset_all();

  PolicyRunner runner(bundle, &pool);
  const int warmup = 25;
  std::array<long, 4> counts{};
  std::vector<std::pair<Eigen::VectorXf, int>> samples;
  const long want = static_cast<long>(samples_per_class);
  int t = 0;
  while (*std::min_element(counts.begin(), counts.end()) < want && t < 20000) {
    him::Embedding<float> emb;
    MatX actions = runner.act(env, &emb);
    if (t >= warmup)
      for (int i = 0; i < env.num_envs(); ++i) {
        const int label = i % 4;
        if (counts[static_cast<size_t>(label)] >= want) continue;
        samples.emplace_back(emb.latent.row(i).transpose(), label);
        counts[static_cast<size_t>(label)] += 1;
      }
    env.step(actions);
    ++t;
  }
  for (long c : counts)
    if (c < 100)
      throw std::runtime_error("latent probe: fewer than 100 samples per class");

  if (!rows_path.empty()) {
    std::ofstream out(rows_path);
    out << "# latent[" << bundle.cfg.him.latent_dim << "] terrain\n";
    for (const auto& [vec, label] : samples) {
      for (long k = 0; k < vec.size(); ++k) out << vec[k] << '\t';
      out << terrain_name(static_cast<TerrainType>(label)) << '\n';
    }
  }

  rng::Stream shuffle(seed, rng::Tag::Probe, 0);
  std::vector<size_t> order(samples.size());
  for (size_t k = 0; k < order.size(); ++k) order[k] = k;
  for (size_t k = 0; k + 1 < order.size(); ++k) {
    const size_t j = k + static_cast<size_t>(shuffle.integer(order.size() - k));
    std::swap(order[k], order[j]);
  }
  const long n = static_cast<long>(samples.size());
  const long n_train = n * 8 / 10;
  const int dim = bundle.cfg.him.latent_dim;
  MatX xtr(n_train, dim), xte(n - n_train, dim);
  std::vector<int> ytr, yte;
  for (long k = 0; k < n; ++k) {
    const auto& [vec, label] = samples[order[static_cast<size_t>(k)]];
    if (k < n_train) {
      xtr.row(k) = vec.transpose();
      ytr.push_back(label);
    } else {
      xte.row(k - n_train) = vec.transpose();
      yte.push_back(label);
    }
  }

  ProbeResult res;
  res.n_train = n_train;
  res.n_test = n - n_train;
  res.accuracy = detail::fit_linear_probe(xtr, ytr, xte, yte, 4);

  // permutation control: the probe must fall back to chance
  std::vector<int> ytr_shuf = ytr, yte_shuf = yte;
  rng::Stream perm(seed, rng::Tag::Probe, 1);
  for (size_t k = 0; k + 1 < ytr_shuf.size(); ++k)
    std::swap(ytr_shuf[k],
              ytr_shuf[k + static_cast<size_t>(perm.integer(ytr_shuf.size() - k))]);
  for (size_t k = 0; k + 1 < yte_shuf.size(); ++k)
    std::swap(yte_shuf[k],
              yte_shuf[k + static_cast<size_t>(perm.integer(yte_shuf.size() - k))]);
  res.control_accuracy =
      detail::fit_linear_probe(xtr, ytr_shuf, xte, yte_shuf, 4);
  res.chance_band =
      1.96 * std::sqrt(0.25 * 0.75 / static_cast<double>(res.n_test));
  return res;
}

// ---- velocity estimator check ----------------------------------------------

struct VelocityProbe {
  double mse_trained = 0;
  double mse_untrained = 0;
};

// Drives the trained policy for a held-out rollout and compares the trained
// encoder's velocity estimate against a freshly initialized encoder on the
// same histories.
inline VelocityProbe velocity_probe(const PolicyBundle& bundle,
                                    std::uint64_t seed, int steps = 200,
                                    int workers = 0) {
  ThreadPool pool(workers);
  TrainConfig cfg = bundle.cfg;
  cfg.num_envs = 64;
  cfg.seed = seed;
  VecEnv env(cfg, &pool, bundle.ablation.oracle_mode);
  PolicyRunner runner(bundle, &pool);

  rng::Stream rs(seed, rng::Tag::NetInit, 7);
  him::Model<float> untrained = him::make_model<float>(kObsDim, cfg.him, rs);

  MatX hist;
  double acc_tr = 0, acc_un = 0;
  long count = 0;
  for (int t = 0; t < steps; ++t) {
    env.write_history(hist);
    MatX actions = runner.act(env);
    EnvStepOut out = env.step(actions);
    // the estimate from the pre-step history targets the post-step velocity
    him::Embedding<float> e_tr = him::encode_source<float>(bundle.him, hist, nullptr, &pool);
    him::Embedding<float> e_un = him::encode_source<float>(untrained, hist, nullptr, &pool);
    for (int i = 0; i < env.num_envs(); ++i) {
      for (int k = 0; k < 3; ++k) {
        const double dt = e_tr.vel(i, k) - out.true_vel(i, k);
        const double du = e_un.vel(i, k) - out.true_vel(i, k);
        acc_tr += dt * dt;
        acc_un += du * du;
      }
      ++count;
    }
  }
  VelocityProbe vp;
  vp.mse_trained = acc_tr / static_cast<double>(count * 3);
  vp.mse_untrained = acc_un / static_cast<double>(count * 3);
  return vp;
}

// ---- metrics files ----------------------------------------------------------

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int col(const std::string& name) const {
    for (size_t k = 0; k < columns.size(); ++k)
      if (columns[k] == name) return static_cast<int>(k);
    return -1;
  }
  // mean of a column over the last k rows
  double tail_mean(const std::string& name, int k) const {
    const int c = col(name);
    if (c < 0 || rows.empty()) return std::nan("");
    const size_t lo = rows.size() > static_cast<size_t>(k) ? rows.size() - k : 0;
    double s = 0;
    for (size_t r = lo; r < rows.size(); ++r) s += rows[r][static_cast<size_t>(c)];
    return s / static_cast<double>(rows.size() - lo);
  }
};

inline MetricsTable read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty metrics file " + path);
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() == t.columns.size()) t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- ablation and prototype sweeps ------------------------------------------

struct VariantResult {
  std::string variant;
  std::uint64_t seed = 0;
  double nlts = 0, nats = 0, level = 0;  // final-10-iteration means
  std::string run_dir;
};

inline VariantResult summarize_run(const std::string& variant, std::uint64_t seed,
                                   const std::string& run_dir) {
  VariantResult v;
  v.variant = variant;
  v.seed = seed;
  v.run_dir = run_dir;
  MetricsTable t = read_metrics(run_dir + "/metrics.csv");
  v.nlts = t.tail_mean("nlts", 10);
  v.nats = t.tail_mean("nats", 10);
  v.level = t.tail_mean("mean_terrain_level", 10);
  return v;
}

inline VariantResult train_variant(TrainConfig cfg, const std::string& variant,
                                   const AblationFlags& flags, std::uint64_t seed,
                                   const std::string& out_dir, bool quiet = true) {
  cfg.seed = seed;
  std::string run_dir = out_dir + "/" + variant + "_seed" + std::to_string(seed);
  TrainerOptions opts;
  opts.out_dir = run_dir;
  opts.ablation = flags;
  opts.quiet = quiet;
  Trainer trainer(cfg, opts);
  trainer.run();
  return summarize_run(variant, seed, run_dir);
}

inline std::vector<VariantResult> run_ablation(
    const TrainConfig& cfg,
    const std::vector<std::pair<std::string, AblationFlags>>& variants,
    int seeds, const std::string& out_dir) {
  std::vector<VariantResult> results;
  for (const auto& [name, flags] : variants)
    for (int s = 0; s < seeds; ++s)
      results.push_back(
          train_variant(cfg, name, flags, cfg.seed + static_cast<std::uint64_t>(s),
                        out_dir));
  std::ofstream out(out_dir + "/ablation.tsv");
  out << "variant\tseed\tnlts\tnats\tmean_level\n";
  for (const auto& r : results)
    out << r.variant << '\t' << r.seed << '\t' << r.nlts << '\t' << r.nats
        << '\t' << r.level << '\n';
  return results;
}

inline std::vector<VariantResult> sweep_prototypes(const TrainConfig& base,
                                                   const std::vector<int>& k_values,
                                                   int seeds,
                                                   const std::string& out_dir) {
  std::vector<VariantResult> results;
  for (int k : k_values) {
    if (k < 2) throw ConfigError("num_prototypes must be >= 2");
    TrainConfig cfg = base;
    cfg.him.num_prototypes = k;
    for (int s = 0; s < seeds; ++s)
      results.push_back(train_variant(cfg, "K" + std::to_string(k),
                                      AblationFlags{},
                                      base.seed + static_cast<std::uint64_t>(s),
                                      out_dir));
  }
  std::ofstream out(out_dir + "/sweep_k.tsv");
  out << "num_prototypes\tseed\tnlts\tnats\tmean_level\n";
  for (const auto& r : results)
    out << r.variant.substr(1) << '\t' << r.seed << '\t' << r.nlts << '\t'
        << r.nats << '\t' << r.level << '\n';
  return results;
}

// Ablation spec file: one variant per line, "name [flag ...]" with flags in
// {zero_velocity_input, drop_velocity_loss, zero_latent_input,
//  drop_latent_loss, regression_mode, oracle_mode}; "none" for no flags.
inline std::vector<std::pair<std::string, AblationFlags>> parse_ablation_spec(
    const std::string& text) {
  std::vector<std::pair<std::string, AblationFlags>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    AblationFlags f;
    std::string flag;
    while (ls >> flag) {
      if (flag == "none") continue;
      else if (flag == "zero_velocity_input") f.zero_velocity_input = true;
      else if (flag == "drop_velocity_loss") f.drop_velocity_loss = true;
      else if (flag == "zero_latent_input") f.zero_latent_input = true;
      else if (flag == "drop_latent_loss") f.drop_latent_loss = true;
      else if (flag == "regression_mode") f.regression_mode = true;
      else if (flag == "oracle_mode") f.oracle_mode = true;
      else
        throw std::runtime_error("ablation spec line " + std::to_string(lineno) +
                                 ": unknown flag '" + flag + "'");
    }
    out.emplace_back(name, f);
  }
  return out;
}

}  // namespace quadloco::eval
