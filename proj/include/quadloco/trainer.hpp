#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "quadloco/checkpoint.hpp"
#include "quadloco/config.hpp"
#include "quadloco/env.hpp"
#include "quadloco/him.hpp"
#include "quadloco/ppo.hpp"

// Training loop: per iteration collect a rollout against frozen networks,
// run the hybrid-internal-model update (HIO), then the PPO update, then
// curriculum bookkeeping, metrics and checkpoints. Wall-clock time is
// reported on stderr only; the metrics file stays byte-reproducible.

namespace quadloco {

struct AblationFlags {
  bool zero_velocity_input = false;
  bool drop_velocity_loss = false;
  bool zero_latent_input = false;
  bool drop_latent_loss = false;
  bool regression_mode = false;
  bool oracle_mode = false;

  bool baseline() const { return drop_velocity_loss && drop_latent_loss; }
  std::array<std::uint8_t, 6> pack() const {
    return {zero_velocity_input, drop_velocity_loss, zero_latent_input,
            drop_latent_loss, regression_mode, oracle_mode};
  }
  void unpack(const std::array<std::uint8_t, 6>& a) {
    zero_velocity_input = a[0];
    drop_velocity_loss = a[1];
    zero_latent_input = a[2];
    drop_latent_loss = a[3];
    regression_mode = a[4];
    oracle_mode = a[5];
  }
  bool operator==(const AblationFlags&) const = default;
};

struct TrainerOptions {
  std::string out_dir;      // empty: no metrics/checkpoint files
  std::string resume_path;  // empty: fresh start
  AblationFlags ablation;
  bool quiet = false;
};

struct IterationLog {
  std::int64_t iteration = 0;
  double reward_mean = 0, nlts = 0, nats = 0, mean_level = 0;
  double latent_loss = 0, velocity_loss = 0;
  double surrogate = 0, value_loss = 0, entropy = 0, kl = 0, lr = 0,
         clip_fraction = 0;
  std::array<double, rewards::kNumTerms> term_means{};
};

class MetricsWriter {
 public:
  static std::string header(bool regression_mode) {
    std::string h =
        "iteration,reward_mean,nlts,nats,mean_terrain_level,";
    h += regression_mode ? "regression_loss" : "swav_loss";
    h += ",velocity_loss,surrogate_loss,value_loss,entropy,kl,lr,clip_fraction";
    for (int k = 0; k < rewards::kNumTerms; ++k)
      h += std::string(",rew_") + rewards::term_name(k);
    return h;
  }

  void open(const std::string& path, bool regression_mode) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics file " + path);
    out_ << header(regression_mode) << "\n";
    out_.flush();
  }

  static std::string format_row(const IterationLog& l) {
    char buf[64];
    std::string s = std::to_string(l.iteration);
    auto add = [&](double v) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      s += buf;
    };
    add(l.reward_mean);
    add(l.nlts);
    add(l.nats);
    add(l.mean_level);
    add(l.latent_loss);
    add(l.velocity_loss);
    add(l.surrogate);
    add(l.value_loss);
    add(l.entropy);
    add(l.kl);
    add(l.lr);
    add(l.clip_fraction);
    for (double t : l.term_means) add(t);
    return s;
  }

  void append(const IterationLog& l) {
    if (!out_.is_open()) return;
    out_ << format_row(l) << "\n";
    out_.flush();  // rows must survive an abort
  }

 private:
  std::ofstream out_;
};

namespace detail {

inline void add_mlp(ckpt::Writer& w, const std::string& prefix,
                    const nn::Mlp<float>& net) {
  for (size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    w.add(prefix + ".L" + std::to_string(l) + ".W", layer.W.data(),
          static_cast<long>(layer.W.size()));
    w.add(prefix + ".L" + std::to_string(l) + ".b", layer.b.data(),
          static_cast<long>(layer.b.size()));
  }
}

inline void get_mlp(const ckpt::Reader& r, const std::string& prefix,
                    nn::Mlp<float>& net) {
  for (size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    r.get(prefix + ".L" + std::to_string(l) + ".W", layer.W.data(),
          static_cast<long>(layer.W.size()));
    r.get(prefix + ".L" + std::to_string(l) + ".b", layer.b.data(),
          static_cast<long>(layer.b.size()));
  }
}

}  // namespace detail

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, TrainerOptions opts)
      : cfg_(cfg), opts_(std::move(opts)),
        pool_(cfg.workers > 0 ? cfg.workers : 0),
        env_(cfg, &pool_, opts_.ablation.oracle_mode) {
    latent_dim_ = cfg_.him.latent_dim;
    {
      rng::Stream rs(cfg_.seed, rng::Tag::NetInit, 0);
      him_ = him::make_model<float>(kObsDim, cfg_.him, rs);
    }
    actor_in_dim_ = opts_.ablation.oracle_mode
                        ? env_.critic_hist_dim()
                        : kObsDim + 3 + latent_dim_;
    {
      rng::Stream rs(cfg_.seed, rng::Tag::NetInit, 1);
      ac_ = ppo::make_actor_critic<float>(actor_in_dim_, env_.critic_dim(),
                                          kNumActions, cfg_.ppo, rs);
    }
    lr_ = cfg_.ppo.learning_rate;

    nn::collect(him_.source, him_params_);
    nn::collect(him_.target, him_params_);
    him_params_.push_back({him_.prototypes.data(),
                           static_cast<long>(him_.prototypes.size())});
    him_grads_.init_like(him_);
    nn::collect(him_grads_.source, him_grad_refs_);
    nn::collect(him_grads_.target, him_grad_refs_);
    him_grad_refs_.push_back({him_grads_.prototypes.data(),
                              static_cast<long>(him_grads_.prototypes.size())});
    him_adam_.init(nn::total_size(him_params_));

    nn::collect(ac_.actor, ppo_params_);
    ppo_params_.push_back({ac_.log_std.data(), static_cast<long>(ac_.log_std.size())});
    nn::collect(ac_.critic, ppo_params_);
    actor_grads_.init_like(ac_.actor);
    critic_grads_.init_like(ac_.critic);
    log_std_grad_ = nn::Vec<float>::Zero(kNumActions);
    nn::collect(actor_grads_, ppo_grad_refs_);
    ppo_grad_refs_.push_back({log_std_grad_.data(), static_cast<long>(log_std_grad_.size())});
    nn::collect(critic_grads_, ppo_grad_refs_);
    if (cfg_.ppo.joint_him_gradient && !opts_.ablation.oracle_mode) {
      // joint mode: actor gradients also reach the source encoder
      nn::collect(him_.source, ppo_params_);
      joint_source_grads_.init_like(him_.source);
      nn::collect(joint_source_grads_, ppo_grad_refs_);
    }
    ppo_adam_.init(nn::total_size(ppo_params_));

    buffer_.allocate(cfg_.rollout_length, cfg_.num_envs, kObsDim,
                     env_.hist_dim(), env_.critic_dim(), actor_in_dim_,
                     kNumActions);

    if (!opts_.out_dir.empty()) {
      std::filesystem::create_directories(opts_.out_dir);
      metrics_.open(opts_.out_dir + "/metrics.csv", opts_.ablation.regression_mode);
    }
    if (!opts_.resume_path.empty()) load_checkpoint(opts_.resume_path);
  }

  const TrainConfig& config() const { return cfg_; }
  VecEnv& env() { return env_; }
  him::Model<float>& him_model() { return him_; }
  ppo::ActorCritic<float>& actor_critic() { return ac_; }
  ppo::RolloutBuffer& buffer() { return buffer_; }
  std::int64_t iteration() const { return iteration_; }
  double lr() const { return lr_; }
  ThreadPool& pool() { return pool_; }

  std::uint64_t him_fingerprint() const {
    std::uint64_t h = 0;
    for (const auto& a : him_params_)
      h ^= ckpt::fnv1a(a.data, static_cast<size_t>(a.size) * 4);
    return h;
  }
  std::uint64_t policy_fingerprint() const {
    std::uint64_t h = 0;
    size_t k = 0;
    for (const auto& a : ppo_params_) {
      h ^= ckpt::fnv1a(a.data, static_cast<size_t>(a.size) * 4) + (++k);
    }
    return h;
  }

  // ---- rollout collection (frozen networks) --------------------------

  void collect_rollout() {
    env_.stats().clear();
    const int T = cfg_.rollout_length, N = cfg_.num_envs;
    MatX actions(N, kNumActions);
    for (int t = 0; t < T; ++t) {
      const long r0 = static_cast<long>(t) * N;
      buffer_.obs.middleRows(r0, N) = env_.obs();
      buffer_.critic_obs.middleRows(r0, N) = env_.critic_obs();
      env_.write_history(hist_scratch_);
      buffer_.hist.middleRows(r0, N) = hist_scratch_;

      assemble_actor_in(hist_scratch_, actor_in_scratch_);
      buffer_.actor_in.middleRows(r0, N) = actor_in_scratch_;

      MatX mean = nn::forward<float>(ac_.actor, actor_in_scratch_, nullptr, &pool_);
      rng::Stream noise(cfg_.seed, rng::Tag::ActionNoise,
                        static_cast<std::uint64_t>(iteration_),
                        static_cast<std::uint64_t>(t));
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < kNumActions; ++j)
          actions(i, j) = mean(i, j) +
                          std::exp(ac_.log_std[j]) *
                              static_cast<float>(noise.normal());
      buffer_.mean_old.middleRows(r0, N) = mean;
      buffer_.actions.middleRows(r0, N) = actions;
      buffer_.logp_old.segment(r0, N) =
          nn::gaussian_log_prob(mean, ac_.log_std, actions);
      MatX value = nn::forward<float>(ac_.critic, env_.critic_obs(), nullptr, &pool_);
      buffer_.value.segment(r0, N) = value.col(0);

      EnvStepOut out = env_.step(actions);
      buffer_.reward.segment(r0, N) = out.reward;
      for (int i = 0; i < N; ++i) {
        buffer_.terminated[r0 + i] = out.terminated[i];
        buffer_.truncated[r0 + i] = out.truncated[i];
      }
      buffer_.next_obs.middleRows(r0, N) = out.next_obs;
      buffer_.next_critic_obs.middleRows(r0, N) = out.next_critic_obs;
      buffer_.true_vel.middleRows(r0, N) = out.true_vel;
    }
    buffer_.log_std_old = ac_.log_std;
    MatX boot = nn::forward<float>(ac_.critic, env_.critic_obs(), nullptr, &pool_);
    buffer_.bootstrap_value = boot.col(0);
    prepare_advantages();
  }

  // time-limit bootstrapping, GAE, advantage normalization
  void prepare_advantages() {
    const int T = buffer_.steps, N = buffer_.num_envs;
    std::vector<long> trunc_rows;
    for (long r = 0; r < buffer_.rows(); ++r)
      if (buffer_.truncated[r]) trunc_rows.push_back(r);
    if (!trunc_rows.empty()) {
      MatX nc(static_cast<long>(trunc_rows.size()), env_.critic_dim());
      for (size_t k = 0; k < trunc_rows.size(); ++k)
        nc.row(static_cast<long>(k)) = buffer_.next_critic_obs.row(trunc_rows[k]);
      MatX v = nn::forward<float>(ac_.critic, nc, nullptr, &pool_);
      for (size_t k = 0; k < trunc_rows.size(); ++k)
        buffer_.reward[trunc_rows[k]] +=
            static_cast<float>(cfg_.ppo.gamma) * v(static_cast<long>(k), 0);
    }

    Eigen::MatrixXd rew(T, N), val(T, N);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> dones(T, N);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i) {
        const long r = static_cast<long>(t) * N + i;
        rew(t, i) = buffer_.reward[r];
        val(t, i) = buffer_.value[r];
        dones(t, i) = buffer_.terminated[r] || buffer_.truncated[r];
      }
    Eigen::VectorXd boot = buffer_.bootstrap_value.cast<double>();
    Eigen::MatrixXd adv, ret;
    ppo::compute_gae(rew, val, dones, boot, cfg_.ppo.gamma, cfg_.ppo.gae_lambda,
                     adv, ret);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < N; ++i) {
        const long r = static_cast<long>(t) * N + i;
        buffer_.advantage[r] = static_cast<float>(adv(t, i));
        buffer_.returns[r] = static_cast<float>(ret(t, i));
      }
    ppo::normalize_advantages(buffer_.advantage);
  }

  // ---- HIO ------------------------------------------------------------

  him::HioStats update_him() {
    him::HioStats stats;
    const auto& ab = opts_.ablation;
    if (ab.oracle_mode || ab.baseline()) return stats;
    if (cfg_.rollout_length < cfg_.him.history_len + 1) {
      if (!warned_short_) {
        std::cerr << "hio: rollout shorter than history_len+1, skipping\n";
        warned_short_ = true;
      }
      return stats;
    }
    const long R = buffer_.rows();
    long n = R;
    if (cfg_.him.batch_cap > 0) n = std::min<long>(n, cfg_.him.batch_cap);

    HimConfig hc = cfg_.him;
    if (ab.drop_latent_loss) hc.contrastive_scale = 0.0;
    if (ab.drop_velocity_loss) hc.velocity_scale = 0.0;

    for (int s = 0; s < cfg_.him.steps_per_iter; ++s) {
      std::vector<long> rows(static_cast<size_t>(R));
      for (long r = 0; r < R; ++r) rows[static_cast<size_t>(r)] = r;
      if (n < R) {
        rng::Stream sh(cfg_.seed, rng::Tag::HioSample,
                       static_cast<std::uint64_t>(iteration_),
                       static_cast<std::uint64_t>(s));
        for (long k = 0; k < n; ++k) {
          const long j = k + static_cast<long>(sh.integer(
                                 static_cast<std::uint64_t>(R - k)));
          std::swap(rows[static_cast<size_t>(k)], rows[static_cast<size_t>(j)]);
        }
      }
      hio_hist_.resize(n, env_.hist_dim());
      hio_next_.resize(n, kObsDim);
      hio_vel_.resize(n, 3);
      for (long k = 0; k < n; ++k) {
        hio_hist_.row(k) = buffer_.hist.row(rows[static_cast<size_t>(k)]);
        hio_next_.row(k) = buffer_.next_obs.row(rows[static_cast<size_t>(k)]);
        hio_vel_.row(k) = buffer_.true_vel.row(rows[static_cast<size_t>(k)]);
      }
      if (cfg_.him.aug_noise_std > 0) apply_augmentation(s);

      him_grads_.zero();
      stats = him::hio_compute(him_, hio_hist_, hio_next_, hio_vel_, hc,
                               ab.regression_mode, &him_grads_, &pool_);
      if (!stats.finite || !std::isfinite(nn::global_norm(him_grad_refs_))) {
        stats.finite = false;
        return stats;
      }
      nn::adam_step(him_adam_, him_params_, him_grad_refs_,
                    cfg_.him.learning_rate, cfg_.him.adam_epsilon,
                    cfg_.him.grad_clip);
    }
    return stats;
  }

  // shared per-sequence observation noise: one 45-vector per window applied
  // to every frame, an independent one on the target frame
  void apply_augmentation(int step_idx) {
    const long n = hio_hist_.rows();
    const int frames = cfg_.him.history_len + 1;
    const float sigma = static_cast<float>(cfg_.him.aug_noise_std);
    auto run = [&](long b, long e, long) {
      for (long k = b; k < e; ++k) {
        rng::Stream rs(cfg_.seed, rng::Tag::AugNoise,
                       static_cast<std::uint64_t>(iteration_) * 1024 +
                           static_cast<std::uint64_t>(step_idx),
                       static_cast<std::uint64_t>(k));
        for (int d = 0; d < kObsDim; ++d) {
          const float nz = sigma * static_cast<float>(rs.normal());
          for (int f = 0; f < frames; ++f) hio_hist_(k, f * kObsDim + d) += nz;
        }
        for (int d = 0; d < kObsDim; ++d)
          hio_next_(k, d) += sigma * static_cast<float>(rs.normal());
      }
    };
    pool_.for_chunks(n, 512, run);
  }

  // ---- PPO ------------------------------------------------------------

  ppo::PpoStats update_policy() {
    ppo::PpoStats st;
    const long R = buffer_.rows();
    const int num_mb = cfg_.ppo.num_minibatches;
    const long mb_size = R / num_mb;
    long count = 0;

    std::vector<long> perm(static_cast<size_t>(R));
    for (int epoch = 0; epoch < cfg_.ppo.num_epochs; ++epoch) {
      for (long r = 0; r < R; ++r) perm[static_cast<size_t>(r)] = r;
      rng::Stream sh(cfg_.seed, rng::Tag::Shuffle,
                     static_cast<std::uint64_t>(iteration_),
                     static_cast<std::uint64_t>(epoch));
      for (long k = 0; k < R - 1; ++k) {
        const long j =
            k + static_cast<long>(sh.integer(static_cast<std::uint64_t>(R - k)));
        std::swap(perm[static_cast<size_t>(k)], perm[static_cast<size_t>(j)]);
      }
      for (int mb = 0; mb < num_mb; ++mb) {
        const long lo = mb * mb_size;
        const long hi = (mb == num_mb - 1) ? R : lo + mb_size;
        const long B = hi - lo;
        gather_minibatch(perm, lo, B);

        nn::Tape<float> tape_a, tape_c, tape_enc;
        nn::Vec<float> joint_norms;
        MatX joint_unit;
        if (joint_mode()) {
          // fresh encoder pass so gradients can reach it
          him::Embedding<float> emb = him::encode_source<float>(
              him_, mb_hist_, &tape_enc, &pool_, nullptr, &joint_norms);
          joint_unit = emb.latent;
          if (!opts_.ablation.zero_velocity_input)
            mb_actor_in_.middleCols(kObsDim, 3) = emb.vel;
          if (!opts_.ablation.zero_latent_input)
            mb_actor_in_.rightCols(latent_dim_) = emb.latent;
        }
        MatX mean = nn::forward(ac_.actor, mb_actor_in_, &tape_a, &pool_);
        MatX value = nn::forward(ac_.critic, mb_critic_, &tape_c, &pool_);

        Eigen::VectorXf value_col = value.col(0);
        auto so = ppo::surrogate_losses<float>(
            mean, ac_.log_std, mb_actions_, mb_logp_, mb_adv_, value_col,
            mb_returns_, mb_mean_old_, buffer_.log_std_old, cfg_.ppo);
        if (!std::isfinite(so.surrogate) || !std::isfinite(so.value_loss) ||
            !std::isfinite(so.kl)) {
          st.finite = false;
          return st;
        }

        // KL-adaptive learning rate, adjusted per minibatch
        if (cfg_.ppo.desired_kl > 0) {
          if (so.kl > 2.0 * cfg_.ppo.desired_kl)
            lr_ = std::max(1e-6, lr_ / 1.5);
          else if (so.kl < 0.5 * cfg_.ppo.desired_kl && so.kl >= 0)
            lr_ = std::min(1e-2, lr_ * 1.5);
        }

        actor_grads_.zero();
        critic_grads_.zero();
        log_std_grad_ = so.d_log_std;
        MatX dvalue(B, 1);
        dvalue.col(0) = so.d_value;
        nn::backward(ac_.critic, tape_c, dvalue, critic_grads_, &pool_);
        if (joint_mode()) {
          joint_source_grads_.zero();
          MatX dactor_in;
          nn::backward(ac_.actor, tape_a, so.d_mean, actor_grads_, &pool_,
                       &dactor_in);
          MatX dout(B, 3 + latent_dim_);
          dout.leftCols(3) = opts_.ablation.zero_velocity_input
                                 ? MatX(MatX::Zero(B, 3))
                                 : MatX(dactor_in.middleCols(kObsDim, 3));
          MatX dunit = opts_.ablation.zero_latent_input
                           ? MatX(MatX::Zero(B, latent_dim_))
                           : MatX(dactor_in.rightCols(latent_dim_));
          dout.rightCols(latent_dim_) =
              nn::rows_normalize_backward(joint_unit, joint_norms, dunit);
          nn::backward(him_.source, tape_enc, dout, joint_source_grads_, &pool_);
        } else {
          nn::backward(ac_.actor, tape_a, so.d_mean, actor_grads_, &pool_);
        }
        if (!std::isfinite(nn::global_norm(ppo_grad_refs_))) {
          st.finite = false;
          return st;
        }
        nn::adam_step(ppo_adam_, ppo_params_, ppo_grad_refs_, lr_,
                      cfg_.ppo.adam_epsilon, cfg_.ppo.grad_clip);
        for (int j = 0; j < kNumActions; ++j)
          ac_.log_std[j] = std::clamp(ac_.log_std[j],
                                      static_cast<float>(nn::kLogStdMin),
                                      static_cast<float>(nn::kLogStdMax));

        st.surrogate_loss += so.surrogate;
        st.value_loss += so.value_loss;
        st.entropy += so.entropy;
        st.kl += so.kl;
        st.clip_fraction += so.clip_fraction;
        ++count;
      }
    }
    if (count > 0) {
      st.surrogate_loss /= count;
      st.value_loss /= count;
      st.entropy /= count;
      st.kl /= count;
      st.clip_fraction /= count;
    }
    st.lr_after = lr_;
    return st;
  }

  // ---- iteration driver -------------------------------------------------

  // Runs the remaining iterations; returns false if aborted on repeated
  // non-finite losses (a partial checkpoint is written in that case).
  bool run() {
    while (iteration_ < cfg_.num_iterations) {
      snapshot();
      collect_rollout();
      him::HioStats hs = update_him();
      ppo::PpoStats ps;
      if (hs.finite) ps = update_policy();
      if (!hs.finite || !ps.finite) {
        restore();
        ++bad_streak_;
        std::cerr << "iteration " << iteration_ + 1
                  << ": non-finite loss, restored parameters (streak "
                  << bad_streak_ << ")\n";
        if (bad_streak_ > 3) {
          if (!opts_.out_dir.empty())
            save_checkpoint(opts_.out_dir + "/ckpt_abort.bin");
          return false;
        }
        continue;
      }
      bad_streak_ = 0;
      finish_iteration(hs, ps);
    }
    if (!opts_.out_dir.empty())
      save_checkpoint(opts_.out_dir + "/ckpt_" + std::to_string(iteration_) +
                      ".bin");
    return true;
  }

  void finish_iteration(const him::HioStats& hs, const ppo::PpoStats& ps) {
    const auto& es = env_.stats();
    IterationLog log;
    log.iteration = iteration_ + 1;
    if (!es.finished_returns.empty()) {
      double s = 0;
      for (double r : es.finished_returns) s += r;
      log.reward_mean = s / static_cast<double>(es.finished_returns.size());
    }
    const double steps = std::max<long>(1, es.steps);
    log.nlts = es.nlts_sum / steps;
    log.nats = es.nats_sum / steps;
    log.mean_level = env_.mean_level();
    log.latent_loss = hs.swav;
    log.velocity_loss = hs.velocity;
    log.surrogate = ps.surrogate_loss;
    log.value_loss = ps.value_loss;
    log.entropy = ps.entropy;
    log.kl = ps.kl;
    log.lr = lr_;
    log.clip_fraction = ps.clip_fraction;
    for (int k = 0; k < rewards::kNumTerms; ++k)
      log.term_means[k] = es.term_sums[k] / steps;
    metrics_.append(log);
    last_log_ = log;
    iteration_ += 1;
    if (!opts_.quiet && iteration_ % 10 == 0)
      std::cerr << "iter " << iteration_ << " nlts " << log.nlts << " reward "
                << log.reward_mean << " level " << log.mean_level << "\n";
    if (!opts_.out_dir.empty() && cfg_.checkpoint_interval > 0 &&
        iteration_ % cfg_.checkpoint_interval == 0)
      save_checkpoint(opts_.out_dir + "/ckpt_" + std::to_string(iteration_) +
                      ".bin");
  }

  const IterationLog& last_log() const { return last_log_; }

  // ---- checkpointing ------------------------------------------------------

  void save_checkpoint(const std::string& path) {
    ckpt::Writer w;
    w.add_text("config", serialize(cfg_));
    auto fl = opts_.ablation.pack();
    w.add("ablation", fl.data(), static_cast<long>(fl.size()));
    w.add_scalar("iteration", iteration_);
    w.add_scalar("lr", lr_);
    w.add_scalar("bad_streak", static_cast<std::int64_t>(bad_streak_));
    detail::add_mlp(w, "him.source", him_.source);
    detail::add_mlp(w, "him.target", him_.target);
    w.add("him.prototypes", him_.prototypes.data(),
          static_cast<long>(him_.prototypes.size()));
    detail::add_mlp(w, "ac.actor", ac_.actor);
    detail::add_mlp(w, "ac.critic", ac_.critic);
    w.add("ac.log_std", ac_.log_std.data(), static_cast<long>(ac_.log_std.size()));
    w.add("him.adam.m", him_adam_.m.data(), static_cast<long>(him_adam_.m.size()));
    w.add("him.adam.v", him_adam_.v.data(), static_cast<long>(him_adam_.v.size()));
    w.add_scalar("him.adam.step", static_cast<std::int64_t>(him_adam_.step));
    w.add("ppo.adam.m", ppo_adam_.m.data(), static_cast<long>(ppo_adam_.m.size()));
    w.add("ppo.adam.v", ppo_adam_.v.data(), static_cast<long>(ppo_adam_.v.size()));
    w.add_scalar("ppo.adam.step", static_cast<std::int64_t>(ppo_adam_.step));
    env_.visit_state([&](const char* name, auto* ptr, long n) { w.add(name, ptr, n); });
    w.write(path);
  }

  void load_checkpoint(const std::string& path) {
    ckpt::Reader r(path);
    TrainConfig ck = parse_config_text(r.get_text("config"), path + ":config");
    // resumption must reproduce the original run: everything except the
    // iteration budget and worker count has to match
    TrainConfig a = ck, b = cfg_;
    a.num_iterations = b.num_iterations;
    a.workers = b.workers;
    if (!(a == b))
      throw ckpt::CheckpointError(
          "checkpoint config is incompatible with the provided config");
    std::array<std::uint8_t, 6> fl{};
    r.get("ablation", fl.data(), static_cast<long>(fl.size()));
    AblationFlags ck_fl;
    ck_fl.unpack(fl);
    if (!(ck_fl == opts_.ablation))
      throw ckpt::CheckpointError("checkpoint ablation flags do not match");
    iteration_ = r.get_scalar_i64("iteration");
    lr_ = r.get_scalar_f64("lr");
    bad_streak_ = static_cast<int>(r.get_scalar_i64("bad_streak"));
    detail::get_mlp(r, "him.source", him_.source);
    detail::get_mlp(r, "him.target", him_.target);
    r.get("him.prototypes", him_.prototypes.data(),
          static_cast<long>(him_.prototypes.size()));
    detail::get_mlp(r, "ac.actor", ac_.actor);
    detail::get_mlp(r, "ac.critic", ac_.critic);
    r.get("ac.log_std", ac_.log_std.data(), static_cast<long>(ac_.log_std.size()));
    r.get("him.adam.m", him_adam_.m.data(), static_cast<long>(him_adam_.m.size()));
    r.get("him.adam.v", him_adam_.v.data(), static_cast<long>(him_adam_.v.size()));
    him_adam_.step = r.get_scalar_i64("him.adam.step");
    r.get("ppo.adam.m", ppo_adam_.m.data(), static_cast<long>(ppo_adam_.m.size()));
    r.get("ppo.adam.v", ppo_adam_.v.data(), static_cast<long>(ppo_adam_.v.size()));
    ppo_adam_.step = r.get_scalar_i64("ppo.adam.step");
    env_.visit_state([&](const char* name, auto* ptr, long n) { r.get(name, ptr, n); });
  }

 private:
  bool joint_mode() const {
    return cfg_.ppo.joint_him_gradient && !opts_.ablation.oracle_mode;
  }

  // [obs | v_hat | l_hat], with the ablation zero switches applied
  void assemble_actor_in(const MatX& hist, MatX& out) {
    if (opts_.ablation.oracle_mode) {
      env_.write_critic_history(out);
      return;
    }
    out.resize(env_.num_envs(), actor_in_dim_);
    out.leftCols(kObsDim) = env_.obs();
    him::Embedding<float> emb = him::encode_source<float>(him_, hist, nullptr, &pool_);
    out.middleCols(kObsDim, 3) = opts_.ablation.zero_velocity_input
                                     ? MatX::Zero(env_.num_envs(), 3)
                                     : emb.vel;
    out.rightCols(latent_dim_) = opts_.ablation.zero_latent_input
                                     ? MatX::Zero(env_.num_envs(), latent_dim_)
                                     : emb.latent;
  }

  void gather_minibatch(const std::vector<long>& perm, long lo, long B) {
    mb_actor_in_.resize(B, actor_in_dim_);
    mb_critic_.resize(B, env_.critic_dim());
    mb_actions_.resize(B, kNumActions);
    mb_mean_old_.resize(B, kNumActions);
    mb_logp_.resize(B);
    mb_adv_.resize(B);
    mb_returns_.resize(B);
    if (joint_mode()) mb_hist_.resize(B, env_.hist_dim());
    for (long k = 0; k < B; ++k) {
      const long r = perm[static_cast<size_t>(lo + k)];
      mb_actor_in_.row(k) = buffer_.actor_in.row(r);
      mb_critic_.row(k) = buffer_.critic_obs.row(r);
      mb_actions_.row(k) = buffer_.actions.row(r);
      mb_mean_old_.row(k) = buffer_.mean_old.row(r);
      mb_logp_[k] = buffer_.logp_old[r];
      mb_adv_[k] = buffer_.advantage[r];
      mb_returns_[k] = buffer_.returns[r];
      if (joint_mode()) mb_hist_.row(k) = buffer_.hist.row(r);
    }
  }

  void snapshot() {
    snap_him_ = him_;
    snap_ac_ = ac_;
    snap_him_adam_ = him_adam_;
    snap_ppo_adam_ = ppo_adam_;
    snap_lr_ = lr_;
  }
  void restore() {
    // parameter sets hold raw pointers: copy array contents back instead of
    // reassigning the structures
    copy_mlp(snap_him_.source, him_.source);
    copy_mlp(snap_him_.target, him_.target);
    him_.prototypes = snap_him_.prototypes;
    copy_mlp(snap_ac_.actor, ac_.actor);
    copy_mlp(snap_ac_.critic, ac_.critic);
    ac_.log_std = snap_ac_.log_std;
    him_adam_ = snap_him_adam_;
    ppo_adam_ = snap_ppo_adam_;
    lr_ = snap_lr_;
  }
  static void copy_mlp(const nn::Mlp<float>& src, nn::Mlp<float>& dst) {
    for (size_t l = 0; l < src.layers.size(); ++l) {
      dst.layers[l].W = src.layers[l].W;
      dst.layers[l].b = src.layers[l].b;
    }
  }

  TrainConfig cfg_;
  TrainerOptions opts_;
  ThreadPool pool_;
  VecEnv env_;
  him::Model<float> him_;
  ppo::ActorCritic<float> ac_;
  int latent_dim_ = 16, actor_in_dim_ = 0;
  double lr_ = 1e-3;
  std::int64_t iteration_ = 0;
  int bad_streak_ = 0;
  bool warned_short_ = false;

  nn::ParamSet<float> him_params_, him_grad_refs_;
  him::HioGrads<float> him_grads_;
  nn::AdamState<float> him_adam_;
  nn::ParamSet<float> ppo_params_, ppo_grad_refs_;
  nn::MlpGrads<float> actor_grads_, critic_grads_, joint_source_grads_;
  nn::Vec<float> log_std_grad_;
  nn::AdamState<float> ppo_adam_;

  ppo::RolloutBuffer buffer_;
  MatX hist_scratch_, actor_in_scratch_;
  MatX hio_hist_, hio_next_, hio_vel_;
  MatX mb_actor_in_, mb_critic_, mb_actions_, mb_mean_old_, mb_hist_;
  Eigen::VectorXf mb_logp_, mb_adv_, mb_returns_;

  him::Model<float> snap_him_;
  ppo::ActorCritic<float> snap_ac_;
  nn::AdamState<float> snap_him_adam_, snap_ppo_adam_;
  double snap_lr_ = 0;

  MetricsWriter metrics_;
  IterationLog last_log_;
};

// Policy-only view of a checkpoint, for evaluation tools.
struct PolicyBundle {
  TrainConfig cfg;
  AblationFlags ablation;
  him::Model<float> him;
  ppo::ActorCritic<float> ac;
  std::int64_t iteration = 0;
};

inline PolicyBundle load_policy(const std::string& path) {
  ckpt::Reader r(path);
  PolicyBundle b;
  b.cfg = parse_config_text(r.get_text("config"), path + ":config");
  std::array<std::uint8_t, 6> fl{};
  r.get("ablation", fl.data(), static_cast<long>(fl.size()));
  b.ablation.unpack(fl);
  b.iteration = r.get_scalar_i64("iteration");
  rng::Stream rs0(b.cfg.seed, rng::Tag::NetInit, 0);
  b.him = him::make_model<float>(kObsDim, b.cfg.him, rs0);
  const int height_pts = b.cfg.env.height_points_per_axis *
                         b.cfg.env.height_points_per_axis;
  const int critic_dim =
      kObsDim + (b.cfg.env.critic_sees_velocity ? 3 : 0) + 3 + height_pts;
  const int actor_in = b.ablation.oracle_mode
                           ? critic_dim * (b.cfg.him.history_len + 1)
                           : kObsDim + 3 + b.cfg.him.latent_dim;
  rng::Stream rs1(b.cfg.seed, rng::Tag::NetInit, 1);
  b.ac = ppo::make_actor_critic<float>(actor_in, critic_dim, kNumActions,
                                       b.cfg.ppo, rs1);
  detail::get_mlp(r, "him.source", b.him.source);
  detail::get_mlp(r, "him.target", b.him.target);
  r.get("him.prototypes", b.him.prototypes.data(),
        static_cast<long>(b.him.prototypes.size()));
  detail::get_mlp(r, "ac.actor", b.ac.actor);
  detail::get_mlp(r, "ac.critic", b.ac.critic);
  r.get("ac.log_std", b.ac.log_std.data(), static_cast<long>(b.ac.log_std.size()));
  return b;
}

}  // namespace quadloco
