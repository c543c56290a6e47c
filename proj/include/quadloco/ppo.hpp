#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "quadloco/config.hpp"
#include "quadloco/him.hpp"
#include "quadloco/nn.hpp"

// Clipped-surrogate PPO with GAE, value regression, entropy bonus and the
// KL-adaptive learning rate. The actor consumes the actor observation
// concatenated with the frozen hybrid embedding (v_hat, l_hat); the critic
// consumes the privileged observation.

namespace quadloco::ppo {

template <class S>
using Mat = nn::Mat<S>;
template <class S>
using Vec = nn::Vec<S>;

template <class S>
struct ActorCritic {
  nn::Mlp<S> actor;
  nn::Vec<S> log_std;  // state-independent, one entry per action dim
  nn::Mlp<S> critic;
};

template <class S>
ActorCritic<S> make_actor_critic(int actor_in, int critic_in, int num_actions,
                                 const PpoConfig& cfg, rng::Stream& rs) {
  ActorCritic<S> ac;
  ac.actor = nn::make_mlp<S>(actor_in, cfg.actor_hidden, num_actions, rs);
  ac.critic = nn::make_mlp<S>(critic_in, cfg.critic_hidden, 1, rs);
  ac.log_std = nn::Vec<S>::Zero(num_actions);
  return ac;
}

// Per-iteration storage, row index = step * num_envs + env.
struct RolloutBuffer {
  int steps = 0, num_envs = 0;
  Mat<float> obs, hist, critic_obs, actor_in;
  Mat<float> actions, mean_old;
  Eigen::VectorXf logp_old, value, reward;
  std::vector<std::uint8_t> terminated, truncated;
  Mat<float> next_obs, next_critic_obs, true_vel;
  Eigen::VectorXf bootstrap_value;  // per env, V(o_T)
  Eigen::VectorXf log_std_old;      // snapshot at collection time
  Eigen::VectorXf advantage, returns;

  long rows() const { return static_cast<long>(steps) * num_envs; }

  void allocate(int T, int N, int obs_dim, int hist_dim, int critic_dim,
                int actor_in_dim, int num_actions) {
    steps = T;
    num_envs = N;
    const long R = rows();
    obs.resize(R, obs_dim);
    hist.resize(R, hist_dim);
    critic_obs.resize(R, critic_dim);
    actor_in.resize(R, actor_in_dim);
    actions.resize(R, num_actions);
    mean_old.resize(R, num_actions);
    logp_old.resize(R);
    value.resize(R);
    reward.resize(R);
    terminated.assign(R, 0);
    truncated.assign(R, 0);
    next_obs.resize(R, obs_dim);
    next_critic_obs.resize(R, critic_dim);
    true_vel.resize(R, 3);
    bootstrap_value.resize(N);
    advantage.resize(R);
    returns.resize(R);
  }
};

// Backward GAE recursion with done-masking, in double precision:
//   delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
//   A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// `rewards str`, `values`, `dones` are (T x N); bootstrap is V at step T.
inline void compute_gae(const Eigen::MatrixXd& rewards,
                        const Eigen::MatrixXd& values,
                        const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                            Eigen::Dynamic>& dones,
                        const Eigen::VectorXd& bootstrap, double gamma,
                        double lambda, Eigen::MatrixXd& advantages,
                        Eigen::MatrixXd& returns) {
  const long T = rewards.rows(), N = rewards.cols();
  advantages.resize(T, N);
  returns.resize(T, N);
  for (long i = 0; i < N; ++i) {
    double adv = 0.0;
    for (long t = T - 1; t >= 0; --t) {
      const double not_done = dones(t, i) ? 0.0 : 1.0;
      const double v_next = (t == T - 1) ? bootstrap[i] : values(t + 1, i);
      const double delta =
          rewards(t, i) + gamma * v_next * not_done - values(t, i);
      adv = delta + gamma * lambda * not_done * adv;
      advantages(t, i) = adv;
      returns(t, i) = adv + values(t, i);
    }
  }
}

// In-place standardization to zero mean, unit std over the whole update.
inline void normalize_advantages(Eigen::VectorXf& adv) {
  const long n = adv.size();
  double mean = 0;
  for (long i = 0; i < n; ++i) mean += adv[i];
  mean /= static_cast<double>(n);
  double var = 0;
  for (long i = 0; i < n; ++i) {
    const double d = adv[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (long i = 0; i < n; ++i)
    adv[i] = static_cast<float>((adv[i] - mean) * inv);
}

struct PpoStats {
  double surrogate_loss = 0, value_loss = 0, entropy = 0;
  double kl = 0;             // mean over minibatches
  double clip_fraction = 0;  // fraction of ratios outside 1 +- clip
  double lr_after = 0;
  bool finite = true;
};

// Losses and input-side gradients for one minibatch. Exposed separately so
// the gradient-check and policy-gradient-equivalence tests can drive it.
template <class S>
struct SurrogateOut {
  double surrogate = 0, value_loss = 0, entropy = 0, kl = 0, clip_fraction = 0;
  Mat<S> d_mean;      // B x A
  Vec<S> d_log_std;   // A
  Vec<S> d_value;     // B
};

template <class S>
SurrogateOut<S> surrogate_losses(const Mat<S>& mean_new, const Vec<S>& log_std,
                                 const Mat<S>& actions, const Vec<S>& logp_old,
                                 const Vec<S>& adv, const Vec<S>& value_new,
                                 const Vec<S>& returns, const Mat<S>& mean_old,
                                 const Vec<S>& log_std_old,
                                 const PpoConfig& cfg) {
  const long B = mean_new.rows(), A = mean_new.cols();
  SurrogateOut<S> out;
  out.d_mean = Mat<S>::Zero(B, A);
  out.d_log_std = Vec<S>::Zero(A);
  out.d_value = Vec<S>::Zero(B);

  Vec<S> inv_var(A);
  for (long j = 0; j < A; ++j)
    inv_var[j] = static_cast<S>(std::exp(-2.0 * static_cast<double>(log_std[j])));

  const Vec<S> logp_new = nn::gaussian_log_prob(mean_new, log_std, actions);
  double surr_acc = 0;
  long clipped = 0;
  const double eps = cfg.clip_range;
  for (long i = 0; i < B; ++i) {
    const double ratio =
        std::exp(static_cast<double>(logp_new[i]) - static_cast<double>(logp_old[i]));
    const double a = adv[i];
    const double unclipped = ratio * a;
    const double rc = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    const double clipped_v = rc * a;
    surr_acc += std::min(unclipped, clipped_v);
    if (std::abs(ratio - 1.0) > eps) ++clipped;
    // gradient flows only through the active, unclipped branch
    if (unclipped <= clipped_v) {
      const double coef = -a * ratio / static_cast<double>(B);
      for (long j = 0; j < A; ++j) {
        const double diff = actions(i, j) - mean_new(i, j);
        out.d_mean(i, j) = static_cast<S>(coef * diff * inv_var[j]);
        out.d_log_std[j] +=
            static_cast<S>(coef * (diff * diff * inv_var[j] - 1.0));
      }
    }
  }
  out.surrogate = -surr_acc / static_cast<double>(B);
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(B);

  double v_acc = 0;
  for (long i = 0; i < B; ++i) {
    const double d = value_new[i] - returns[i];
    v_acc += d * d;
    out.d_value[i] = static_cast<S>(cfg.value_coef * 2.0 * d / static_cast<double>(B));
  }
  out.value_loss = v_acc / static_cast<double>(B);

  out.entropy = nn::gaussian_entropy(log_std);
  for (long j = 0; j < A; ++j)
    out.d_log_std[j] -= static_cast<S>(cfg.entropy_coef);

  out.kl = nn::gaussian_kl(mean_old, log_std_old, mean_new, log_std);
  return out;
}

}  // namespace quadloco::ppo
