#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "quadloco/config.hpp"
#include "quadloco/nn.hpp"

// Hybrid internal model: a source encoder maps an observation history to an
// explicit velocity estimate plus an implicit latent on the unit sphere; a
// target encoder maps the successor frame to the same sphere. Assignment
// probabilities against a trainable prototype bank are trained with a
// swapped-prediction objective whose targets come from Sinkhorn-Knopp, plus
// direct velocity regression.

namespace quadloco::him {

template <class S>
using Mat = nn::Mat<S>;
template <class S>
using Vec = nn::Vec<S>;

template <class S>
struct Model {
  nn::Mlp<S> source;  // hist_dim -> (3 + latent_dim)
  nn::Mlp<S> target;  // obs_dim -> latent_dim
  Mat<S> prototypes;  // K x latent_dim, raw; rows are L2-normalized at use
  int latent_dim = 16;
};

template <class S>
Model<S> make_model(int obs_dim, const HimConfig& cfg, rng::Stream& rs) {
  Model<S> m;
  m.latent_dim = cfg.latent_dim;
  const int hist_dim = obs_dim * (cfg.history_len + 1);
  m.source = nn::make_mlp<S>(hist_dim, cfg.encoder_hidden, 3 + cfg.latent_dim, rs);
  m.target = nn::make_mlp<S>(obs_dim, cfg.target_hidden, cfg.latent_dim, rs);
  m.prototypes =
      nn::orthogonal_matrix(cfg.num_prototypes, cfg.latent_dim, rs).template cast<S>();
  return m;
}

template <class S>
struct Embedding {
  Mat<S> vel;     // B x 3
  Mat<S> latent;  // B x latent_dim, unit rows
};

// History -> (velocity estimate, unit latent). Pass a tape to keep the
// activations needed for a backward pass.
template <class S>
Embedding<S> encode_source(const Model<S>& m, const Mat<S>& hist,
                           nn::Tape<S>* tape = nullptr,
                           ThreadPool* pool = nullptr, Mat<S>* raw_latent = nullptr,
                           Vec<S>* norms = nullptr) {
  Mat<S> out = nn::forward(m.source, hist, tape, pool);
  Embedding<S> e;
  e.vel = out.leftCols(3);
  Mat<S> raw = out.rightCols(m.latent_dim);
  Vec<S> n;
  nn::rows_normalize(raw, e.latent, n);
  if (raw_latent) *raw_latent = std::move(raw);
  if (norms) *norms = std::move(n);
  return e;
}

template <class S>
Mat<S> encode_target(const Model<S>& m, const Mat<S>& next_obs,
                     nn::Tape<S>* tape = nullptr, ThreadPool* pool = nullptr,
                     Vec<S>* norms = nullptr) {
  Mat<S> raw = nn::forward(m.target, next_obs, tape, pool);
  Mat<S> unit;
  Vec<S> n;
  nn::rows_normalize(raw, unit, n);
  if (norms) *norms = std::move(n);
  return unit;
}

// Softmax over prototype similarities, Eq. 1. `latents` rows and `protos_unit`
// rows must be unit vectors.
template <class S>
Mat<S> assign_probs(const Mat<S>& latents, const Mat<S>& protos_unit, double tau) {
  Mat<S> z = latents * protos_unit.transpose() / static_cast<S>(tau);
  Mat<S> p(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    double mx = -1e300;
    for (long k = 0; k < z.cols(); ++k) mx = std::max(mx, static_cast<double>(z(i, k)));
    double sum = 0;
    for (long k = 0; k < z.cols(); ++k) {
      double e = std::exp(static_cast<double>(z(i, k)) - mx);
      p(i, k) = static_cast<S>(e);
      sum += e;
    }
    p.row(i) /= static_cast<S>(sum);
  }
  return p;
}

// Sinkhorn-Knopp equipartition targets. Starting from exp(scores/eps),
// alternately normalizes columns to mass 1/K and rows to mass 1/B, n_iter
// times, then rescales rows to sum 1. Internally double precision.
template <class S>
Mat<S> sinkhorn(const Mat<S>& scores, double eps, int n_iter) {
  const long B = scores.rows(), K = scores.cols();
  Eigen::MatrixXd q(B, K);
  double mx = -1e300;
  for (long i = 0; i < B; ++i) {
    bool any = false;
    for (long k = 0; k < K; ++k) {
      double v = static_cast<double>(scores(i, k));
      if (!std::isfinite(v)) {
        if (v > 0) throw std::invalid_argument("sinkhorn: non-finite score");
        q(i, k) = -std::numeric_limits<double>::infinity();
        continue;
      }
      any = true;
      q(i, k) = v;
      mx = std::max(mx, v);
    }
    if (!any) throw std::invalid_argument("sinkhorn: degenerate score row");
  }
  q = ((q.array() - mx) / eps).exp();
  for (int it = 0; it < n_iter; ++it) {
    Eigen::RowVectorXd cs = q.colwise().sum();
    for (long k = 0; k < K; ++k)
      if (cs[k] > 0) q.col(k) /= cs[k] * static_cast<double>(K);
    Eigen::VectorXd rs = q.rowwise().sum();
    for (long i = 0; i < B; ++i)
      if (rs[i] > 0) q.row(i) /= rs[i] * static_cast<double>(B);
  }
  Eigen::VectorXd rs = q.rowwise().sum();
  for (long i = 0; i < B; ++i)
    if (rs[i] > 0) q.row(i) /= rs[i];
  return q.template cast<S>();
}

// Swapped-prediction objective, Eq. 2, as a minimization loss:
// -(1/2B) sum_i (q_s . log p_t + q_t . log p_s).
template <class S>
double swav_loss(const Mat<S>& p_source, const Mat<S>& p_target,
                 const Mat<S>& q_source, const Mat<S>& q_target) {
  const long B = p_source.rows(), K = p_source.cols();
  double acc = 0;
  for (long i = 0; i < B; ++i)
    for (long k = 0; k < K; ++k) {
      double lpt = std::log(std::max(static_cast<double>(p_target(i, k)), 1e-12));
      double lps = std::log(std::max(static_cast<double>(p_source(i, k)), 1e-12));
      acc += static_cast<double>(q_source(i, k)) * lpt +
             static_cast<double>(q_target(i, k)) * lps;
    }
  return -acc / (2.0 * static_cast<double>(B));
}

template <class S>
double velocity_loss(const Mat<S>& v_hat, const Mat<S>& v_true) {
  return (v_hat - v_true).squaredNorm() /
         static_cast<double>(v_hat.rows() * v_hat.cols());
}

struct HioStats {
  double swav = 0;        // swapped-prediction loss (or regression loss)
  double velocity = 0;
  long pairs = 0;
  bool finite = true;
};

template <class S>
struct HioGrads {
  nn::MlpGrads<S> source, target;
  Mat<S> prototypes;
  void init_like(const Model<S>& m) {
    source.init_like(m.source);
    target.init_like(m.target);
    prototypes = Mat<S>::Zero(m.prototypes.rows(), m.prototypes.cols());
  }
  void zero() {
    source.zero();
    target.zero();
    prototypes.setZero();
  }
};

// One evaluation of the HIO objective on a pair batch, optionally with
// gradients. Sinkhorn targets are constants: when `fixed_q_*` are given they
// are used verbatim (the finite-difference tests rely on this to probe the
// same stop-gradient semantics the analytic path uses).
template <class S>
HioStats hio_compute(const Model<S>& model, const Mat<S>& hist,
                     const Mat<S>& next_obs, const Mat<S>& vel_true,
                     const HimConfig& cfg, bool regression_mode,
                     HioGrads<S>* grads, ThreadPool* pool = nullptr,
                     const Mat<S>* fixed_q_s = nullptr,
                     const Mat<S>* fixed_q_t = nullptr) {
  const long B = hist.rows();
  HioStats stats;
  stats.pairs = B;

  nn::Tape<S> tape_s, tape_t;
  Mat<S> raw_s;
  Vec<S> norms_s, norms_t, norms_p;
  Embedding<S> emb = encode_source(model, hist, grads ? &tape_s : nullptr, pool,
                                   &raw_s, &norms_s);
  Mat<S> l_t = encode_target(model, next_obs, grads ? &tape_t : nullptr, pool,
                             &norms_t);
  Mat<S> protos_unit;
  nn::rows_normalize(model.prototypes, protos_unit, norms_p);

  const double cs = cfg.contrastive_scale, vs = cfg.velocity_scale;
  Mat<S> dlatent_s = Mat<S>::Zero(B, model.latent_dim);
  Mat<S> dlatent_t = Mat<S>::Zero(B, model.latent_dim);
  Mat<S> dproto_unit = Mat<S>::Zero(protos_unit.rows(), protos_unit.cols());

  if (cs != 0.0) {
    if (regression_mode) {
      // MSE between the source latent and the (gradient-stopped) target latent
      Mat<S> diff = emb.latent - l_t;
      stats.swav = diff.squaredNorm() / static_cast<double>(B * model.latent_dim);
      if (grads)
        dlatent_s = diff * static_cast<S>(2.0 * cs / static_cast<double>(B * model.latent_dim));
    } else {
      Mat<S> scores_s = emb.latent * protos_unit.transpose();
      Mat<S> scores_t = l_t * protos_unit.transpose();
      Mat<S> p_s = assign_probs(emb.latent, protos_unit, cfg.temperature);
      Mat<S> p_t = assign_probs(l_t, protos_unit, cfg.temperature);
      Mat<S> q_s = fixed_q_s ? *fixed_q_s
                             : sinkhorn(scores_s, cfg.sinkhorn_epsilon,
                                        cfg.sinkhorn_iters);
      Mat<S> q_t = fixed_q_t ? *fixed_q_t
                             : sinkhorn(scores_t, cfg.sinkhorn_epsilon,
                                        cfg.sinkhorn_iters);
      stats.swav = swav_loss(p_s, p_t, q_s, q_t);
      if (grads) {
        const S c = static_cast<S>(cs / (2.0 * static_cast<double>(B)));
        Mat<S> dz_s = (p_s - q_t) * c;  // d loss / d (scores_s / tau)
        Mat<S> dz_t = (p_t - q_s) * c;
        const S inv_tau = static_cast<S>(1.0 / cfg.temperature);
        dlatent_s = dz_s * protos_unit * inv_tau;
        dlatent_t = dz_t * protos_unit * inv_tau;
        dproto_unit =
            (dz_s.transpose() * emb.latent + dz_t.transpose() * l_t) * inv_tau;
      }
    }
  }

  stats.velocity = velocity_loss(emb.vel, vel_true);
  if (!std::isfinite(stats.swav) || !std::isfinite(stats.velocity))
    stats.finite = false;

  if (grads) {
    Mat<S> dout(B, 3 + model.latent_dim);
    dout.leftCols(3) =
        (emb.vel - vel_true) *
        static_cast<S>(2.0 * vs / static_cast<double>(B * 3));
    dout.rightCols(model.latent_dim) =
        nn::rows_normalize_backward(emb.latent, norms_s, dlatent_s);
    nn::backward(model.source, tape_s, dout, grads->source, pool);
    Mat<S> draw_t = nn::rows_normalize_backward(l_t, norms_t, dlatent_t);
    nn::backward(model.target, tape_t, draw_t, grads->target, pool);
    // accumulate in place: callers hold raw references into the grad arrays
    if (cfg.train_prototypes)
      grads->prototypes +=
          nn::rows_normalize_backward(protos_unit, norms_p, dproto_unit);
  }
  return stats;
}

}  // namespace quadloco::him
