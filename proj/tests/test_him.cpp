#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "quadloco/him.hpp"

using namespace quadloco;
using Catch::Approx;

namespace {

// Straight-loop Sinkhorn oracle, independent of the Eigen implementation.
std::vector<std::vector<double>> sinkhorn_oracle(
    const std::vector<std::vector<double>>& scores, double eps, int iters) {
  const size_t B = scores.size(), K = scores[0].size();
  double mx = -1e300;
  for (const auto& row : scores)
    for (double v : row) mx = std::max(mx, v);
  std::vector<std::vector<double>> q(B, std::vector<double>(K));
  for (size_t i = 0; i < B; ++i)
    for (size_t k = 0; k < K; ++k) q[i][k] = std::exp((scores[i][k] - mx) / eps);
  for (int it = 0; it < iters; ++it) {
    for (size_t k = 0; k < K; ++k) {
      double cs = 0;
      for (size_t i = 0; i < B; ++i) cs += q[i][k];
      for (size_t i = 0; i < B; ++i) q[i][k] /= cs * static_cast<double>(K);
    }
    for (size_t i = 0; i < B; ++i) {
      double rs = 0;
      for (size_t k = 0; k < K; ++k) rs += q[i][k];
      for (size_t k = 0; k < K; ++k) q[i][k] /= rs * static_cast<double>(B);
    }
  }
  for (size_t i = 0; i < B; ++i) {
    double rs = 0;
    for (size_t k = 0; k < K; ++k) rs += q[i][k];
    for (size_t k = 0; k < K; ++k) q[i][k] /= rs;
  }
  return q;
}

nn::Mat<double> random_unit_rows(long b, long d, std::uint64_t seed) {
  rng::Stream rs(seed, rng::Tag::Test);
  nn::Mat<double> raw(b, d);
  for (long k = 0; k < raw.size(); ++k) raw.data()[k] = rs.normal();
  nn::Mat<double> unit;
  nn::Vec<double> norms;
  nn::rows_normalize(raw, unit, norms);
  return unit;
}

HimConfig small_him() {
  HimConfig h;
  h.history_len = 2;
  h.latent_dim = 6;
  h.num_prototypes = 4;
  h.encoder_hidden = {12, 8};
  h.target_hidden = {8};
  return h;
}

}  // namespace

TEST_CASE("encoder output dims are (3, latent) and deterministic") {
  HimConfig cfg;  // defaults: H=5, latent 16, trunk 512-256-128
  rng::Stream rs(1, rng::Tag::Test);
  auto model = him::make_model<double>(45, cfg, rs);
  REQUIRE(model.source.in_dim() == 45 * 6);
  REQUIRE(model.source.out_dim() == 3 + 16);
  REQUIRE(model.target.in_dim() == 45);
  REQUIRE(model.target.out_dim() == 16);
  REQUIRE(model.prototypes.rows() == 16);
  REQUIRE(model.prototypes.cols() == 16);

  nn::Mat<double> hist = nn::Mat<double>::Random(3, 45 * 6);
  auto e1 = him::encode_source(model, hist);
  auto e2 = him::encode_source(model, hist);
  CHECK(e1.vel.rows() == 3);
  CHECK(e1.vel.cols() == 3);
  CHECK(e1.latent.cols() == 16);
  CHECK((e1.vel - e2.vel).cwiseAbs().maxCoeff() == 0.0);
  CHECK((e1.latent - e2.latent).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 3; ++i)
    CHECK(e1.latent.row(i).norm() == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero-weight encoder: velocity zero, latent uses the degenerate rule") {
  HimConfig cfg = small_him();
  rng::Stream rs(2, rng::Tag::Test);
  auto model = him::make_model<double>(5, cfg, rs);
  for (auto& l : model.source.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  nn::Mat<double> hist = nn::Mat<double>::Random(4, 15);
  auto e = him::encode_source(model, hist);
  CHECK(e.vel.cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(e.latent(i, 0) == 1.0);  // fixed basis vector
    CHECK(e.latent.row(i).tail(cfg.latent_dim - 1).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("target encoder maps equal frames to equal latents") {
  HimConfig cfg = small_him();
  rng::Stream rs(3, rng::Tag::Test);
  auto model = him::make_model<double>(5, cfg, rs);
  nn::Mat<double> two(2, 5);
  two.row(0) << 1, 2, 3, 4, 5;
  two.row(1) << 1, 2, 3, 4, 5;
  auto l = him::encode_target(model, two);
  CHECK((l.row(0) - l.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(l.cols() == cfg.latent_dim);
}

TEST_CASE("assign_probs rows sum to one and respect closed forms") {
  const int K = 16, D = 16;
  // mutually orthogonal unit prototypes = identity rows
  nn::Mat<double> protos = nn::Mat<double>::Identity(K, D);
  nn::Mat<double> l(1, D);
  l.setZero();
  l(0, 0) = 1.0;  // equals prototype 1
  auto p = him::assign_probs(l, protos, 1.0);
  CHECK(p.row(0).sum() == Approx(1.0).epsilon(1e-9));
  // p1 = e / (e + 15)
  CHECK(p(0, 0) == Approx(std::exp(1.0) / (std::exp(1.0) + 15.0)).epsilon(1e-9));

  // enormous temperature flattens to 1/K
  auto pu = him::assign_probs(l, protos, 1e6);
  for (int k = 0; k < K; ++k) CHECK(pu(0, k) == Approx(1.0 / K).margin(1e-6));
}

TEST_CASE("assign_probs invariances") {
  auto latents = random_unit_rows(8, 6, 11);
  rng::Stream rs(12, rng::Tag::Test);
  nn::Mat<double> raw_protos(4, 6);
  for (long k = 0; k < raw_protos.size(); ++k) raw_protos.data()[k] = rs.normal();
  nn::Mat<double> protos_unit;
  nn::Vec<double> norms;
  nn::rows_normalize(raw_protos, protos_unit, norms);

  auto p1 = him::assign_probs(latents, protos_unit, 0.1);
  for (long i = 0; i < p1.rows(); ++i)
    REQUIRE(p1.row(i).sum() == Approx(1.0).margin(1e-6));

  // scaling a raw prototype then re-normalizing changes nothing
  nn::Mat<double> scaled = raw_protos;
  scaled.row(0) *= 5.0;
  nn::Mat<double> scaled_unit;
  nn::rows_normalize(scaled, scaled_unit, norms);
  auto p2 = him::assign_probs(latents, scaled_unit, 0.1);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-12);

  // temperature changes probabilities but not the argmax
  auto p3 = him::assign_probs(latents, protos_unit, 0.789);
  for (long i = 0; i < p1.rows(); ++i) {
    long a1, a3;
    p1.row(i).maxCoeff(&a1);
    p3.row(i).maxCoeff(&a3);
    REQUIRE(a1 == a3);
  }
}

TEST_CASE("sinkhorn: constant scores give the uniform assignment") {
  nn::Mat<double> scores = nn::Mat<double>::Constant(10, 4, 0.7);
  auto q = him::sinkhorn(scores, 0.05, 3);
  for (long i = 0; i < q.rows(); ++i)
    for (long k = 0; k < q.cols(); ++k)
      REQUIRE(q(i, k) == Approx(0.25).margin(1e-12));
}

TEST_CASE("sinkhorn matches the straight-loop oracle") {
  rng::Stream rs(13, rng::Tag::Test);
  // the 2x2 case from first principles
  std::vector<std::vector<double>> s2 = {{1, 0}, {0, 1}};
  nn::Mat<double> s2m(2, 2);
  s2m << 1, 0, 0, 1;
  auto q2 = him::sinkhorn(s2m, 0.05, 3);
  auto o2 = sinkhorn_oracle(s2, 0.05, 3);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k)
      REQUIRE(q2(i, k) == Approx(o2[i][k]).margin(1e-6));
  CHECK(q2(0, 0) > 0.95);  // near-diagonal
  CHECK(q2(1, 1) > 0.95);

  // random rectangular cases
  for (int rep = 0; rep < 5; ++rep) {
    const int B = 64, K = 8;
    std::vector<std::vector<double>> s(B, std::vector<double>(K));
    nn::Mat<double> sm(B, K);
    for (int i = 0; i < B; ++i)
      for (int k = 0; k < K; ++k) {
        s[i][k] = rs.uniform(-1.0, 1.0);
        sm(i, k) = s[i][k];
      }
    auto q = him::sinkhorn(sm, 0.05, 3);
    auto o = sinkhorn_oracle(s, 0.05, 3);
    for (int i = 0; i < B; ++i)
      for (int k = 0; k < K; ++k)
        REQUIRE(q(i, k) == Approx(o[i][k]).margin(1e-6));
  }
}

TEST_CASE("sinkhorn marginals: rows exact, columns near B/K") {
  rng::Stream rs(14, rng::Tag::Test);
  const int B = 256, K = 16;
  nn::Mat<double> s(B, K);
  for (long k = 0; k < s.size(); ++k) s.data()[k] = rs.uniform(-1.0, 1.0);

  auto q3 = him::sinkhorn(s, 0.05, 3);
  for (int i = 0; i < B; ++i)
    REQUIRE(q3.row(i).sum() == Approx(1.0).margin(1e-5));

  // at convergence the column sums reach equipartition B/K
  auto q40 = him::sinkhorn(s, 0.05, 40);
  for (int k = 0; k < K; ++k)
    REQUIRE(q40.col(k).sum() == Approx(static_cast<double>(B) / K).epsilon(1e-3));
}

TEST_CASE("sinkhorn rejects degenerate rows") {
  nn::Mat<double> s(2, 3);
  s.setConstant(-std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(him::sinkhorn(s, 0.05, 3), std::invalid_argument);
}

TEST_CASE("swav loss closed forms") {
  const int B = 4, K = 16;
  // matching one-hot p and q: loss exactly 0
  nn::Mat<double> onehot = nn::Mat<double>::Zero(B, K);
  for (int i = 0; i < B; ++i) onehot(i, i % K) = 1.0;
  CHECK(him::swav_loss(onehot, onehot, onehot, onehot) == 0.0);

  // all-uniform: ln K
  nn::Mat<double> u = nn::Mat<double>::Constant(B, K, 1.0 / K);
  CHECK(him::swav_loss(u, u, u, u) == Approx(std::log(16.0)).margin(1e-9));

  // swapping source and target roles leaves the loss unchanged
  nn::Mat<double> p_s = random_unit_rows(B, K, 21).cwiseAbs();
  nn::Mat<double> p_t = random_unit_rows(B, K, 22).cwiseAbs();
  for (long i = 0; i < B; ++i) {
    p_s.row(i) /= p_s.row(i).sum();
    p_t.row(i) /= p_t.row(i).sum();
  }
  auto q_s = him::sinkhorn(p_s, 0.1, 3);
  auto q_t = him::sinkhorn(p_t, 0.1, 3);
  const double a = him::swav_loss(p_s, p_t, q_s, q_t);
  const double b = him::swav_loss(p_t, p_s, q_t, q_s);
  CHECK(a == Approx(b).epsilon(1e-12));
  CHECK(a >= 0.0);
}

TEST_CASE("velocity loss") {
  nn::Mat<double> v = nn::Mat<double>::Random(8, 3);
  CHECK(him::velocity_loss(v, v) == 0.0);

  nn::Mat<double> off = v;
  off.col(1).array() += 1.0;  // unit offset in one component
  CHECK(him::velocity_loss(off, v) == Approx(1.0 / 3.0).epsilon(1e-12));

  // permutation invariance
  nn::Mat<double> vp = v, op = off;
  vp.row(0).swap(vp.row(5));
  op.row(0).swap(op.row(5));
  CHECK(him::velocity_loss(op, vp) == Approx(him::velocity_loss(off, v)).epsilon(1e-12));
}

TEST_CASE("hio gradients match finite differences with frozen targets") {
  HimConfig cfg = small_him();
  const int obs_dim = 5, B = 12;
  rng::Stream rs(31, rng::Tag::Test);
  auto model = him::make_model<double>(obs_dim, cfg, rs);

  nn::Mat<double> hist(B, obs_dim * 3), next(B, obs_dim), vel(B, 3);
  for (long k = 0; k < hist.size(); ++k) hist.data()[k] = rs.normal();
  for (long k = 0; k < next.size(); ++k) next.data()[k] = rs.normal();
  for (long k = 0; k < vel.size(); ++k) vel.data()[k] = rs.normal();

  for (bool regression : {false, true}) {
    // base point: compute q once, freeze it for the finite differences
    him::HioGrads<double> grads;
    grads.init_like(model);
    auto base =
        him::hio_compute<double>(model, hist, next, vel, cfg, regression, &grads);
    nn::Mat<double> protos_unit;
    nn::Vec<double> pn;
    nn::rows_normalize(model.prototypes, protos_unit, pn);
    auto emb = him::encode_source(model, hist);
    auto l_t = him::encode_target(model, next);
    nn::Mat<double> q_s =
        him::sinkhorn<double>(emb.latent * protos_unit.transpose(),
                              cfg.sinkhorn_epsilon, cfg.sinkhorn_iters);
    nn::Mat<double> q_t =
        him::sinkhorn<double>(l_t * protos_unit.transpose(),
                              cfg.sinkhorn_epsilon, cfg.sinkhorn_iters);

    auto loss = [&] {
      auto st = him::hio_compute<double>(model, hist, next, vel, cfg, regression,
                                         nullptr, nullptr, &q_s, &q_t);
      return cfg.contrastive_scale * st.swav + cfg.velocity_scale * st.velocity;
    };

    std::vector<double*> ptrs;
    std::vector<double> analytic;
    for (size_t l = 0; l < model.source.layers.size(); ++l) {
      auto& layer = model.source.layers[l];
      for (long k = 0; k < layer.W.size(); ++k) {
        ptrs.push_back(layer.W.data() + k);
        analytic.push_back(grads.source.dW[l].data()[k]);
      }
      for (long k = 0; k < layer.b.size(); ++k) {
        ptrs.push_back(layer.b.data() + k);
        analytic.push_back(grads.source.db[l].data()[k]);
      }
    }
    if (!regression) {
      for (size_t l = 0; l < model.target.layers.size(); ++l) {
        auto& layer = model.target.layers[l];
        for (long k = 0; k < layer.W.size(); ++k) {
          ptrs.push_back(layer.W.data() + k);
          analytic.push_back(grads.target.dW[l].data()[k]);
        }
        for (long k = 0; k < layer.b.size(); ++k) {
          ptrs.push_back(layer.b.data() + k);
          analytic.push_back(grads.target.db[l].data()[k]);
        }
      }
    } else {
      // the regression target is gradient-stopped: the target encoder must
      // receive exactly nothing
      for (size_t l = 0; l < grads.target.dW.size(); ++l) {
        CHECK(grads.target.dW[l].cwiseAbs().maxCoeff() == 0.0);
        CHECK(grads.target.db[l].cwiseAbs().maxCoeff() == 0.0);
      }
    }
    for (long k = 0; k < model.prototypes.size(); ++k) {
      ptrs.push_back(model.prototypes.data() + k);
      analytic.push_back(grads.prototypes.data()[k]);
    }

    const double h = 1e-5;
    double max_rel = 0;
    for (size_t k = 0; k < ptrs.size(); ++k) {
      const double keep = *ptrs[k];
      *ptrs[k] = keep + h;
      const double lp = loss();
      *ptrs[k] = keep - h;
      const double lm = loss();
      *ptrs[k] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double rel = std::abs(fd - analytic[k]) /
                         std::max({std::abs(fd), std::abs(analytic[k]), 1e-3});
      max_rel = std::max(max_rel, rel);
    }
    INFO((regression ? "regression" : "swav"));
    CHECK(max_rel < 1e-4);
    CHECK(base.finite);
  }
}

TEST_CASE("contrastive_scale zero reduces to pure velocity regression") {
  HimConfig cfg = small_him();
  cfg.contrastive_scale = 0.0;
  const int obs_dim = 5, B = 10;
  rng::Stream rs(41, rng::Tag::Test);
  auto model = him::make_model<double>(obs_dim, cfg, rs);
  nn::Mat<double> hist = nn::Mat<double>::Random(B, obs_dim * 3);
  nn::Mat<double> next = nn::Mat<double>::Random(B, obs_dim);
  nn::Mat<double> vel = nn::Mat<double>::Random(B, 3);

  him::HioGrads<double> g;
  g.init_like(model);
  him::hio_compute<double>(model, hist, next, vel, cfg, false, &g);

  // no latent-side gradient anywhere: prototypes, target encoder untouched,
  // and the latent columns of the source head receive nothing
  CHECK(g.prototypes.cwiseAbs().maxCoeff() == 0.0);
  for (size_t l = 0; l < g.target.dW.size(); ++l)
    CHECK(g.target.dW[l].cwiseAbs().maxCoeff() == 0.0);
  const auto& head = g.source.dW.back();  // last layer: (hidden) x (3 + latent)
  CHECK(head.rightCols(cfg.latent_dim).cwiseAbs().maxCoeff() == 0.0);
  CHECK(head.leftCols(3).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("repeated hio steps shrink the swav loss on a fixed batch") {
  int improved = 0;
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    HimConfig cfg = small_him();
    const int obs_dim = 5, B = 64;
    rng::Stream rs(100 + static_cast<std::uint64_t>(seed), rng::Tag::Test);
    auto model = him::make_model<double>(obs_dim, cfg, rs);
    nn::Mat<double> hist(B, obs_dim * 3), next(B, obs_dim), vel(B, 3);
    for (long k = 0; k < hist.size(); ++k) hist.data()[k] = rs.normal();
    for (long k = 0; k < next.size(); ++k) next.data()[k] = rs.normal();
    for (long k = 0; k < vel.size(); ++k) vel.data()[k] = rs.normal();

    nn::ParamSet<double> params, grefs;
    nn::collect(model.source, params);
    nn::collect(model.target, params);
    params.push_back({model.prototypes.data(),
                      static_cast<long>(model.prototypes.size())});
    him::HioGrads<double> g;
    g.init_like(model);
    nn::collect(g.source, grefs);
    nn::collect(g.target, grefs);
    grefs.push_back({g.prototypes.data(), static_cast<long>(g.prototypes.size())});
    nn::AdamState<double> adam;
    adam.init(nn::total_size(params));

    double first = 0, last = 0;
    for (int step = 0; step < 50; ++step) {
      g.zero();
      auto st = him::hio_compute<double>(model, hist, next, vel, cfg, false, &g);
      REQUIRE(st.finite);
      if (step == 0) first = st.swav;
      last = st.swav;
      nn::adam_step(adam, params, grefs, cfg.learning_rate, cfg.adam_epsilon,
                    cfg.grad_clip);
    }
    if (last <= first + 1e-9) ++improved;
  }
  CHECK(improved >= 9);  // >= 95% of seeds modulo the tiny sample
}

TEST_CASE("hio losses stay finite across random batches") {
  HimConfig cfg = small_him();
  rng::Stream rs(55, rng::Tag::Test);
  auto model = him::make_model<float>(5, cfg, rs);
  for (int rep = 0; rep < 100; ++rep) {
    nn::Mat<float> hist(6, 15), next(6, 5), vel(6, 3);
    for (long k = 0; k < hist.size(); ++k)
      hist.data()[k] = static_cast<float>(rs.normal() * 10.0);
    for (long k = 0; k < next.size(); ++k)
      next.data()[k] = static_cast<float>(rs.normal() * 10.0);
    for (long k = 0; k < vel.size(); ++k)
      vel.data()[k] = static_cast<float>(rs.normal() * 3.0);
    auto st = him::hio_compute<float>(model, hist, next, vel, cfg, false, nullptr);
    REQUIRE(st.finite);
    REQUIRE(std::isfinite(st.swav));
    REQUIRE(std::isfinite(st.velocity));
  }
}
