#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "quadloco/nn.hpp"

using namespace quadloco;
using Catch::Approx;

namespace {

// straight-loop re-implementation of the MLP forward pass, kept independent
// of the Eigen path it checks
std::vector<double> naive_forward(const nn::Mlp<double>& net,
                                  const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (const auto& layer : net.layers) {
    const long in = layer.W.rows(), out = layer.W.cols();
    std::vector<double> y(static_cast<size_t>(out), 0.0);
    for (long o = 0; o < out; ++o) {
      double acc = layer.b[o];
      for (long i = 0; i < in; ++i) acc += cur[static_cast<size_t>(i)] * layer.W(i, o);
      if (layer.act == nn::Act::Elu && acc <= 0) acc = std::exp(acc) - 1.0;
      y[static_cast<size_t>(o)] = acc;
    }
    cur = std::move(y);
  }
  return cur;
}

// flatten-parameters helper for finite differencing
std::vector<double*> param_ptrs(nn::Mlp<double>& net) {
  std::vector<double*> out;
  for (auto& l : net.layers) {
    for (long k = 0; k < l.W.size(); ++k) out.push_back(l.W.data() + k);
    for (long k = 0; k < l.b.size(); ++k) out.push_back(l.b.data() + k);
  }
  return out;
}

std::vector<double> grad_values(const nn::MlpGrads<double>& g) {
  std::vector<double> out;
  for (size_t l = 0; l < g.dW.size(); ++l) {
    for (long k = 0; k < g.dW[l].size(); ++k) out.push_back(g.dW[l].data()[k]);
    for (long k = 0; k < g.db[l].size(); ++k) out.push_back(g.db[l].data()[k]);
  }
  return out;
}

nn::Mlp<double> random_net(int in, std::vector<int> hidden, int out,
                           std::uint64_t seed) {
  rng::Stream rs(seed, rng::Tag::Test);
  return nn::make_mlp<double>(in, hidden, out, rs);
}

}  // namespace

TEST_CASE("identity-initialized linear layer is the identity") {
  nn::Mlp<double> net;
  nn::Layer<double> l;
  l.W = nn::Mat<double>::Identity(4, 4);
  l.b = nn::Vec<double>::Zero(4);
  l.act = nn::Act::Identity;
  net.layers.push_back(l);
  nn::Mat<double> x(2, 4);
  x << 1, -2, 3, 0.5, 0, 4, -1, 2;
  nn::Mat<double> y = nn::forward(net, x);
  CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero weights give activation of the bias") {
  nn::Mlp<double> net;
  nn::Layer<double> l;
  l.W = nn::Mat<double>::Zero(3, 2);
  l.b = nn::Vec<double>::Zero(2);
  l.b << 0.5, -0.5;
  l.act = nn::Act::Elu;
  net.layers.push_back(l);
  nn::Mat<double> x = nn::Mat<double>::Random(5, 3);
  nn::Mat<double> y = nn::forward(net, x);
  for (int i = 0; i < 5; ++i) {
    CHECK(y(i, 0) == Approx(0.5));
    CHECK(y(i, 1) == Approx(std::exp(-0.5) - 1.0));
  }
}

TEST_CASE("forward matches a scalar-loop oracle") {
  auto net = random_net(7, {11, 5}, 3, 99);
  rng::Stream rs(100, rng::Tag::Test);
  for (int rep = 0; rep < 20; ++rep) {
    nn::Mat<double> x(1, 7);
    std::vector<double> xv(7);
    for (int k = 0; k < 7; ++k) {
      xv[static_cast<size_t>(k)] = rs.normal();
      x(0, k) = xv[static_cast<size_t>(k)];
    }
    nn::Mat<double> y = nn::forward(net, x);
    auto ref = naive_forward(net, xv);
    for (int k = 0; k < 3; ++k)
      REQUIRE(y(0, k) == Approx(ref[static_cast<size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects dimension mismatch") {
  auto net = random_net(4, {6}, 2, 1);
  nn::Mat<double> x(3, 5);
  x.setZero();
  CHECK_THROWS_AS(nn::forward(net, x), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences") {
  auto net = random_net(6, {10, 8}, 4, 7);
  rng::Stream rs(8, rng::Tag::Test);
  nn::Mat<double> x(5, 6), dy(5, 4);
  for (long i = 0; i < x.size(); ++i) x.data()[i] = rs.normal();
  for (long i = 0; i < dy.size(); ++i) dy.data()[i] = rs.normal();

  // loss = sum(dy .* f(x)), so dloss/dparam probes every output path
  nn::Tape<double> tape;
  nn::forward(net, x, &tape);
  nn::MlpGrads<double> g;
  g.init_like(net);
  nn::backward(net, tape, dy, g);
  auto analytic = grad_values(g);

  auto loss = [&] {
    nn::Mat<double> y = nn::forward(net, x);
    return (y.array() * dy.array()).sum();
  };
  auto ptrs = param_ptrs(net);
  REQUIRE(ptrs.size() == analytic.size());
  const double h = 1e-6;
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
  CHECK(max_rel < 1e-4);
}

TEST_CASE("constant loss gives zero gradients") {
  auto net = random_net(3, {5}, 2, 11);
  nn::Mat<double> x = nn::Mat<double>::Random(4, 3);
  nn::Tape<double> tape;
  nn::forward(net, x, &tape);
  nn::MlpGrads<double> g;
  g.init_like(net);
  nn::backward(net, tape, nn::Mat<double>(nn::Mat<double>::Zero(4, 2)), g);
  for (double v : grad_values(g)) REQUIRE(v == 0.0);
}

TEST_CASE("gradients are additive in the loss") {
  auto net = random_net(3, {6}, 2, 12);
  nn::Mat<double> x = nn::Mat<double>::Random(4, 3);
  nn::Mat<double> d1 = nn::Mat<double>::Random(4, 2);
  nn::Mat<double> d2 = nn::Mat<double>::Random(4, 2);
  nn::Tape<double> tape;
  nn::forward(net, x, &tape);
  nn::MlpGrads<double> g1, g2, g12;
  g1.init_like(net);
  g2.init_like(net);
  g12.init_like(net);
  nn::backward(net, tape, d1, g1);
  nn::backward(net, tape, d2, g2);
  nn::backward(net, tape, nn::Mat<double>(d1 + d2), g12);
  auto v1 = grad_values(g1), v2 = grad_values(g2), v12 = grad_values(g12);
  for (size_t k = 0; k < v12.size(); ++k)
    REQUIRE(v12[k] == Approx(v1[k] + v2[k]).margin(1e-12));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  nn::Vec<double> p(3);
  p << 1.0, -2.0, 3.0;
  nn::Vec<double> g = nn::Vec<double>::Zero(3);
  nn::ParamSet<double> ps{{p.data(), 3}}, gs{{g.data(), 3}};
  nn::AdamState<double> st;
  st.init(3);
  nn::adam_step(st, ps, gs, 1e-3, 1e-8, 10.0);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 3.0);
}

TEST_CASE("adam: first step moves by about -lr for unit gradient") {
  nn::Vec<double> p(1);
  p << 0.7;
  nn::Vec<double> g(1);
  g << 1.0;
  nn::ParamSet<double> ps{{p.data(), 1}}, gs{{g.data(), 1}};
  nn::AdamState<double> st;
  st.init(1);
  nn::adam_step(st, ps, gs, 1e-3, 1e-8, 10.0);
  // bias-corrected first step: delta = -lr * g / (|g| + eps)
  CHECK(p[0] == Approx(0.7 - 1e-3).epsilon(1e-6));
}

TEST_CASE("adam: global-norm clipping equals pre-scaled gradients") {
  nn::Vec<double> pa(2), pb(2);
  pa << 1.0, 2.0;
  pb = pa;
  nn::Vec<double> ga(2);
  ga << 60.0, 80.0;  // norm 100
  nn::Vec<double> gb = ga * 0.1;  // pre-scaled to norm 10

  nn::ParamSet<double> psa{{pa.data(), 2}}, gsa{{ga.data(), 2}};
  nn::ParamSet<double> psb{{pb.data(), 2}}, gsb{{gb.data(), 2}};
  nn::AdamState<double> sta, stb;
  sta.init(2);
  stb.init(2);
  nn::adam_step(sta, psa, gsa, 1e-3, 1e-8, 10.0);  // clipped by factor 0.1
  nn::adam_step(stb, psb, gsb, 1e-3, 1e-8, 10.0);  // norm 10, not clipped
  CHECK(pa[0] == Approx(pb[0]).margin(1e-15));
  CHECK(pa[1] == Approx(pb[1]).margin(1e-15));
}

TEST_CASE("adam is order-stable and deterministic") {
  auto run = [] {
    nn::Vec<double> p(4);
    p << 0.1, 0.2, 0.3, 0.4;
    nn::AdamState<double> st;
    st.init(4);
    rng::Stream rs(5, rng::Tag::Test);
    for (int k = 0; k < 50; ++k) {
      nn::Vec<double> g(4);
      for (int j = 0; j < 4; ++j) g[j] = rs.normal();
      nn::ParamSet<double> ps{{p.data(), 4}}, gs{{g.data(), 4}};
      nn::adam_step(st, ps, gs, 1e-3, 1e-8, 10.0);
    }
    return p;
  };
  auto a = run(), b = run();
  for (int j = 0; j < 4; ++j) REQUIRE(a[j] == b[j]);
}

TEST_CASE("l2_normalize") {
  nn::Vec<double> v(2);
  v << 3, 4;
  auto u = nn::l2_normalize(v);
  CHECK(u[0] == Approx(0.6));
  CHECK(u[1] == Approx(0.8));

  // idempotence
  auto uu = nn::l2_normalize(u);
  CHECK(uu[0] == Approx(u[0]).epsilon(1e-12));

  // scale invariance
  nn::Vec<double> v7 = 7.0 * v;
  auto u7 = nn::l2_normalize(v7);
  CHECK(u7[0] == Approx(u[0]).epsilon(1e-12));
  CHECK(u7[1] == Approx(u[1]).epsilon(1e-12));

  // degenerate input falls back to a fixed basis vector
  nn::Vec<double> z = nn::Vec<double>::Zero(5);
  auto uz = nn::l2_normalize(z);
  CHECK(uz[0] == 1.0);
  CHECK(uz.tail(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rows_normalize backward matches finite differences") {
  rng::Stream rs(17, rng::Tag::Test);
  nn::Mat<double> raw(6, 5), dunit(6, 5);
  for (long k = 0; k < raw.size(); ++k) raw.data()[k] = rs.normal();
  for (long k = 0; k < dunit.size(); ++k) dunit.data()[k] = rs.normal();

  nn::Mat<double> unit;
  nn::Vec<double> norms;
  nn::rows_normalize(raw, unit, norms);
  nn::Mat<double> draw = nn::rows_normalize_backward(unit, norms, dunit);

  auto loss = [&] {
    nn::Mat<double> u;
    nn::Vec<double> n;
    nn::rows_normalize(raw, u, n);
    return (u.array() * dunit.array()).sum();
  };
  const double h = 1e-6;
  for (long k = 0; k < raw.size(); ++k) {
    const double keep = raw.data()[k];
    raw.data()[k] = keep + h;
    const double lp = loss();
    raw.data()[k] = keep - h;
    const double lm = loss();
    raw.data()[k] = keep;
    const double fd = (lp - lm) / (2 * h);
    REQUIRE(std::abs(fd - draw.data()[k]) <
            1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("orthogonal init produces orthonormal columns scaled by the gain") {
  rng::Stream rs(3, rng::Tag::Test);
  Eigen::MatrixXd q = nn::orthogonal_matrix(20, 8, rs);
  Eigen::MatrixXd gram = q.transpose() * q;
  CHECK((gram - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-10);

  auto net = random_net(20, {}, 8, 5);
  Eigen::MatrixXd w = net.layers[0].W;
  Eigen::MatrixXd g2 = w.transpose() * w / 2.0;  // gain sqrt(2)
  CHECK((g2 - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(net.layers[0].b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gaussian log-prob matches an independent density evaluation") {
  rng::Stream rs(21, rng::Tag::Test);
  nn::Mat<double> mean(3, 4), actions(3, 4);
  nn::Vec<double> log_std(4);
  for (long k = 0; k < mean.size(); ++k) mean.data()[k] = rs.normal();
  for (long k = 0; k < actions.size(); ++k) actions.data()[k] = rs.normal();
  for (int j = 0; j < 4; ++j) log_std[j] = rs.uniform(-1.0, 0.5);

  nn::Vec<double> lp = nn::gaussian_log_prob(mean, log_std, actions);
  for (int i = 0; i < 3; ++i) {
    double ref = 0;
    for (int j = 0; j < 4; ++j) {
      const double s = std::exp(log_std[j]);
      const double z = (actions(i, j) - mean(i, j)) / s;
      ref += -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * M_PI);
    }
    REQUIRE(lp[i] == Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("gaussian entropy and KL identities") {
  nn::Vec<double> ls(3);
  ls << 0.0, -0.5, 0.3;
  double ref = 0;
  for (int j = 0; j < 3; ++j)
    ref += 0.5 * std::log(2.0 * M_PI * std::exp(1.0)) + ls[j];
  CHECK(nn::gaussian_entropy(ls) == Approx(ref).epsilon(1e-12));

  nn::Mat<double> mean = nn::Mat<double>::Random(5, 3);
  CHECK(nn::gaussian_kl(mean, ls, mean, ls) == Approx(0.0).margin(1e-12));
  // KL grows when the new mean moves away
  nn::Mat<double> mean2 = mean;
  mean2.array() += 0.5;
  CHECK(nn::gaussian_kl(mean, ls, mean2, ls) > 0.0);
}

TEST_CASE("parallel forward/backward agree with serial") {
  ThreadPool pool(4);
  auto net = random_net(9, {16, 12}, 5, 23);
  rng::Stream rs(24, rng::Tag::Test);
  nn::Mat<double> x(300, 9), dy(300, 5);
  for (long k = 0; k < x.size(); ++k) x.data()[k] = rs.normal();
  for (long k = 0; k < dy.size(); ++k) dy.data()[k] = rs.normal();

  nn::Tape<double> t1, t2;
  nn::Mat<double> y1 = nn::forward(net, x, &t1, nullptr);
  nn::Mat<double> y2 = nn::forward(net, x, &t2, &pool);
  REQUIRE((y1 - y2).cwiseAbs().maxCoeff() == 0.0);

  nn::MlpGrads<double> g1, g2;
  g1.init_like(net);
  g2.init_like(net);
  nn::backward(net, t1, dy, g1, nullptr);
  nn::backward(net, t2, dy, g2, &pool);
  auto v1 = grad_values(g1), v2 = grad_values(g2);
  for (size_t k = 0; k < v1.size(); ++k)
    REQUIRE(v1[k] == Approx(v2[k]).margin(1e-9));
}
