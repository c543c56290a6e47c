#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "quadloco/parallel.hpp"
#include "quadloco/rng.hpp"

// Dense-network engine: linear layers with ELU, reverse-mode gradients,
// Adam with global-norm clipping, Gaussian policy head. Templated on the
// scalar so training runs in 32-bit while gradient-check tests instantiate
// the same code in 64-bit.

namespace quadloco::nn {

// Row-major throughout: batches are indexed and serialized by rows.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Act { Identity = 0, Elu = 1 };

template <class S>
struct Layer {
  Mat<S> W;  // in x out
  Vec<S> b;  // out
  Act act = Act::Identity;
};

template <class S>
struct Mlp {
  std::vector<Layer<S>> layers;
  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.rows()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.cols()); }
};

// ---- initialization ----------------------------------------------------

// Orthogonal rows/cols via Householder QR of a Gaussian matrix, signs fixed
// by the diagonal of R.
inline Eigen::MatrixXd orthogonal_matrix(int rows, int cols, rng::Stream& rs) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) g(i, j) = rs.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return rows >= cols ? q : Eigen::MatrixXd(q.transpose());
}

template <class S>
Mlp<S> make_mlp(int in, const std::vector<int>& hidden, int out,
                rng::Stream& rs, double gain = std::sqrt(2.0),
                Act hidden_act = Act::Elu, Act out_act = Act::Identity) {
  Mlp<S> net;
  std::vector<int> dims;
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer<S> layer;
    layer.W = (gain * orthogonal_matrix(dims[l], dims[l + 1], rs)).template cast<S>();
    layer.b = Vec<S>::Zero(dims[l + 1]);
    layer.act = (l + 2 < dims.size()) ? hidden_act : out_act;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// ---- forward / backward --------------------------------------------------

template <class S>
struct Tape {
  // x[l] is the input of layer l; x[L] is the network output. ELU
  // derivatives are recovered from the activated outputs, so inputs are all
  // the tape needs.
  std::vector<Mat<S>> x;
};

// ELU(z) = z for z > 0, exp(z) - 1 otherwise.
template <class S>
void apply_act(Act act, Mat<S>& m) {
  if (act == Act::Elu)
    m = (m.array().max(S(0)) + (m.array().min(S(0)).exp() - S(1))).matrix();
}

namespace detail {
constexpr long kRowChunk = 2048;  // forward rows per task
constexpr long kGradChunks = 8;   // fixed partition for reduced gradients
}

template <class S>
Mat<S> forward(const Mlp<S>& net, const Mat<S>& X, Tape<S>* tape = nullptr,
               ThreadPool* pool = nullptr) {
  if (X.cols() != net.in_dim())
    throw std::invalid_argument("forward: input dim mismatch");
  const long B = X.rows();
  Mat<S> cur = X;
  if (tape) {
    tape->x.clear();
    tape->x.push_back(cur);
  }
  for (const auto& layer : net.layers) {
    Mat<S> y(B, layer.W.cols());
    auto run = [&](long r0, long r1, long) {
      y.middleRows(r0, r1 - r0).noalias() =
          cur.middleRows(r0, r1 - r0) * layer.W;
      y.middleRows(r0, r1 - r0).rowwise() += layer.b.transpose();
      if (layer.act == Act::Elu) {
        auto blk = y.middleRows(r0, r1 - r0).array();
        y.middleRows(r0, r1 - r0) =
            (blk.max(S(0)) + (blk.min(S(0)).exp() - S(1))).matrix();
      }
    };
    if (pool && B > detail::kRowChunk)
      pool->for_chunks(B, detail::kRowChunk, run);
    else
      run(0, B, 0);
    cur = std::move(y);
    if (tape) tape->x.push_back(cur);
  }
  return cur;
}

template <class S>
struct MlpGrads {
  std::vector<Mat<S>> dW;
  std::vector<Vec<S>> db;
  void init_like(const Mlp<S>& net) {
    dW.clear();
    db.clear();
    for (const auto& l : net.layers) {
      dW.push_back(Mat<S>::Zero(l.W.rows(), l.W.cols()));
      db.push_back(Vec<S>::Zero(l.b.size()));
    }
  }
  void zero() {
    for (auto& m : dW) m.setZero();
    for (auto& v : db) v.setZero();
  }
};

// Accumulates parameter gradients into `g` (must be init_like'd). Pass
// `dX` to also get the gradient w.r.t. the network input.
template <class S>
void backward(const Mlp<S>& net, const Tape<S>& tape, const Mat<S>& dY,
              MlpGrads<S>& g, ThreadPool* pool = nullptr, Mat<S>* dX = nullptr) {
  const long B = dY.rows();
  const long L = static_cast<long>(net.layers.size());
  Mat<S> dA = dY;
  for (long l = L - 1; l >= 0; --l) {
    const auto& layer = net.layers[static_cast<size_t>(l)];
    const Mat<S>& xin = tape.x[static_cast<size_t>(l)];
    const Mat<S>& xout = tape.x[static_cast<size_t>(l) + 1];
    Mat<S> dZ;
    if (layer.act == Act::Elu)
      // ELU'(z) = 1 for z > 0, exp(z) = out + 1 otherwise
      dZ = (dA.array() * (xout.array() + S(1)).min(S(1))).matrix();
    else
      dZ = dA;

    if (pool && B > 4 * detail::kGradChunks) {
      const long chunk = (B + detail::kGradChunks - 1) / detail::kGradChunks;
      const long nchunks = (B + chunk - 1) / chunk;
      std::vector<Mat<S>> pw(static_cast<size_t>(nchunks));
      std::vector<Vec<S>> pb(static_cast<size_t>(nchunks));
      pool->for_chunks(B, chunk, [&](long r0, long r1, long c) {
        pw[static_cast<size_t>(c)].noalias() =
            xin.middleRows(r0, r1 - r0).transpose() * dZ.middleRows(r0, r1 - r0);
        pb[static_cast<size_t>(c)] = dZ.middleRows(r0, r1 - r0).colwise().sum();
      });
      for (long c = 0; c < nchunks; ++c) {
        g.dW[static_cast<size_t>(l)] += pw[static_cast<size_t>(c)];
        g.db[static_cast<size_t>(l)] += pb[static_cast<size_t>(c)];
      }
    } else {
      g.dW[static_cast<size_t>(l)].noalias() += xin.transpose() * dZ;
      g.db[static_cast<size_t>(l)] += dZ.colwise().sum();
    }

    if (l > 0 || dX) {
      Mat<S> next(B, layer.W.rows());
      auto run = [&](long r0, long r1, long) {
        next.middleRows(r0, r1 - r0).noalias() =
            dZ.middleRows(r0, r1 - r0) * layer.W.transpose();
      };
      if (pool && B > detail::kRowChunk)
        pool->for_chunks(B, detail::kRowChunk, run);
      else
        run(0, B, 0);
      if (l == 0 && dX) *dX = std::move(next);
      else dA = std::move(next);
    }
  }
}

// ---- parameter sets and Adam ----------------------------------------------

template <class S>
struct ArrayRef {
  S* data = nullptr;
  long size = 0;
};

template <class S>
using ParamSet = std::vector<ArrayRef<S>>;

template <class S>
void collect(Mlp<S>& net, ParamSet<S>& out) {
  for (auto& l : net.layers) {
    out.push_back({l.W.data(), static_cast<long>(l.W.size())});
    out.push_back({l.b.data(), static_cast<long>(l.b.size())});
  }
}

template <class S>
void collect(MlpGrads<S>& g, ParamSet<S>& out) {
  for (size_t l = 0; l < g.dW.size(); ++l) {
    out.push_back({g.dW[l].data(), static_cast<long>(g.dW[l].size())});
    out.push_back({g.db[l].data(), static_cast<long>(g.db[l].size())});
  }
}

template <class S>
long total_size(const ParamSet<S>& ps) {
  long n = 0;
  for (const auto& a : ps) n += a.size;
  return n;
}

template <class S>
double global_norm(const ParamSet<S>& grads) {
  double sq = 0;
  for (const auto& a : grads)
    for (long i = 0; i < a.size; ++i) sq += static_cast<double>(a.data[i]) * a.data[i];
  return std::sqrt(sq);
}

template <class S>
struct AdamState {
  Vec<S> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999;
  void init(long n) {
    m = Vec<S>::Zero(n);
    v = Vec<S>::Zero(n);
    step = 0;
  }
};

// Global-norm clip followed by a bias-corrected Adam update.
template <class S>
void adam_step(AdamState<S>& st, const ParamSet<S>& params,
               const ParamSet<S>& grads, double lr, double epsilon,
               double clip) {
  double scale = 1.0;
  if (clip > 0) {
    double norm = global_norm(grads);
    if (norm > clip) scale = clip / norm;
  }
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  long off = 0;
  for (size_t k = 0; k < params.size(); ++k) {
    S* p = params[k].data;
    const S* g = grads[k].data;
    for (long i = 0; i < params[k].size; ++i) {
      const double gi = scale * static_cast<double>(g[i]);
      double m = st.beta1 * st.m[off + i] + (1 - st.beta1) * gi;
      double v = st.beta2 * st.v[off + i] + (1 - st.beta2) * gi * gi;
      st.m[off + i] = static_cast<S>(m);
      st.v[off + i] = static_cast<S>(v);
      p[i] -= static_cast<S>(lr * (m / c1) / (std::sqrt(v / c2) + epsilon));
    }
    off += params[k].size;
  }
}

// ---- normalization ---------------------------------------------------------

inline int& l2_degenerate_count() {
  static int n = 0;
  return n;
}

template <class S>
Vec<S> l2_normalize(const Vec<S>& v) {
  double n = std::sqrt(static_cast<double>(v.squaredNorm()));
  if (n < 1e-12) {
    if (l2_degenerate_count()++ < 5)
      std::cerr << "l2_normalize: near-zero input, returning basis vector\n";
    Vec<S> e = Vec<S>::Zero(v.size());
    if (v.size() > 0) e[0] = S(1);
    return e;
  }
  return v / static_cast<S>(n);
}

// Row-wise normalization of a batch; returns per-row norms for backward.
template <class S>
void rows_normalize(const Mat<S>& raw, Mat<S>& unit, Vec<S>& norms) {
  unit.resize(raw.rows(), raw.cols());
  norms.resize(raw.rows());
  for (long i = 0; i < raw.rows(); ++i) {
    double n = std::sqrt(static_cast<double>(raw.row(i).squaredNorm()));
    if (n < 1e-12) {
      if (l2_degenerate_count()++ < 5)
        std::cerr << "rows_normalize: near-zero row, returning basis vector\n";
      unit.row(i).setZero();
      unit(i, 0) = S(1);
      norms[i] = S(0);  // marks the degenerate row: gradient is dropped
    } else {
      norms[i] = static_cast<S>(n);
      unit.row(i) = raw.row(i) / static_cast<S>(n);
    }
  }
}

// d(raw) for y = raw/|raw|: (dy - y (dy.y)) / |raw|.
template <class S>
Mat<S> rows_normalize_backward(const Mat<S>& unit, const Vec<S>& norms,
                               const Mat<S>& dUnit) {
  Mat<S> dRaw(unit.rows(), unit.cols());
  for (long i = 0; i < unit.rows(); ++i) {
    if (norms[i] == S(0)) {
      dRaw.row(i).setZero();
      continue;
    }
    S dot = unit.row(i).dot(dUnit.row(i));
    dRaw.row(i) = (dUnit.row(i) - dot * unit.row(i)) / norms[i];
  }
  return dRaw;
}

// ---- Gaussian policy head --------------------------------------------------

constexpr double kLogStdMin = -4.0;
constexpr double kLogStdMax = 1.0;
constexpr double kLog2Pi = 1.8378770664093453;

template <class S>
Vec<S> gaussian_log_prob(const Mat<S>& mean, const Vec<S>& log_std,
                         const Mat<S>& actions) {
  const long B = mean.rows(), A = mean.cols();
  Vec<S> out(B);
  Vec<S> inv_var(A), ls(A);
  for (long j = 0; j < A; ++j) {
    double s = std::exp(static_cast<double>(log_std[j]));
    inv_var[j] = static_cast<S>(1.0 / (s * s));
    ls[j] = log_std[j];
  }
  for (long i = 0; i < B; ++i) {
    double acc = 0;
    for (long j = 0; j < A; ++j) {
      double d = actions(i, j) - mean(i, j);
      acc += d * d * inv_var[j] + 2.0 * ls[j] + kLog2Pi;
    }
    out[i] = static_cast<S>(-0.5 * acc);
  }
  return out;
}

template <class S>
double gaussian_entropy(const Vec<S>& log_std) {
  double e = 0;
  for (long j = 0; j < log_std.size(); ++j)
    e += static_cast<double>(log_std[j]) + 0.5 * (1.0 + kLog2Pi);
  return e;
}

// KL(old || new) between diagonal Gaussians, averaged over the batch.
template <class S>
double gaussian_kl(const Mat<S>& mean_old, const Vec<S>& log_std_old,
                   const Mat<S>& mean_new, const Vec<S>& log_std_new) {
  const long B = mean_old.rows(), A = mean_old.cols();
  double acc = 0;
  for (long i = 0; i < B; ++i)
    for (long j = 0; j < A; ++j) {
      double lo = log_std_old[j], ln = log_std_new[j];
      double so2 = std::exp(2 * lo), sn2 = std::exp(2 * ln);
      double dm = mean_old(i, j) - mean_new(i, j);
      acc += ln - lo + (so2 + dm * dm) / (2 * sn2) - 0.5;
    }
  return acc / static_cast<double>(B);
}

}  // namespace quadloco::nn
