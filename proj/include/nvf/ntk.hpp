#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "nvf/common.hpp"

namespace nvf {

// Closed-form NTK of an N-layer infinite-width ReLU MLP.
//
// Recursion per entry, with s = sigma, r = sqrt(d_i * d_j):
//   s_0      = x_i . xhat_j,   d halves every layer
//   omega    = s_{h-1} / r
//   sdot_h-1 = 1 - acos(omega)/pi
//   s_h      = r/(2 pi) * ( sqrt(1-omega^2) + (pi - acos(omega)) omega )
//   theta_h  = s_h + theta_{h-1} * sdot_{h-1}
// with theta_0 = s_0.

constexpr int kMaxNtkDepth = 64;
constexpr double kDiagFloor = 1e-12;       // floor on d before forming omega
// Backward-only pullback from |omega| = 1. The 1/sqrt(1-omega^2) factors from
// the two derivative paths cancel exactly on self pairs, so the clip only has
// to keep them finite; the residual error scales like sqrt(clip).
constexpr double kOmegaGradClip = 1e-12;

struct KernelBlock {
  MatrixXd values;
  int depth = 0;
};

// Per-layer intermediates kept for the backward pass.
struct NtkTape {
  int depth = 0;
  VectorXd d0, dhat0;                  // floored squared row norms
  MatrixXd r0;                         // sqrt(d0 dhat0^T)
  std::vector<MatrixXd> omega;         // omega^(h-1), clamped to [-1,1]
  std::vector<MatrixXd> sigma_dot;     // sdot^(h-1)
  std::vector<MatrixXd> theta_prev;    // theta^(h-1)
};

namespace detail {

inline void check_features(const MatrixXd& x, const char* who) {
  if (x.rows() < 1 || x.cols() < 1) throw std::invalid_argument(std::string(who) + ": empty feature matrix");
  if (!x.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite feature entry");
}

}  // namespace detail

inline MatrixXd ntk_mlp(const MatrixXd& x, const MatrixXd& xhat, int depth, NtkTape* tape = nullptr) {
  detail::check_features(x, "ntk_mlp");
  detail::check_features(xhat, "ntk_mlp");
  if (x.cols() != xhat.cols()) throw std::invalid_argument("ntk_mlp: feature dimension mismatch");
  if (depth < 1 || depth > kMaxNtkDepth) throw std::invalid_argument("ntk_mlp: depth out of range");

  VectorXd d = x.rowwise().squaredNorm().cwiseMax(kDiagFloor);
  VectorXd dhat = xhat.rowwise().squaredNorm().cwiseMax(kDiagFloor);
  if ((d.array() <= 0).any() || (dhat.array() <= 0).any())
    throw std::invalid_argument("ntk_mlp: degenerate input norm");

  MatrixXd r0 = (d * dhat.transpose()).cwiseSqrt();
  MatrixXd sigma = x * xhat.transpose();
  MatrixXd theta = sigma;

  if (tape) {
    tape->depth = depth;
    tape->d0 = d;
    tape->dhat0 = dhat;
    tape->r0 = r0;
    tape->omega.assign(static_cast<std::size_t>(depth), MatrixXd());
    tape->sigma_dot.assign(static_cast<std::size_t>(depth), MatrixXd());
    tape->theta_prev.assign(static_cast<std::size_t>(depth), MatrixXd());
  }

  double level = 1.0;  // d^(h-1) = d0 * level
  for (int h = 1; h <= depth; ++h) {
    const double rscale = level;  // r at this layer = r0 * level
    MatrixXd omega = (sigma.array() / (r0.array() * rscale)).cwiseMin(1.0).cwiseMax(-1.0).matrix();
    MatrixXd ac = omega.array().acos().matrix();
    MatrixXd sdot = (1.0 - ac.array() / M_PI).matrix();
    MatrixXd signext =
        ((r0.array() * rscale) / (2.0 * M_PI) *
         ((1.0 - omega.array().square()).cwiseMax(0.0).sqrt() + (M_PI - ac.array()) * omega.array()))
            .matrix();
    if (tape) {
      auto i = static_cast<std::size_t>(h - 1);
      tape->omega[i] = omega;
      tape->sigma_dot[i] = sdot;
      tape->theta_prev[i] = theta;
    }
    theta = signext + theta.cwiseProduct(sdot);
    sigma.swap(signext);
    level *= 0.5;
  }
  return theta;
}

inline KernelBlock ntk_mlp_block(const MatrixXd& x, const MatrixXd& xhat, int depth) {
  return {ntk_mlp(x, xhat, depth), depth};
}

// Reverse-mode pass through the recursion: given gbar = dL/dTheta^(N) and the
// tape of the matching forward call, accumulates dL/dX into gx and dL/dXhat
// into gxhat (both += , caller zero-initializes).
inline void ntk_mlp_backward(const MatrixXd& x, const MatrixXd& xhat, const NtkTape& tape,
                             const MatrixXd& gbar, MatrixXd& gx, MatrixXd& gxhat) {
  const Eigen::Index m = x.rows(), mhat = xhat.rows();
  MatrixXd g_theta = gbar;                 // dL/dtheta^(h)
  MatrixXd g_s = MatrixXd::Zero(m, mhat);  // dL/ds_{h} for the level below
  VectorXd g_d0 = VectorXd::Zero(m);
  VectorXd g_dhat0 = VectorXd::Zero(mhat);

  for (int h = tape.depth; h >= 1; --h) {
    const auto i = static_cast<std::size_t>(h - 1);
    const double level = std::pow(0.5, h - 1);  // d^(h-1) = d0 * level
    const MatrixXd& omega = tape.omega[i];
    const MatrixXd& sdot = tape.sigma_dot[i];
    const MatrixXd& th_prev = tape.theta_prev[i];
    Eigen::ArrayXXd r = tape.r0.array() * level;

    // theta_h = s_h + theta_{h-1} sdot_{h-1}; g_s carries the use of s_h as
    // the sigma input of the layer above.
    Eigen::ArrayXXd g_sh = g_theta.array() + g_s.array();
    MatrixXd g_theta_prev = g_theta.cwiseProduct(sdot);
    Eigen::ArrayXXd g_sdot = g_theta.array() * th_prev.array();

    // Derivatives of F0/F1 at clamped omega; pull back from +-1 so the
    // acos slope stays finite on the diagonal.
    Eigen::ArrayXXd oc = omega.array().cwiseMin(1.0 - kOmegaGradClip).cwiseMax(-1.0 + kOmegaGradClip);
    Eigen::ArrayXXd ac = oc.acos();
    Eigen::ArrayXXd root = (1.0 - oc.square()).sqrt();
    Eigen::ArrayXXd dF0 = 1.0 / (M_PI * root);

    // s_h depends on s_{h-1} through omega and on r both ways:
    //   ds_h/ds_{h-1} = (pi - acos)/2pi,  ds_h/dr = sqrt(1-omega^2)/2pi
    //   dsdot/ds_{h-1} = dF0/r,           dsdot/dr = -dF0 * omega / r
    Eigen::ArrayXXd g_s_prev = g_sh * (M_PI - ac) / (2.0 * M_PI) + g_sdot * dF0 / r;
    Eigen::ArrayXXd g_r = g_sh * root / (2.0 * M_PI) - g_sdot * dF0 * oc / r;

    // r = sqrt(d_i d_j):  dr/dd_i = r/(2 d_i), and d^(h-1) = d0 * level.
    VectorXd di = tape.d0 * level;
    VectorXd dj = tape.dhat0 * level;
    g_d0 += level * ((g_r * r).rowwise().sum().matrix().array() / (2.0 * di.array())).matrix();
    g_dhat0 += level * ((g_r * r).colwise().sum().transpose().matrix().array() / (2.0 * dj.array())).matrix();

    g_theta = g_theta_prev;
    g_s = g_s_prev.matrix();
  }

  // theta^(0) = s_0 = X Xhat^T, d0 = diag(X X^T) (no gradient through the floor)
  MatrixXd g_s0 = g_theta + g_s;
  gx.noalias() += g_s0 * xhat;
  gxhat.noalias() += g_s0.transpose() * x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (x.row(i).squaredNorm() > kDiagFloor) gx.row(i) += 2.0 * g_d0(i) * x.row(i);
  for (Eigen::Index j = 0; j < xhat.rows(); ++j)
    if (xhat.row(j).squaredNorm() > kDiagFloor) gxhat.row(j) += 2.0 * g_dhat0(j) * xhat.row(j);
}

// Finite-width Jacobian-inner-product kernel at initialization, used as a
// convergence oracle for ntk_mlp. Architecture matching the closed form:
// first layer f = W1 x with unit-variance entries, hidden/output layers in
// NTK parameterization (1/sqrt(width) scaling, unit-variance entries), ReLU,
// scalar output, no biases. `widths` lists the hidden widths; empty means the
// linear model f = w . x.
//
// The closed form propagates the covariance with unit weight variance (so the
// activation scale halves per layer) but uses the variance-2 derivative
// covariance 1 - acos/pi. A network reproduces that limit when the trainable
// parameter of layer h is V with W = sqrt(2^(N-h)) V, which multiplies the
// layer-h Jacobian block by 2^(N-h) while leaving the forward pass unchanged
// (a per-layer parameterization constant, not a different function class).
inline MatrixXd empirical_ntk(const std::vector<int>& widths, const MatrixXd& x, const MatrixXd& xhat,
                              std::uint64_t seed) {
  detail::check_features(x, "empirical_ntk");
  detail::check_features(xhat, "empirical_ntk");
  if (x.cols() != xhat.cols()) throw std::invalid_argument("empirical_ntk: feature dimension mismatch");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("empirical_ntk: width must be >= 1");

  const Eigen::Index m = x.rows(), mhat = xhat.rows();
  MatrixXd all(m + mhat, x.cols());
  all << x, xhat;
  const int depth = static_cast<int>(widths.size());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    MatrixXd w(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) w(i, j) = gauss(rng);
    return w;
  };

  if (depth == 0) {
    MatrixXd k = x * xhat.transpose();
    return k;
  }

  // Forward: per-layer activations g^(h); sensitivities e^(h) = df/df^(h).
  std::vector<MatrixXd> weights;
  weights.reserve(static_cast<std::size_t>(depth));
  std::vector<MatrixXd> pre(static_cast<std::size_t>(depth));   // f^(h), rows = inputs
  std::vector<MatrixXd> act(static_cast<std::size_t>(depth));   // g^(h)
  MatrixXd cur = all;
  for (int h = 0; h < depth; ++h) {
    const Eigen::Index fan_in = cur.cols();
    MatrixXd w = randn(widths[static_cast<std::size_t>(h)], fan_in);
    const double scale = h == 0 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(fan_in));
    pre[static_cast<std::size_t>(h)] = scale * (cur * w.transpose());
    act[static_cast<std::size_t>(h)] = pre[static_cast<std::size_t>(h)].cwiseMax(0.0);
    cur = act[static_cast<std::size_t>(h)];
    weights.push_back(std::move(w));
  }
  VectorXd wout = randn(widths.back(), 1).col(0);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(widths.back()));

  std::vector<MatrixXd> sens(static_cast<std::size_t>(depth));
  {
    MatrixXd e = (pre.back().array() > 0.0).cast<double>().matrix();
    for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) = e.row(i).cwiseProduct(wout.transpose()) * out_scale;
    sens.back() = e;
    for (int h = depth - 2; h >= 0; --h) {
      const auto hi = static_cast<std::size_t>(h);
      const double scale = 1.0 / std::sqrt(static_cast<double>(widths[hi]));
      MatrixXd back = sens[hi + 1] * weights[hi + 1] * scale;
      sens[hi] = back.cwiseProduct((pre[hi].array() > 0.0).cast<double>().matrix());
    }
  }

  // H_ij = sum over parameter blocks of <df_i/dW, df_j/dW>; each block
  // factors into (sensitivity dot) * (input-activation dot) / fan_in scaling.
  MatrixXd kernel = MatrixXd::Zero(m, mhat);
  for (int h = 0; h < depth; ++h) {
    const auto hi = static_cast<std::size_t>(h);
    const MatrixXd& inputs = h == 0 ? all : act[hi - 1];
    const double sq = h == 0 ? 1.0 : 1.0 / static_cast<double>(inputs.cols());
    MatrixXd edot = sens[hi].topRows(m) * sens[hi].bottomRows(mhat).transpose();
    MatrixXd gdot = inputs.topRows(m) * inputs.bottomRows(mhat).transpose();
    const double block_scale = std::pow(2.0, depth - h);  // see the note above
    kernel += block_scale * sq * edot.cwiseProduct(gdot);
  }
  // output weights
  kernel += (1.0 / static_cast<double>(widths.back())) *
            (act.back().topRows(m) * act.back().bottomRows(mhat).transpose());
  return kernel;
}

}  // namespace nvf
