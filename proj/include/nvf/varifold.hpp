#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "nvf/geometry.hpp"
#include "nvf/ntk.hpp"

namespace nvf {

enum class KernelFamily { NTK1, NTK2, CT };
enum class Aggregation { Mean, Sum };

struct KernelConfig {
  KernelFamily family = KernelFamily::NTK1;
  int depth = 5;            // NTK1 default 5, NTK2 default 9
  double ct_sigma = 0.3;    // CT positional bandwidth, for unit-sphere-normalized shapes
  Aggregation aggregation = Aggregation::Mean;

  static KernelConfig ntk1(int depth = 5) { return {KernelFamily::NTK1, depth, 0.3, Aggregation::Mean}; }
  static KernelConfig ntk2(int depth = 9) { return {KernelFamily::NTK2, depth, 0.3, Aggregation::Mean}; }
  static KernelConfig ct(double sigma = 0.3) { return {KernelFamily::CT, 1, sigma, Aggregation::Mean}; }
};

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::NTK1: return "ntk1";
    case KernelFamily::NTK2: return "ntk2";
    case KernelFamily::CT: return "ct";
  }
  return "?";
}

struct CloudGram {
  MatrixXd values;
  KernelConfig config;
};

/// Elementwise product of positional and normal NTKs (separable varifold kernel).
inline MatrixXd pointwise_gram_ntk1(const OrientedPointCloud& a, const OrientedPointCloud& b, int depth) {
  return ntk_mlp(a.positions, b.positions, depth).cwiseProduct(ntk_mlp(a.normals, b.normals, depth));
}

/// Single NTK over concatenated [position | normal] rows.
inline MatrixXd pointwise_gram_ntk2(const OrientedPointCloud& a, const OrientedPointCloud& b, int depth) {
  MatrixXd fa(a.size(), 6), fb(b.size(), 6);
  fa << a.positions, a.normals;
  fb << b.positions, b.normals;
  return ntk_mlp(fa, fb, depth);
}

/// Gaussian RBF on positions times Cauchy-Binet (squared cosine) on normals.
inline MatrixXd pointwise_gram_ct(const OrientedPointCloud& a, const OrientedPointCloud& b, double ct_sigma) {
  if (ct_sigma <= 0) throw std::invalid_argument("pointwise_gram_ct: ct_sigma must be positive");
  const Eigen::Index m = a.size(), n = b.size();
  VectorXd na = a.positions.rowwise().squaredNorm();
  VectorXd nb = b.positions.rowwise().squaredNorm();
  MatrixXd d2 = na.replicate(1, n) + nb.transpose().replicate(m, 1) - 2.0 * a.positions * b.positions.transpose();
  MatrixXd pos = (-d2.cwiseMax(0.0) / (ct_sigma * ct_sigma)).array().exp().matrix();
  MatrixXd cb = (a.normals * b.normals.transpose()).array().square().matrix();
  return pos.cwiseProduct(cb);
}

inline MatrixXd pointwise_gram(const OrientedPointCloud& a, const OrientedPointCloud& b, const KernelConfig& cfg) {
  switch (cfg.family) {
    case KernelFamily::NTK1: return pointwise_gram_ntk1(a, b, cfg.depth);
    case KernelFamily::NTK2: return pointwise_gram_ntk2(a, b, cfg.depth);
    case KernelFamily::CT: return pointwise_gram_ct(a, b, cfg.ct_sigma);
  }
  throw std::logic_error("unreachable");
}

inline double aggregate(const MatrixXd& block, Aggregation agg) {
  const double s = block.sum();
  return agg == Aggregation::Mean ? s / (static_cast<double>(block.rows()) * static_cast<double>(block.cols())) : s;
}

inline double cloud_kernel(const OrientedPointCloud& a, const OrientedPointCloud& b, const KernelConfig& cfg) {
  return aggregate(pointwise_gram(a, b, cfg), cfg.aggregation);
}

inline double varifold_distance_sq(const OrientedPointCloud& a, const OrientedPointCloud& b, const KernelConfig& cfg) {
  const double kaa = cloud_kernel(a, a, cfg);
  const double kab = cloud_kernel(a, b, cfg);
  const double kbb = cloud_kernel(b, b, cfg);
  return kaa - 2.0 * kab + kbb;
}

inline double varifold_distance(const OrientedPointCloud& a, const OrientedPointCloud& b, const KernelConfig& cfg) {
  return std::sqrt(std::max(0.0, varifold_distance_sq(a, b, cfg)));
}

inline CloudGram pairwise_cloud_gram(const std::vector<OrientedPointCloud>& set_a,
                                     const std::vector<OrientedPointCloud>& set_b, const KernelConfig& cfg) {
  if (set_a.empty() || set_b.empty()) throw std::invalid_argument("pairwise_cloud_gram: empty cloud set");
  const bool self = &set_a == &set_b;
  CloudGram gram;
  gram.config = cfg;
  gram.values.resize(static_cast<Eigen::Index>(set_a.size()), static_cast<Eigen::Index>(set_b.size()));
  const auto n = static_cast<std::int64_t>(set_a.size());
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const auto jstart = self ? i : 0;
      for (std::int64_t j = jstart; j < static_cast<std::int64_t>(set_b.size()); ++j) {
        const double v = cloud_kernel(set_a[static_cast<std::size_t>(i)], set_b[static_cast<std::size_t>(j)], cfg);
        gram.values(i, j) = v;
        if (self && j != i) gram.values(j, i) = v;
      }
    }
  });
  return gram;
}

inline CloudGram self_cloud_gram(const std::vector<OrientedPointCloud>& set, const KernelConfig& cfg) {
  return pairwise_cloud_gram(set, set, cfg);
}

inline void save_gram_csv(const CloudGram& gram, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# kernel=" << family_name(gram.config.family) << " depth=" << gram.config.depth
      << " ct_sigma=" << gram.config.ct_sigma
      << " agg=" << (gram.config.aggregation == Aggregation::Mean ? "mean" : "sum") << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < gram.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < gram.values.cols(); ++j)
      out << gram.values(i, j) << (j + 1 == gram.values.cols() ? '\n' : ',');
  }
}

inline void save_block_csv(const KernelBlock& block, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "# ntk depth=" << block.depth << " m=" << block.values.rows() << " mhat=" << block.values.cols() << '\n';
  for (Eigen::Index i = 0; i < block.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < block.values.cols(); ++j)
      out << block.values(i, j) << (j + 1 == block.values.cols() ? '\n' : ',');
  }
}

// ---- Gradients of cloud-level kernels, used by the shape-matching loss. ----

struct CloudGrad {
  PointMatrix positions;
  PointMatrix normals;
};

// Accumulates d(weight * sum_ij K_ij)/d(a) into grad, b held fixed. When
// `self` is set, b is the same cloud as a and the gradient accumulates
// through both kernel arguments. Returns the raw sum_ij K_ij.
inline double cloud_kernel_backward(const OrientedPointCloud& a, const OrientedPointCloud& b, const KernelConfig& cfg,
                                    double weight, bool self, CloudGrad& grad) {
  const Eigen::Index m = a.size(), n = b.size();
  if (grad.positions.rows() != m) {
    grad.positions = PointMatrix::Zero(m, 3);
    grad.normals = PointMatrix::Zero(m, 3);
  }
  MatrixXd gbar = MatrixXd::Constant(m, n, weight);
  double raw_sum = 0.0;

  switch (cfg.family) {
    case KernelFamily::NTK1: {
      NtkTape tpos, tnor;
      MatrixXd kpos = ntk_mlp(a.positions, b.positions, cfg.depth, &tpos);
      MatrixXd knor = ntk_mlp(a.normals, b.normals, cfg.depth, &tnor);
      raw_sum = kpos.cwiseProduct(knor).sum();
      MatrixXd gpos_blk = gbar.cwiseProduct(knor);
      MatrixXd gnor_blk = gbar.cwiseProduct(kpos);
      MatrixXd ga = MatrixXd::Zero(m, 3), gb = MatrixXd::Zero(n, 3);
      ntk_mlp_backward(a.positions, b.positions, tpos, gpos_blk, ga, gb);
      grad.positions += ga;
      if (self) grad.positions += gb;
      ga.setZero();
      gb.setZero();
      ntk_mlp_backward(a.normals, b.normals, tnor, gnor_blk, ga, gb);
      grad.normals += ga;
      if (self) grad.normals += gb;
      break;
    }
    case KernelFamily::NTK2: {
      MatrixXd fa(m, 6), fb(n, 6);
      fa << a.positions, a.normals;
      fb << b.positions, b.normals;
      NtkTape tape;
      raw_sum = ntk_mlp(fa, fb, cfg.depth, &tape).sum();
      MatrixXd ga = MatrixXd::Zero(m, 6), gb = MatrixXd::Zero(n, 6);
      ntk_mlp_backward(fa, fb, tape, gbar, ga, gb);
      if (self) ga += gb;
      grad.positions += ga.leftCols<3>();
      grad.normals += ga.rightCols<3>();
      break;
    }
    case KernelFamily::CT: {
      const double inv_s2 = 1.0 / (cfg.ct_sigma * cfg.ct_sigma);
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          Vector3d dx = (a.positions.row(i) - b.positions.row(j)).transpose();
          const double pos = std::exp(-dx.squaredNorm() * inv_s2);
          const double dot = a.normals.row(i).dot(b.normals.row(j));
          raw_sum += pos * dot * dot;  // K = pos * dot^2
          Vector3d gpos_i = weight * dot * dot * pos * (-2.0 * inv_s2) * dx;
          Vector3d gnor_i = weight * pos * 2.0 * dot * b.normals.row(j).transpose();
          grad.positions.row(i) += gpos_i.transpose();
          grad.normals.row(i) += gnor_i.transpose();
          if (self) {
            grad.positions.row(j) -= gpos_i.transpose();
            grad.normals.row(j) += (weight * pos * 2.0 * dot * a.normals.row(i)).eval();
          }
        }
      }
      break;
    }
  }
  return raw_sum;
}

// Gradient of the squared varifold distance ||a - b||^2 with respect to a;
// b is the fixed target. K(b,b) is constant, so callers in a training loop
// can pass it in once via kbb; NaN means "compute here".
inline double varifold_loss_and_grad(const OrientedPointCloud& a, const OrientedPointCloud& b,
                                     const KernelConfig& cfg, CloudGrad& grad,
                                     double kbb = std::numeric_limits<double>::quiet_NaN()) {
  grad.positions = PointMatrix::Zero(a.size(), 3);
  grad.normals = PointMatrix::Zero(a.size(), 3);
  const double wa = cfg.aggregation == Aggregation::Mean
                        ? 1.0 / (static_cast<double>(a.size()) * static_cast<double>(a.size()))
                        : 1.0;
  const double wab = cfg.aggregation == Aggregation::Mean
                         ? 1.0 / (static_cast<double>(a.size()) * static_cast<double>(b.size()))
                         : 1.0;
  const double kaa = wa * cloud_kernel_backward(a, a, cfg, wa, /*self=*/true, grad);
  const double kab = wab * cloud_kernel_backward(a, b, cfg, -2.0 * wab, /*self=*/false, grad);
  if (std::isnan(kbb)) kbb = cloud_kernel(b, b, cfg);
  return kaa - 2.0 * kab + kbb;
}

}  // namespace nvf
