#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "nvf/geometry.hpp"
#include "nvf/metrics.hpp"
#include "nvf/varifold.hpp"

namespace nvf {

enum class LossFamily { CD, EMD, CT, NTK1, NTK2 };

inline const char* loss_name(LossFamily f) {
  switch (f) {
    case LossFamily::CD: return "cd";
    case LossFamily::EMD: return "emd";
    case LossFamily::CT: return "ct";
    case LossFamily::NTK1: return "ntk1";
    case LossFamily::NTK2: return "ntk2";
  }
  return "?";
}

// 3 -> 64 -> 128 -> 3 ReLU MLP predicting per-vertex displacements. Hidden
// weights drawn N(0, 1/fan_in); the output layer starts at zero so training
// begins from the identity deformation.
struct DeformationNet {
  MatrixXd w1, w2, w3;
  VectorXd b1, b2, b3;

  static DeformationNet init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto randn = [&](Eigen::Index r, Eigen::Index c, double stddev) {
      MatrixXd w(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) w(i, j) = stddev * gauss(rng);
      return w;
    };
    DeformationNet net;
    net.w1 = randn(64, 3, 1.0 / std::sqrt(3.0));
    net.b1 = VectorXd::Zero(64);
    net.w2 = randn(128, 64, 1.0 / std::sqrt(64.0));
    net.b2 = VectorXd::Zero(128);
    net.w3 = MatrixXd::Zero(3, 128);
    net.b3 = VectorXd::Zero(3);
    return net;
  }

  struct Activations {
    MatrixXd h1, h2;  // post-ReLU
  };

  MatrixXd forward(const PointMatrix& x, Activations* acts = nullptr) const {
    MatrixXd h1 = ((x * w1.transpose()).rowwise() + b1.transpose()).cwiseMax(0.0);
    MatrixXd h2 = ((h1 * w2.transpose()).rowwise() + b2.transpose()).cwiseMax(0.0);
    MatrixXd out = (h2 * w3.transpose()).rowwise() + b3.transpose();
    if (acts) *acts = {std::move(h1), std::move(h2)};
    return out;
  }
};

struct NetGrads {
  MatrixXd w1, w2, w3;
  VectorXd b1, b2, b3;

  static NetGrads zeros_like(const DeformationNet& net) {
    return {MatrixXd::Zero(net.w1.rows(), net.w1.cols()), MatrixXd::Zero(net.w2.rows(), net.w2.cols()),
            MatrixXd::Zero(net.w3.rows(), net.w3.cols()), VectorXd::Zero(net.b1.size()),
            VectorXd::Zero(net.b2.size()), VectorXd::Zero(net.b3.size())};
  }
};

inline void net_backward(const DeformationNet& net, const PointMatrix& x, const DeformationNet::Activations& acts,
                         const MatrixXd& gout, NetGrads& g) {
  g.w3 = gout.transpose() * acts.h2;
  g.b3 = gout.colwise().sum().transpose();
  MatrixXd gh2 = (gout * net.w3).cwiseProduct((acts.h2.array() > 0.0).cast<double>().matrix());
  g.w2 = gh2.transpose() * acts.h1;
  g.b2 = gh2.colwise().sum().transpose();
  MatrixXd gh1 = (gh2 * net.w2).cwiseProduct((acts.h1.array() > 0.0).cast<double>().matrix());
  g.w1 = gh1.transpose() * x;
  g.b1 = gh1.colwise().sum().transpose();
}

struct MatchConfig {
  LossFamily loss = LossFamily::NTK1;
  int iterations = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t seed = 0;
  int ntk_depth = 5;      // NTK1 default; NTK2 runs default to 9
  double ct_sigma = 0.3;

  KernelConfig kernel() const {
    switch (loss) {
      case LossFamily::NTK1: return KernelConfig::ntk1(ntk_depth);
      case LossFamily::NTK2: return KernelConfig::ntk2(ntk_depth);
      case LossFamily::CT: return KernelConfig::ct(ct_sigma);
      default: throw std::logic_error("no kernel for CD/EMD");
    }
  }
};

inline TriangleMesh deform(const DeformationNet& net, const TriangleMesh& mesh) {
  TriangleMesh out = mesh;
  out.vertices += net.forward(mesh.vertices);
  return out;
}

namespace detail {

// Differentiable face-center sampler: one point per face, all faces kept,
// 1e-12 added to the cross-product norm so slivers stay finite.
inline OrientedPointCloud face_centers_all(const PointMatrix& vertices, const std::vector<std::array<int, 3>>& faces) {
  OrientedPointCloud cloud;
  cloud.positions.resize(static_cast<Eigen::Index>(faces.size()), 3);
  cloud.normals.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    Vector3d v0 = vertices.row(faces[f][0]), v1 = vertices.row(faces[f][1]), v2 = vertices.row(faces[f][2]);
    Vector3d c = (v1 - v0).cross(v2 - v0);
    cloud.positions.row(static_cast<Eigen::Index>(f)) = ((v0 + v1 + v2) / 3.0).transpose();
    cloud.normals.row(static_cast<Eigen::Index>(f)) = (c / (c.norm() + 1e-12)).transpose();
  }
  return cloud;
}

inline void face_centers_backward(const PointMatrix& vertices, const std::vector<std::array<int, 3>>& faces,
                                  const PointMatrix& gpos, const PointMatrix& gnor, MatrixXd& gverts) {
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    Vector3d v0 = vertices.row(faces[f][0]), v1 = vertices.row(faces[f][1]), v2 = vertices.row(faces[f][2]);
    Vector3d u = v1 - v0, w = v2 - v0;
    Vector3d c = u.cross(w);
    const double len = c.norm();
    const double safe = len + 1e-12;
    Vector3d gn = gnor.row(fi).transpose();
    // n = c / (len + eps)
    Vector3d gc = gn / safe;
    if (len > 1e-300) gc -= c * (c.dot(gn)) / (len * safe * safe);
    Vector3d gu = w.cross(gc);
    Vector3d gw = gc.cross(u);
    Vector3d gcenter = gpos.row(fi).transpose() / 3.0;
    gverts.row(faces[f][0]) += (gcenter - gu - gw).transpose();
    gverts.row(faces[f][1]) += (gcenter + gu).transpose();
    gverts.row(faces[f][2]) += (gcenter + gw).transpose();
  }
}

}  // namespace detail

/// Loss of the deformed source against a fixed target cloud, with exact
/// gradients for all net parameters. kbb caches the target self-kernel for
/// varifold losses (NaN = compute here).
inline double loss_and_grad(const DeformationNet& net, const TriangleMesh& source,
                            const OrientedPointCloud& target_cloud, const MatchConfig& config, NetGrads& grads,
                            double kbb = std::numeric_limits<double>::quiet_NaN()) {
  DeformationNet::Activations acts;
  MatrixXd displacement = net.forward(source.vertices, &acts);
  PointMatrix deformed = source.vertices + displacement;
  OrientedPointCloud cloud = detail::face_centers_all(deformed, source.faces);

  double loss = 0.0;
  PointMatrix gpos = PointMatrix::Zero(cloud.size(), 3);
  PointMatrix gnor = PointMatrix::Zero(cloud.size(), 3);

  switch (config.loss) {
    case LossFamily::CD:
      loss = chamfer(cloud.positions, target_cloud.positions);
      gpos = chamfer_grad(cloud.positions, target_cloud.positions);
      break;
    case LossFamily::EMD: {
      TransportPlan plan = emd_exact(cloud.positions, target_cloud.positions);
      loss = plan.cost;
      gpos = emd_grad(cloud.positions, target_cloud.positions, plan);
      break;
    }
    default: {
      CloudGrad cgrad;
      loss = varifold_loss_and_grad(cloud, target_cloud, config.kernel(), cgrad, kbb);
      gpos = cgrad.positions;
      gnor = cgrad.normals;
      break;
    }
  }
  if (!std::isfinite(loss)) throw std::runtime_error("loss_and_grad: non-finite loss");

  MatrixXd gverts = MatrixXd::Zero(deformed.rows(), 3);
  detail::face_centers_backward(deformed, source.faces, gpos, gnor, gverts);
  net_backward(net, source.vertices, acts, gverts, grads);
  return loss;
}

struct MatchTrace {
  std::vector<double> loss;
  std::vector<double> seconds;
  TriangleMesh deformed;
  DeformationNet net;
};

/// Algorithm: fix the target face-center cloud once, then run Adam on the
/// deformation net, resampling the deformed source's face centers each step.
inline MatchTrace match_shapes(const TriangleMesh& source, const TriangleMesh& target, const MatchConfig& config) {
  OrientedPointCloud target_cloud = sample_face_centers(target);
  DeformationNet net = DeformationNet::init(config.seed);

  double kbb = std::numeric_limits<double>::quiet_NaN();
  if (config.loss == LossFamily::CT || config.loss == LossFamily::NTK1 || config.loss == LossFamily::NTK2)
    kbb = cloud_kernel(target_cloud, target_cloud, config.kernel());

  NetGrads m = NetGrads::zeros_like(net), v = NetGrads::zeros_like(net), g = NetGrads::zeros_like(net);
  MatchTrace trace;
  trace.loss.reserve(static_cast<std::size_t>(config.iterations));

  auto adam_update = [&](auto& p, auto& mm, auto& vv, const auto& gg, double corr1, double corr2) {
    mm = config.beta1 * mm + (1.0 - config.beta1) * gg;
    vv = config.beta2 * vv + (1.0 - config.beta2) * gg.cwiseProduct(gg);
    p.array() -= config.learning_rate * (mm.array() / corr1) / ((vv.array() / corr2).sqrt() + config.eps);
  };

  for (int it = 0; it < config.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss;
    try {
      loss = loss_and_grad(net, source, target_cloud, config, g, kbb);
    } catch (const std::runtime_error&) {
      break;  // divergence: return the trace so far
    }
    trace.loss.push_back(loss);
    const double corr1 = 1.0 - std::pow(config.beta1, it + 1);
    const double corr2 = 1.0 - std::pow(config.beta2, it + 1);
    adam_update(net.w1, m.w1, v.w1, g.w1, corr1, corr2);
    adam_update(net.w2, m.w2, v.w2, g.w2, corr1, corr2);
    adam_update(net.w3, m.w3, v.w3, g.w3, corr1, corr2);
    adam_update(net.b1, m.b1, v.b1, g.b1, corr1, corr2);
    adam_update(net.b2, m.b2, v.b2, g.b2, corr1, corr2);
    adam_update(net.b3, m.b3, v.b3, g.b3, corr1, corr2);
    trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }

  trace.deformed = deform(net, source);
  trace.net = net;
  return trace;
}

struct MetricTable {
  double cd = 0.0, emd = 0.0, ct = 0.0, ntk1 = 0.0, ntk2 = 0.0;
};

/// Every metric between the face-center clouds of two meshes; varifold
/// entries report the square-rooted distance. EMD is NaN when the face
/// counts differ (balanced transport only).
inline MetricTable cross_evaluate(const TriangleMesh& result, const TriangleMesh& target, double ct_sigma = 0.3) {
  OrientedPointCloud a = sample_face_centers(result);
  OrientedPointCloud b = sample_face_centers(target);
  MetricTable t;
  t.cd = chamfer(a.positions, b.positions);
  t.emd = a.size() == b.size() ? emd_exact(a.positions, b.positions).cost : std::numeric_limits<double>::quiet_NaN();
  t.ct = varifold_distance(a, b, KernelConfig::ct(ct_sigma));
  t.ntk1 = varifold_distance(a, b, KernelConfig::ntk1());
  t.ntk2 = varifold_distance(a, b, KernelConfig::ntk2());
  return t;
}

}  // namespace nvf
