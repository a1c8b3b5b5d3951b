#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "nvf/krr.hpp"
#include "nvf/mc_tables.hpp"
#include "nvf/metrics.hpp"
#include "nvf/varifold.hpp"

namespace nvf {

struct SdfTrainingSet {
  OrientedPointCloud features;  // 3m rows: [surface | inside(-delta) | outside(+delta)]
  VectorXd targets;             // matching signed-distance targets {0, -delta, +delta}
  double delta = 0.0;
};

/// Off-surface augmentation: each oriented point (x, z) contributes x with
/// target 0, x - delta z with target -delta, and x + delta z with +delta.
inline SdfTrainingSet augment_offsurface(const OrientedPointCloud& cloud, double delta) {
  validate_cloud(cloud);
  if (delta <= 0) throw std::invalid_argument("augment_offsurface: delta must be positive");
  const Eigen::Index m = cloud.size();
  SdfTrainingSet set;
  set.delta = delta;
  set.features.positions.resize(3 * m, 3);
  set.features.normals.resize(3 * m, 3);
  set.targets.resize(3 * m);
  set.features.positions.topRows(m) = cloud.positions;
  set.features.positions.middleRows(m, m) = cloud.positions - delta * cloud.normals;
  set.features.positions.bottomRows(m) = cloud.positions + delta * cloud.normals;
  for (int b = 0; b < 3; ++b) set.features.normals.middleRows(b * m, m) = cloud.normals;
  set.targets.head(m).setZero();
  set.targets.segment(m, m).setConstant(-delta);
  set.targets.tail(m).setConstant(delta);
  return set;
}

struct ScalarGrid {
  int resolution = 128;
  Vector3d lo = Vector3d::Zero();
  Vector3d hi = Vector3d::Ones();
  VectorXd values;  // resolution^3, x fastest then y then z

  Eigen::Index index(int i, int j, int k) const {
    return static_cast<Eigen::Index>(i) +
           static_cast<Eigen::Index>(resolution) * (static_cast<Eigen::Index>(j) +
                                                    static_cast<Eigen::Index>(resolution) * static_cast<Eigen::Index>(k));
  }
  Vector3d spacing() const { return (hi - lo) / static_cast<double>(resolution - 1); }
  Vector3d point(int i, int j, int k) const {
    Vector3d s = spacing();
    return lo + Vector3d(i * s.x(), j * s.y(), k * s.z());
  }
};

/// Axis-aligned bounding box of the positions, padded by `padding` of its
/// extent on every side (a degenerate extent still gets a small margin).
inline ScalarGrid make_grid(const PointMatrix& positions, int resolution, double padding = 0.1) {
  if (resolution < 2) throw std::invalid_argument("make_grid: resolution must be >= 2");
  if (positions.rows() < 1) throw std::invalid_argument("make_grid: empty cloud");
  ScalarGrid grid;
  grid.resolution = resolution;
  Vector3d lo = positions.colwise().minCoeff();
  Vector3d hi = positions.colwise().maxCoeff();
  Vector3d pad = padding * (hi - lo).cwiseMax(1e-6);
  grid.lo = lo - pad;
  grid.hi = hi + pad;
  return grid;
}

constexpr Eigen::Index kGridTile = 65536;

// Cap tile * train so each cross-Gram block (and the recursion temporaries
// behind it) stays around a hundred MB regardless of training size.
inline Eigen::Index grid_tile_rows(Eigen::Index train_rows) {
  const Eigen::Index budget = Eigen::Index(1) << 23;  // 8M entries, 64 MB
  return std::clamp<Eigen::Index>(budget / std::max<Eigen::Index>(1, train_rows), 64, kGridTile);
}

// Homogeneous bias coordinate appended to the position features. The plain
// position kernel is 1-homogeneous, so every regressed field would be linear
// along rays through the origin and could never close around a shape; lifting
// to [x | c] evaluates a 4-D cone at the slice x4 = c, which can.
constexpr double kSdfBias = 1.0;

inline MatrixXd with_bias(const PointMatrix& positions) {
  MatrixXd out(positions.rows(), 4);
  out.leftCols<3>() = positions;
  out.col(3).setConstant(kSdfBias);
  return out;
}

/// Signed-distance regression on the grid: per-point kernel ridge regression
/// on bias-augmented positions (depth-1 kernel by default). The grid is
/// evaluated in tiles to bound the cross-Gram size. lambda = kAutoLambda picks
/// 1e-8 * trace / n. `use_normals = true` multiplies in a normal-channel
/// kernel with grid normals fixed to +z; that channel zeroes out the influence
/// of training points whose normals face away from +z, which wrecks closed
/// shapes, so it is off by default and kept only as an ablation.
inline void fit_and_eval_sdf(const SdfTrainingSet& train, ScalarGrid& grid, int depth = 1,
                             double lambda = kAutoLambda, bool use_normals = false) {
  const Eigen::Index n = train.features.size();
  if (train.targets.size() != n) throw std::invalid_argument("fit_and_eval_sdf: feature/target mismatch");

  MatrixXd train_feat = with_bias(train.features.positions);
  MatrixXd gram = ntk_mlp(train_feat, train_feat, depth);
  if (use_normals)
    gram = gram.cwiseProduct(ntk_mlp(train.features.normals, train.features.normals, depth));
  if (lambda == kAutoLambda) lambda = 1e-8 * gram.trace() / static_cast<double>(n);
  VectorXd alpha = krr_solve(gram, train.targets, lambda);

  const int res = grid.resolution;
  const Eigen::Index total = static_cast<Eigen::Index>(res) * res * res;
  grid.values.resize(total);
  Eigen::RowVector3d grid_normal(0.0, 0.0, 1.0);

  const Eigen::Index tile = grid_tile_rows(n);
  const Eigen::Index ntiles = (total + tile - 1) / tile;
  parallel_for(ntiles, [&](std::int64_t tlo, std::int64_t thi) {
    for (std::int64_t t = tlo; t < thi; ++t) {
      const Eigen::Index start = t * tile;
      const Eigen::Index count = std::min(tile, total - start);
      MatrixXd pts(count, 4);
      for (Eigen::Index q = 0; q < count; ++q) {
        const Eigen::Index flat = start + q;
        const int i = static_cast<int>(flat % res);
        const int j = static_cast<int>((flat / res) % res);
        const int k = static_cast<int>(flat / (static_cast<Eigen::Index>(res) * res));
        pts.row(q).head<3>() = grid.point(i, j, k).transpose();
      }
      pts.col(3).setConstant(kSdfBias);
      MatrixXd cross = ntk_mlp(pts, train_feat, depth);
      if (use_normals) {
        PointMatrix nor = grid_normal.replicate(count, 1);
        cross = cross.cwiseProduct(ntk_mlp(nor, train.features.normals, depth));
      }
      grid.values.segment(start, count) = cross * alpha;
    }
  });
}

/// Classic table-driven marching cubes with linear interpolation along cut
/// edges. Vertices inside a grid cell are shared through an edge-key map, so
/// the mesh is indexed (watertight wherever the level set avoids the bounds).
inline TriangleMesh marching_cubes(const ScalarGrid& grid, double level = 0.0) {
  const int res = grid.resolution;
  if (grid.values.size() != static_cast<Eigen::Index>(res) * res * res)
    throw std::invalid_argument("marching_cubes: grid values not populated");
  if (!grid.values.allFinite()) throw std::invalid_argument("marching_cubes: non-finite grid value");

  TriangleMesh mesh;
  std::vector<Vector3d> verts;
  // Edge key: (flat index of lower corner) * 3 + axis of the edge.
  std::unordered_map<std::int64_t, int> edge_vertex;

  auto value_at = [&](int i, int j, int k) { return grid.values(grid.index(i, j, k)); };

  auto vertex_on_edge = [&](int ci, int cj, int ck, int edge) {
    const int* a = mc::corner_offset[mc::edge_corners[edge][0]];
    const int* b = mc::corner_offset[mc::edge_corners[edge][1]];
    int i0 = ci + a[0], j0 = cj + a[1], k0 = ck + a[2];
    int i1 = ci + b[0], j1 = cj + b[1], k1 = ck + b[2];
    // Canonical orientation: corner with the smaller flat index first.
    if (grid.index(i1, j1, k1) < grid.index(i0, j0, k0)) {
      std::swap(i0, i1);
      std::swap(j0, j1);
      std::swap(k0, k1);
    }
    const int axis = i0 != i1 ? 0 : (j0 != j1 ? 1 : 2);
    const std::int64_t key = static_cast<std::int64_t>(grid.index(i0, j0, k0)) * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double v0 = value_at(i0, j0, k0), v1 = value_at(i1, j1, k1);
    double t = v1 == v0 ? 0.5 : (level - v0) / (v1 - v0);
    t = std::min(1.0, std::max(0.0, t));
    Vector3d p0 = grid.point(i0, j0, k0), p1 = grid.point(i1, j1, k1);
    const int id = static_cast<int>(verts.size());
    verts.push_back(p0 + t * (p1 - p0));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int k = 0; k + 1 < res; ++k) {
    for (int j = 0; j + 1 < res; ++j) {
      for (int i = 0; i + 1 < res; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          const int* o = mc::corner_offset[c];
          if (value_at(i + o[0], j + o[1], k + o[2]) < level) config |= 1 << c;
        }
        if (mc::edge_table[config] == 0) continue;
        const int* tri = mc::tri_table[config];
        for (int t = 0; tri[t] != -1; t += 3) {
          // table order winds clockwise seen from outside; swap for CCW faces
          std::array<int, 3> f = {vertex_on_edge(i, j, k, tri[t]), vertex_on_edge(i, j, k, tri[t + 2]),
                                  vertex_on_edge(i, j, k, tri[t + 1])};
          if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;  // collapsed by clamping
          mesh.faces.push_back(f);
        }
      }
    }
  }

  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) mesh.vertices.row(v) = verts[static_cast<std::size_t>(v)];
  return mesh;
}

struct ReconstructionScore {
  double cd = 0.0;
  double emd = 0.0;
};

/// Sample k area-weighted points from each mesh and compare the positions.
inline ReconstructionScore evaluate_reconstruction(const TriangleMesh& mesh, const TriangleMesh& reference, int k,
                                                   std::uint64_t seed) {
  OrientedPointCloud a = sample_area_weighted(mesh, k, seed);
  OrientedPointCloud b = sample_area_weighted(reference, k, seed);
  ReconstructionScore score;
  score.cd = chamfer(a.positions, b.positions);
  score.emd = emd_exact(a.positions, b.positions).cost;
  return score;
}

struct ReconstructConfig {
  double delta = 0.01;
  int grid_resolution = 128;
  double padding = 0.1;
  int depth = 1;
  double lambda = kAutoLambda;
  bool use_normals = false;
};

/// Full pipeline: augment, fit, evaluate on the padded grid, extract the mesh.
inline TriangleMesh reconstruct_surface(const OrientedPointCloud& cloud, const ReconstructConfig& cfg = {}) {
  SdfTrainingSet train = augment_offsurface(cloud, cfg.delta);
  ScalarGrid grid = make_grid(train.features.positions, cfg.grid_resolution, cfg.padding);
  fit_and_eval_sdf(train, grid, cfg.depth, cfg.lambda, cfg.use_normals);
  return marching_cubes(grid);
}

}  // namespace nvf
