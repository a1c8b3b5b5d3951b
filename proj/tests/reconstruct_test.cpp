#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "nvf/reconstruct.hpp"
#include "test_support.hpp"

using namespace nvf;

namespace {

ScalarGrid analytic_grid(int res, const Vector3d& lo, const Vector3d& hi, double (*field)(const Vector3d&)) {
  ScalarGrid grid;
  grid.resolution = res;
  grid.lo = lo;
  grid.hi = hi;
  grid.values.resize(static_cast<Eigen::Index>(res) * res * res);
  for (int k = 0; k < res; ++k)
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i) grid.values(grid.index(i, j, k)) = field(grid.point(i, j, k));
  return grid;
}

// Edges used exactly once by the triangle soup (open boundary).
std::vector<std::pair<int, int>> boundary_edges(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      auto key = std::minmax(f[e], f[(e + 1) % 3]);
      ++count[key];
    }
  }
  std::vector<std::pair<int, int>> open;
  for (const auto& [edge, n] : count)
    if (n == 1) open.push_back(edge);
  return open;
}

}  // namespace

TEST_CASE("off-surface augmentation hand values") {
  OrientedPointCloud c;
  c.positions.resize(1, 3);
  c.positions << 1, 0, 0;
  c.normals.resize(1, 3);
  c.normals << 1, 0, 0;
  SdfTrainingSet set = augment_offsurface(c, 0.1);
  REQUIRE(set.features.size() == 3);
  CHECK(set.features.positions.row(0).isApprox(Eigen::RowVector3d(1, 0, 0), 1e-15));
  CHECK(set.features.positions.row(1).isApprox(Eigen::RowVector3d(0.9, 0, 0), 1e-15));
  CHECK(set.features.positions.row(2).isApprox(Eigen::RowVector3d(1.1, 0, 0), 1e-15));
  CHECK(set.targets(0) == 0.0);
  CHECK(set.targets(1) == -0.1);
  CHECK(set.targets(2) == 0.1);
  for (int r = 0; r < 3; ++r) CHECK(set.features.normals.row(r).isApprox(c.normals.row(0), 1e-15));

  OrientedPointCloud many = nvftest::sphere_cloud(17, 4);
  CHECK(augment_offsurface(many, 0.05).features.size() == 51);
  CHECK_THROWS_AS(augment_offsurface(many, 0.0), std::invalid_argument);
}

TEST_CASE("grid construction pads the bounding box") {
  PointMatrix pts(2, 3);
  pts << 0, 0, 0, 1, 2, 4;
  ScalarGrid grid = make_grid(pts, 16, 0.1);
  CHECK(grid.lo.x() == doctest::Approx(-0.1));
  CHECK(grid.hi.y() == doctest::Approx(2.2));
  CHECK(grid.hi.z() == doctest::Approx(4.4));
  CHECK(grid.point(0, 0, 0).isApprox(grid.lo, 1e-12));
  CHECK(grid.point(15, 15, 15).isApprox(grid.hi, 1e-12));
  CHECK_THROWS_AS(make_grid(pts, 1), std::invalid_argument);
}

TEST_CASE("ridge regression interpolates training targets at tiny lambda") {
  OrientedPointCloud cloud = nvftest::sphere_cloud(20, 3);
  SdfTrainingSet train = augment_offsurface(cloud, 0.05);
  MatrixXd feat = with_bias(train.features.positions);
  MatrixXd gram = ntk_mlp(feat, feat, 1);
  VectorXd alpha = krr_solve(gram, train.targets, 1e-12 * gram.trace() / 60.0);
  VectorXd back = gram * alpha;
  CHECK((back - train.targets).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero targets give a zero field") {
  OrientedPointCloud cloud = nvftest::sphere_cloud(12, 6);
  SdfTrainingSet train = augment_offsurface(cloud, 0.05);
  train.targets.setZero();
  ScalarGrid grid = make_grid(train.features.positions, 8);
  fit_and_eval_sdf(train, grid);
  CHECK(grid.values.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fitted sphere field is negative inside, positive at the corners") {
  OrientedPointCloud cloud = nvftest::sphere_cloud(256, 8);
  SdfTrainingSet train = augment_offsurface(cloud, 0.01);
  ScalarGrid grid = make_grid(train.features.positions, 32);
  fit_and_eval_sdf(train, grid);
  const int mid = 16;
  CHECK(grid.values(grid.index(mid, mid, mid)) < 0.0);
  CHECK(grid.values(grid.index(0, 0, 0)) > 0.0);
  CHECK(grid.values(grid.index(31, 31, 31)) > 0.0);
}

TEST_CASE("normal negation flips the positions-only field") {
  OrientedPointCloud cloud = nvftest::sphere_cloud(64, 9);
  OrientedPointCloud flipped = cloud;
  flipped.normals = -flipped.normals;
  SdfTrainingSet a = augment_offsurface(cloud, 0.05);
  SdfTrainingSet b = augment_offsurface(flipped, 0.05);
  ScalarGrid ga = make_grid(a.features.positions, 12);
  ScalarGrid gb = ga;
  fit_and_eval_sdf(a, ga, 1, kAutoLambda, /*use_normals=*/false);
  fit_and_eval_sdf(b, gb, 1, kAutoLambda, /*use_normals=*/false);
  CHECK((ga.values + gb.values).cwiseAbs().maxCoeff() < 1e-5 * ga.values.cwiseAbs().maxCoeff());
}

TEST_CASE("surface extraction is exact on a linear field") {
  ScalarGrid grid = analytic_grid(8, Vector3d::Zero(), Vector3d::Ones(),
                                  [](const Vector3d& p) { return p.z() - 0.5; });
  TriangleMesh mesh = marching_cubes(grid);
  REQUIRE(mesh.faces.size() > 0);
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v)
    CHECK(std::abs(mesh.vertices(v, 2) - 0.5) < 1e-9);
}

TEST_CASE("uniform-sign fields give empty meshes") {
  ScalarGrid pos = analytic_grid(6, Vector3d::Zero(), Vector3d::Ones(), [](const Vector3d&) { return 1.0; });
  CHECK(marching_cubes(pos).faces.empty());
  ScalarGrid neg = analytic_grid(6, Vector3d::Zero(), Vector3d::Ones(), [](const Vector3d&) { return -1.0; });
  CHECK(marching_cubes(neg).faces.empty());
}

TEST_CASE("extracted sphere has the right radius and is watertight") {
  ScalarGrid grid = analytic_grid(64, Vector3d(-1, -1, -1), Vector3d(1, 1, 1),
                                  [](const Vector3d& p) { return p.norm() - 0.8; });
  TriangleMesh mesh = marching_cubes(grid);
  REQUIRE(mesh.faces.size() > 100);
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v)
    CHECK(std::abs(mesh.vertices.row(v).norm() - 0.8) < 0.02);
  CHECK(boundary_edges(mesh).empty());
  // outward orientation: face normals point away from the center
  OrientedPointCloud centers = sample_face_centers(mesh);
  int outward = 0;
  for (Eigen::Index i = 0; i < centers.size(); ++i)
    if (centers.positions.row(i).dot(centers.normals.row(i)) > 0.0) ++outward;
  CHECK(outward == centers.size());
}

TEST_CASE("single-cell case table produces face-bounded patches") {
  // For all 256 sign patterns on one cube, every open boundary edge of the
  // emitted patch must lie on a cube face — a structural check of the tables.
  for (int config = 0; config < 256; ++config) {
    ScalarGrid grid;
    grid.resolution = 2;
    grid.lo = Vector3d::Zero();
    grid.hi = Vector3d::Ones();
    grid.values.resize(8);
    for (int c = 0; c < 8; ++c) {
      const int i = nvf::mc::corner_offset[c][0], j = nvf::mc::corner_offset[c][1], k = nvf::mc::corner_offset[c][2];
      grid.values(grid.index(i, j, k)) = (config >> c) & 1 ? -1.0 : 1.0;
    }
    TriangleMesh mesh = marching_cubes(grid);
    const bool mixed = config != 0 && config != 255;
    CHECK(mesh.faces.empty() == !mixed);
    for (const auto& [va, vb] : boundary_edges(mesh)) {
      bool on_face = false;
      for (int axis = 0; axis < 3; ++axis) {
        const double pa = mesh.vertices(va, axis), pb = mesh.vertices(vb, axis);
        if ((std::abs(pa) < 1e-12 && std::abs(pb) < 1e-12) ||
            (std::abs(pa - 1.0) < 1e-12 && std::abs(pb - 1.0) < 1e-12))
          on_face = true;
      }
      CAPTURE(config);
      CHECK(on_face);
    }
  }
}

TEST_CASE("reconstruction scores") {
  TriangleMesh ico = nvftest::icosphere(2);
  ReconstructionScore self = evaluate_reconstruction(ico, ico, 256, 11);
  CHECK(self.cd < 0.01);
  CHECK(self.emd >= 0.0);

  // force identical sample sets
  OrientedPointCloud s = sample_area_weighted(ico, 64, 5);
  CHECK(chamfer(s.positions, s.positions) == 0.0);
  CHECK(emd_exact(s.positions, s.positions).cost == doctest::Approx(0.0));
}

TEST_CASE("small end-to-end sphere reconstruction") {
  OrientedPointCloud cloud = nvftest::sphere_cloud(512, 13);
  ReconstructConfig cfg;
  cfg.grid_resolution = 32;
  TriangleMesh mesh = reconstruct_surface(cloud, cfg);
  REQUIRE(mesh.faces.size() > 100);
  double err = 0.0;
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) err += std::abs(mesh.vertices.row(v).norm() - 1.0);
  err /= static_cast<double>(mesh.vertices.rows());
  CHECK(err < 0.05);
}
