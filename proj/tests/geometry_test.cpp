#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nvf/geometry.hpp"
#include "test_support.hpp"

using namespace nvf;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("minimal OFF parses") {
  TempFile f("nvf_min.off");
  write_text(f.path, "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  TriangleMesh mesh = load_mesh(f.path, MeshFormat::OFF);
  CHECK(mesh.vertices.rows() == 3);
  CHECK(mesh.faces.size() == 1);
}

TEST_CASE("OFF with comments and inline counts") {
  TempFile f("nvf_comment.off");
  write_text(f.path, "# header comment\nOFF\n# counts\n3 1 0\n0 0 0 # origin\n1 0 0\n0 1 0\n3 0 1 2\n");
  TriangleMesh mesh = load_mesh(f.path, MeshFormat::OFF);
  CHECK(mesh.vertices.rows() == 3);
  CHECK(mesh.faces.size() == 1);
}

TEST_CASE("OBJ index out of range errors with line number") {
  TempFile f("nvf_bad.obj");
  write_text(f.path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n");
  CHECK_THROWS_WITH_AS(load_mesh(f.path, MeshFormat::OBJ), doctest::Contains(":4:"), std::runtime_error);
}

TEST_CASE("degenerate faces dropped with count") {
  TempFile f("nvf_degen.obj");
  write_text(f.path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 3\n");
  int dropped = 0;
  TriangleMesh mesh = load_mesh(f.path, MeshFormat::OBJ, &dropped);
  CHECK(mesh.faces.size() == 1);
  CHECK(dropped == 1);
}

TEST_CASE("OBJ polygon fan triangulation and slash suffixes") {
  TempFile f("nvf_quad.obj");
  write_text(f.path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n");
  TriangleMesh mesh = load_mesh(f.path, MeshFormat::OBJ);
  CHECK(mesh.vertices.rows() == 4);
  CHECK(mesh.faces.size() == 2);
}

TEST_CASE("mesh round trips through OFF and OBJ") {
  TriangleMesh ico = nvftest::icosphere(0);
  CHECK(ico.vertices.rows() == 12);
  CHECK(ico.faces.size() == 20);
  for (MeshFormat fmt : {MeshFormat::OFF, MeshFormat::OBJ}) {
    TempFile f(fmt == MeshFormat::OFF ? "nvf_rt.off" : "nvf_rt.obj");
    save_mesh(ico, f.path, fmt);
    TriangleMesh back = load_mesh(f.path, fmt);
    REQUIRE(back.vertices.rows() == ico.vertices.rows());
    CHECK((back.vertices - ico.vertices).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(back.faces == ico.faces);
  }
}

TEST_CASE("faceless mesh saves and loads") {
  TriangleMesh points;
  points.vertices.resize(2, 3);
  points.vertices << 0, 0, 0, 1, 2, 3;
  TempFile f("nvf_pts.off");
  save_mesh(points, f.path);
  TriangleMesh back = load_mesh(f.path);
  CHECK(back.vertices.rows() == 2);
  CHECK(back.faces.empty());
}

TEST_CASE("face centers: hand triangle") {
  TriangleMesh tri;
  tri.vertices.resize(3, 3);
  tri.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  tri.faces = {{0, 1, 2}};
  OrientedPointCloud c = sample_face_centers(tri);
  CHECK(c.positions.row(0).isApprox(Eigen::RowVector3d(1.0 / 3, 1.0 / 3, 0), 1e-12));
  CHECK(c.normals.row(0).isApprox(Eigen::RowVector3d(0, 0, 1), 1e-12));

  tri.faces = {{0, 2, 1}};
  OrientedPointCloud flipped = sample_face_centers(tri);
  CHECK(flipped.normals.row(0).isApprox(Eigen::RowVector3d(0, 0, -1), 1e-12));
}

TEST_CASE("face centers: icosahedron normals point outward and are unit") {
  OrientedPointCloud c = sample_face_centers(nvftest::icosphere(0));
  REQUIRE(c.size() == 20);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    CHECK(c.positions.row(i).dot(c.normals.row(i)) > 0.0);
    CHECK(std::abs(c.normals.row(i).norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("face centers: zero-area faces skipped") {
  TriangleMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 2, 0, 0;
  m.faces = {{0, 1, 2}, {0, 1, 3}};  // second face is collinear
  int skipped = 0;
  OrientedPointCloud c = sample_face_centers(m, &skipped);
  CHECK(c.size() == 1);
  CHECK(skipped == 1);
}

TEST_CASE("area-weighted sampling: single triangle") {
  TriangleMesh tri;
  tri.vertices.resize(3, 3);
  tri.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  tri.faces = {{0, 1, 2}};
  OrientedPointCloud c = sample_area_weighted(tri, 5, 7);
  REQUIRE(c.size() == 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(c.positions(i, 0) >= -1e-12);
    CHECK(c.positions(i, 1) >= -1e-12);
    CHECK(c.positions(i, 0) + c.positions(i, 1) <= 1.0 + 1e-12);
    CHECK(c.positions(i, 2) == doctest::Approx(0.0));
    CHECK(c.normals.row(i).isApprox(Eigen::RowVector3d(0, 0, 1), 1e-12));
  }
}

TEST_CASE("area-weighted sampling: proportional to area") {
  TriangleMesh m;
  m.vertices.resize(5, 3);
  // triangle 1 area 0.5, triangle 2 area 1.5 (3x the first)
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 3, 0, 1, 3, 1, 1;
  m.faces = {{0, 1, 2}, {0, 3, 4}};
  OrientedPointCloud c = sample_area_weighted(m, 40000, 11);
  int on_second = 0;
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (c.positions(i, 2) > 1e-9) ++on_second;
  const double frac = static_cast<double>(on_second) / 40000.0;
  CHECK(frac == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("area-weighted sampling: deterministic per seed") {
  TriangleMesh ico = nvftest::icosphere(1);
  OrientedPointCloud a = sample_area_weighted(ico, 100, 42);
  OrientedPointCloud b = sample_area_weighted(ico, 100, 42);
  CHECK((a.positions - b.positions).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.normals - b.normals).cwiseAbs().maxCoeff() == 0.0);
  OrientedPointCloud c = sample_area_weighted(ico, 100, 43);
  CHECK((a.positions - c.positions).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("unit-sphere normalization") {
  OrientedPointCloud cube;
  cube.positions.resize(8, 3);
  int r = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) cube.positions.row(r++) << 2.0 * sx, 2.0 * sy, 2.0 * sz;
  cube.normals = PointMatrix::Zero(8, 3);
  cube.normals.col(2).setOnes();
  UnitSphereTransform t;
  OrientedPointCloud out = normalize_unit_sphere(cube, &t);
  CHECK(t.scale == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
  CHECK(out.positions.rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));

  OrientedPointCloud again = normalize_unit_sphere(out);
  CHECK((again.positions - out.positions).cwiseAbs().maxCoeff() < 1e-12);

  OrientedPointCloud lone;
  lone.positions.resize(1, 3);
  lone.positions << 5, 5, 5;
  lone.normals.resize(1, 3);
  lone.normals << 0, 0, 1;
  CHECK_THROWS_AS(normalize_unit_sphere(lone), std::invalid_argument);
}

TEST_CASE("xyzn round trip with comments") {
  OrientedPointCloud c = nvftest::sphere_cloud(32, 5);
  TempFile f("nvf_cloud.xyzn");
  save_xyzn(c, f.path);
  OrientedPointCloud back = load_xyzn(f.path);
  CHECK((back.positions - c.positions).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((back.normals - c.normals).cwiseAbs().maxCoeff() < 1e-15);

  TempFile g("nvf_comment.xyzn");
  write_text(g.path, "# a comment\n0 0 1 0 0 1\n\n1 0 0 1 0 0 # trailing\n");
  OrientedPointCloud parsed = load_xyzn(g.path);
  CHECK(parsed.size() == 2);

  TempFile h("nvf_bad.xyzn");
  write_text(h.path, "0 0 1 0 0\n");
  CHECK_THROWS_AS(load_xyzn(h.path), std::runtime_error);
}

TEST_CASE("validate rejects non-unit normals") {
  OrientedPointCloud c;
  c.positions.resize(1, 3);
  c.positions << 0, 0, 0;
  c.normals.resize(1, 3);
  c.normals << 0, 0, 2;
  CHECK_THROWS_AS(validate_cloud(c), std::invalid_argument);
}
