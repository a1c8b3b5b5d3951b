#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "nvf/common.hpp"

namespace nvf {

struct TriangleMesh {
  PointMatrix vertices;                     // nv x 3
  std::vector<std::array<int, 3>> faces;    // 0-based, CCW
};

struct OrientedPointCloud {
  PointMatrix positions;  // m x 3
  PointMatrix normals;    // m x 3, unit rows

  Eigen::Index size() const { return positions.rows(); }
};

inline void validate_cloud(const OrientedPointCloud& c) {
  if (c.positions.rows() < 1 || c.positions.rows() != c.normals.rows())
    throw std::invalid_argument("point cloud: positions/normals row mismatch");
  for (Eigen::Index i = 0; i < c.normals.rows(); ++i) {
    if (std::abs(c.normals.row(i).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("point cloud: non-unit normal at row " + std::to_string(i));
  }
}

enum class MeshFormat { OBJ, OFF };

inline MeshFormat format_from_path(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
  if (ext == "off") return MeshFormat::OFF;
  return MeshFormat::OBJ;
}

namespace detail {

[[noreturn]] inline void parse_fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

inline bool degenerate_face(const std::array<int, 3>& f) {
  return f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
}

}  // namespace detail

/// Loads an ASCII OBJ or OFF mesh. Degenerate faces (repeated indices) are
/// dropped; the drop count is reported through `dropped` when non-null.
inline TriangleMesh load_mesh(const std::string& path, MeshFormat format, int* dropped = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  TriangleMesh mesh;
  std::vector<Vector3d> verts;
  int ndrop = 0;
  int lineno = 0;
  std::string line;

  auto push_face = [&](std::array<int, 3> f) {
    for (int k : f)
      if (k < 0 || k >= static_cast<int>(verts.size()))
        detail::parse_fail(path, lineno, "face index out of range");
    if (detail::degenerate_face(f)) {
      ++ndrop;
      return;
    }
    mesh.faces.push_back(f);
  };

  if (format == MeshFormat::OFF) {
    auto next_content = [&](std::string& out) -> bool {
      while (std::getline(in, line)) {
        ++lineno;
        auto pos = line.find('#');
        if (pos != std::string::npos) line.resize(pos);
        std::istringstream probe(line);
        std::string tok;
        if (probe >> tok) {
          out = line;
          return true;
        }
      }
      return false;
    };
    std::string content;
    if (!next_content(content)) detail::parse_fail(path, lineno, "empty OFF file");
    {
      std::istringstream hs(content);
      std::string magic;
      hs >> magic;
      if (magic != "OFF") detail::parse_fail(path, lineno, "missing OFF header");
    }
    if (!next_content(content)) detail::parse_fail(path, lineno, "missing count line");
    long nv = 0, nf = 0, ne = 0;
    {
      std::istringstream cs(content);
      if (!(cs >> nv >> nf >> ne) || nv < 0 || nf < 0)
        detail::parse_fail(path, lineno, "bad count line");
    }
    verts.reserve(static_cast<std::size_t>(nv));
    for (long i = 0; i < nv; ++i) {
      if (!next_content(content)) detail::parse_fail(path, lineno, "unexpected end of vertices");
      std::istringstream vs(content);
      Vector3d v;
      if (!(vs >> v.x() >> v.y() >> v.z())) detail::parse_fail(path, lineno, "bad vertex line");
      verts.push_back(v);
    }
    for (long i = 0; i < nf; ++i) {
      if (!next_content(content)) detail::parse_fail(path, lineno, "unexpected end of faces");
      std::istringstream fs(content);
      int cnt = 0;
      if (!(fs >> cnt) || cnt < 3) detail::parse_fail(path, lineno, "bad face line");
      std::vector<int> idx(static_cast<std::size_t>(cnt));
      for (int& k : idx)
        if (!(fs >> k)) detail::parse_fail(path, lineno, "bad face line");
      for (int k = 1; k + 1 < cnt; ++k) push_face({idx[0], idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(k) + 1]});
    }
  } else {
    // OBJ subset: only v and f records; anything else ignored.
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string tag;
      if (!(ls >> tag)) continue;
      if (tag == "v") {
        Vector3d v;
        if (!(ls >> v.x() >> v.y() >> v.z())) detail::parse_fail(path, lineno, "bad vertex line");
        verts.push_back(v);
      } else if (tag == "f") {
        std::vector<int> idx;
        std::string tok;
        while (ls >> tok) {
          auto slash = tok.find('/');
          if (slash != std::string::npos) tok.resize(slash);
          int k = 0;
          try {
            k = std::stoi(tok);
          } catch (...) {
            detail::parse_fail(path, lineno, "bad face index '" + tok + "'");
          }
          idx.push_back(k - 1);  // 1-based in OBJ
        }
        if (idx.size() < 3) detail::parse_fail(path, lineno, "face needs >= 3 indices");
        for (std::size_t k = 1; k + 1 < idx.size(); ++k) push_face({idx[0], idx[k], idx[k + 1]});
      }
    }
  }

  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) mesh.vertices.row(i) = verts[static_cast<std::size_t>(i)];
  if (dropped) *dropped = ndrop;
  return mesh;
}

inline TriangleMesh load_mesh(const std::string& path) {
  return load_mesh(path, format_from_path(path));
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path, MeshFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  if (format == MeshFormat::OFF) {
    out << "OFF\n" << mesh.vertices.rows() << ' ' << mesh.faces.size() << " 0\n";
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
      out << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  } else {
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
      out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  if (!out) throw std::runtime_error("write failure on " + path);
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path) {
  save_mesh(mesh, path, format_from_path(path));
}

/// One point per face at the barycenter; normal from the CCW winding.
/// Zero-area faces are skipped; count reported via `skipped`.
inline OrientedPointCloud sample_face_centers(const TriangleMesh& mesh, int* skipped = nullptr) {
  if (mesh.faces.empty()) throw std::invalid_argument("sample_face_centers: mesh has no faces");
  OrientedPointCloud cloud;
  cloud.positions.resize(static_cast<Eigen::Index>(mesh.faces.size()), 3);
  cloud.normals.resize(static_cast<Eigen::Index>(mesh.faces.size()), 3);
  Eigen::Index m = 0;
  int nskip = 0;
  for (const auto& f : mesh.faces) {
    Vector3d v0 = mesh.vertices.row(f[0]), v1 = mesh.vertices.row(f[1]), v2 = mesh.vertices.row(f[2]);
    Vector3d c = (v1 - v0).cross(v2 - v0);
    const double len = c.norm();
    if (len < 1e-12) {
      ++nskip;
      continue;
    }
    cloud.positions.row(m) = ((v0 + v1 + v2) / 3.0).transpose();
    cloud.normals.row(m) = (c / len).transpose();
    ++m;
  }
  if (skipped) *skipped = nskip;
  if (m == 0) throw std::invalid_argument("sample_face_centers: all faces have zero area");
  cloud.positions.conservativeResize(m, 3);
  cloud.normals.conservativeResize(m, 3);
  return cloud;
}

/// k points drawn proportionally to face area with uniform barycentric
/// coordinates inside the chosen face. Deterministic for a fixed seed.
inline OrientedPointCloud sample_area_weighted(const TriangleMesh& mesh, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("sample_area_weighted: k must be >= 1");
  if (mesh.faces.empty()) throw std::invalid_argument("sample_area_weighted: mesh has no faces");
  const std::size_t nf = mesh.faces.size();
  std::vector<double> cumulative(nf);
  std::vector<Vector3d> normals(nf);
  double total = 0;
  for (std::size_t f = 0; f < nf; ++f) {
    Vector3d v0 = mesh.vertices.row(mesh.faces[f][0]);
    Vector3d v1 = mesh.vertices.row(mesh.faces[f][1]);
    Vector3d v2 = mesh.vertices.row(mesh.faces[f][2]);
    Vector3d c = (v1 - v0).cross(v2 - v0);
    const double len = c.norm();
    total += 0.5 * len;
    cumulative[f] = total;
    normals[f] = len > 1e-12 ? Vector3d(c / len) : Vector3d::Zero();
  }
  if (total < 1e-300) throw std::invalid_argument("sample_area_weighted: zero total area");

  std::mt19937_64 rng(seed);
  auto unit = [&rng] {
    // 53-bit uniform in [0,1); avoids distribution portability concerns
    return static_cast<double>(rng() >> 11) * 0x1p-53;
  };
  OrientedPointCloud cloud;
  cloud.positions.resize(k, 3);
  cloud.normals.resize(k, 3);
  for (int i = 0; i < k; ++i) {
    const double r = unit() * total;
    std::size_t f = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    if (f >= nf) f = nf - 1;
    while (normals[f].isZero()) f = (f + 1) % nf;  // skip slivers
    double u = unit(), v = unit();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Vector3d v0 = mesh.vertices.row(mesh.faces[f][0]);
    Vector3d v1 = mesh.vertices.row(mesh.faces[f][1]);
    Vector3d v2 = mesh.vertices.row(mesh.faces[f][2]);
    cloud.positions.row(i) = (v0 + u * (v1 - v0) + v * (v2 - v0)).transpose();
    cloud.normals.row(i) = normals[f].transpose();
  }
  return cloud;
}

struct UnitSphereTransform {
  Vector3d center = Vector3d::Zero();
  double scale = 1.0;
};

/// Translates by -centroid and divides by the max row norm, so the result
/// fits the unit ball with max norm exactly 1. Normals unchanged.
inline OrientedPointCloud normalize_unit_sphere(const OrientedPointCloud& cloud, UnitSphereTransform* transform = nullptr) {
  validate_cloud(cloud);
  Vector3d center = cloud.positions.colwise().mean();
  PointMatrix centered = cloud.positions.rowwise() - center.transpose();
  const double scale = centered.rowwise().norm().maxCoeff();
  if (scale < 1e-12) throw std::invalid_argument("normalize_unit_sphere: all points coincident");
  OrientedPointCloud out;
  out.positions = centered / scale;
  out.normals = cloud.normals;
  if (transform) *transform = {center, scale};
  return out;
}

/// XYZN: one `x y z nx ny nz` line per point, '#' comments skipped.
inline OrientedPointCloud load_xyzn(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::array<double, 6>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto pos = line.find('#');
    if (pos != std::string::npos) line.resize(pos);
    std::istringstream ls(line);
    std::array<double, 6> r{};
    if (!(ls >> r[0])) continue;  // blank
    if (!(ls >> r[1] >> r[2] >> r[3] >> r[4] >> r[5])) detail::parse_fail(path, lineno, "expected 6 numbers");
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty point cloud");
  OrientedPointCloud cloud;
  cloud.positions.resize(static_cast<Eigen::Index>(rows.size()), 3);
  cloud.normals.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (Eigen::Index i = 0; i < cloud.positions.rows(); ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    cloud.positions.row(i) << r[0], r[1], r[2];
    cloud.normals.row(i) << r[3], r[4], r[5];
  }
  validate_cloud(cloud);
  return cloud;
}

inline void save_xyzn(const OrientedPointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < cloud.positions.rows(); ++i)
    out << cloud.positions(i, 0) << ' ' << cloud.positions(i, 1) << ' ' << cloud.positions(i, 2) << ' '
        << cloud.normals(i, 0) << ' ' << cloud.normals(i, 1) << ' ' << cloud.normals(i, 2) << '\n';
}

}  // namespace nvf
