// Triangle meshes: adjacency, normals, nearest-vertex queries, the PV landmark walk
// and correspondence-based rigid registration.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "larecon/core.hpp"

namespace larecon {

using Face = std::array<int, 3>;

class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Point3> vertices, std::vector<Face> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    const int n = static_cast<int>(vertices_.size());
    neighbors_.assign(vertices_.size(), {});
    incident_.assign(vertices_.size(), {});
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const Face& t = faces_[f];
      for (int k = 0; k < 3; ++k) {
        require(t[k] >= 0 && t[k] < n, ErrorCode::InvalidArgument, "face index out of range");
      }
      require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], ErrorCode::InvalidArgument,
              "degenerate face with repeated vertex");
      for (int k = 0; k < 3; ++k) {
        const int a = t[k];
        const int b = t[(k + 1) % 3];
        neighbors_[a].push_back(b);
        neighbors_[b].push_back(a);
        incident_[a].push_back(static_cast<int>(f));
      }
    }
    for (auto& nb : neighbors_) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
  }

  const std::vector<Point3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<int>& neighbors(int v) const { return neighbors_[v]; }
  const std::vector<int>& incident_faces(int v) const { return incident_[v]; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return vertices_.empty(); }

  /// Undirected edge -> number of faces using it.
  std::map<std::pair<int, int>, int> edge_use() const {
    std::map<std::pair<int, int>, int> use;
    for (const Face& t : faces_) {
      for (int k = 0; k < 3; ++k) {
        int a = t[k], b = t[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        ++use[{a, b}];
      }
    }
    return use;
  }

  std::size_t boundary_edge_count() const {
    std::size_t n = 0;
    for (const auto& [e, c] : edge_use()) n += (c == 1);
    return n;
  }

  bool is_closed() const {
    for (const auto& [e, c] : edge_use()) {
      if (c != 2) return false;
    }
    return true;
  }

  long euler_characteristic() const {
    return static_cast<long>(vertices_.size()) - static_cast<long>(edge_use().size()) +
           static_cast<long>(faces_.size());
  }

  /// Divergence-theorem volume; positive when faces wind counter-clockwise seen from outside.
  double signed_volume() const {
    double v = 0.0;
    for (const Face& t : faces_) {
      v += vertices_[t[0]].dot(vertices_[t[1]].cross(vertices_[t[2]]));
    }
    return v / 6.0;
  }

  Point3 face_area_normal(int f) const {
    const Face& t = faces_[f];
    return 0.5 * (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
  }

  double mean_edge_length() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [e, c] : edge_use()) {
      sum += (vertices_[e.first] - vertices_[e.second]).norm();
      ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  TriMesh transformed(const Eigen::Matrix3d& rotation, const Point3& translation) const {
    std::vector<Point3> v;
    v.reserve(vertices_.size());
    for (const auto& p : vertices_) v.push_back(rotation * p + translation);
    return TriMesh(std::move(v), faces_);
  }

 private:
  std::vector<Point3> vertices_;
  std::vector<Face> faces_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<int>> incident_;
};

/// Pulmonary-vein ostium centers and the septal entry point, in mm.
struct Landmarks {
  Point3 pv_ls = Point3::Zero();
  Point3 pv_li = Point3::Zero();
  Point3 pv_ri = Point3::Zero();
  Point3 pv_rs = Point3::Zero();
  Point3 septum = Point3::Zero();

  std::array<Point3, 4> pvs() const { return {pv_ls, pv_li, pv_ri, pv_rs}; }
  void set_pv(int k, const Point3& p) {
    switch (k) {
      case 0: pv_ls = p; break;
      case 1: pv_li = p; break;
      case 2: pv_ri = p; break;
      default: pv_rs = p; break;
    }
  }

  bool pvs_distinct() const {
    const auto p = pvs();
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (p[i] == p[j]) return false;
    return true;
  }
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Point3 translation = Point3::Zero();

  Point3 apply(const Point3& p) const { return rotation * p + translation; }

  bool is_proper(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

inline int nearest_vertex(const TriMesh& mesh, const Point3& p) {
  require(!mesh.empty(), ErrorCode::EmptyMesh, "nearest_vertex on empty mesh");
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  const auto& v = mesh.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d2 = (v[i] - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Area-weighted average of incident face normals, following face winding.
inline Point3 vertex_normal(const TriMesh& mesh, int v) {
  require(v >= 0 && static_cast<std::size_t>(v) < mesh.vertex_count(), ErrorCode::InvalidArgument,
          "vertex index out of range");
  const auto& faces = mesh.incident_faces(v);
  require(!faces.empty(), ErrorCode::IsolatedVertex, "vertex has no incident faces");
  Point3 sum = Point3::Zero();
  for (int f : faces) sum += mesh.face_area_normal(f);
  const double n = sum.norm();
  require(n > 0.0, ErrorCode::DegenerateConfiguration, "incident face normals cancel");
  return sum / n;
}

struct PvWalk {
  int vertex = 0;
  std::vector<int> visited;  // start vertex first
};

/// Slides from the vertex nearest `p` across mesh edges, always taking the neighbor whose
/// unit offset has the largest projection on `d`, until that projection drops below eps.
/// Ties go to the lowest vertex index; zero-length edges are ignored.
inline PvWalk find_point_in_pv_traced(const TriMesh& mesh, const Point3& p, const Point3& d, double eps) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  require(std::abs(d.norm() - 1.0) < 1e-6, ErrorCode::InvalidArgument, "direction must be unit length");
  PvWalk walk;
  int current = nearest_vertex(mesh, p);
  walk.visited.push_back(current);
  const auto& verts = mesh.vertices();
  // Every accepted step raises position·d by >= eps * (shortest edge), so the walk is finite;
  // the explicit cap only guards against non-finite input.
  const std::size_t cap = mesh.vertex_count() + 1;
  while (walk.visited.size() <= cap) {
    double best = -std::numeric_limits<double>::infinity();
    int best_v = -1;
    for (int nb : mesh.neighbors(current)) {
      const Point3 off = verts[nb] - verts[current];
      const double len = off.norm();
      if (len == 0.0) continue;
      const double proj = off.dot(d) / len;
      if (proj > best) {
        best = proj;
        best_v = nb;
      }
    }
    if (best_v < 0 || best < eps) break;
    current = best_v;
    walk.visited.push_back(current);
  }
  walk.vertex = current;
  return walk;
}

inline int find_point_in_pv(const TriMesh& mesh, const Point3& p, const Point3& d, double eps) {
  return find_point_in_pv_traced(mesh, p, d, eps).vertex;
}

/// Closed-form least-squares rotation + translation taking src onto dst (no scaling,
/// reflections excluded).
inline RigidTransform rigid_register(const std::vector<Point3>& src, const std::vector<Point3>& dst) {
  require(src.size() == dst.size(), ErrorCode::ShapeMismatch, "point sets differ in size");
  require(src.size() >= 3, ErrorCode::DegenerateConfiguration, "need at least 3 correspondences");
  Point3 cs = Point3::Zero(), cd = Point3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(dst.size());

  Eigen::Matrix3d spread = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Point3 a = src[i] - cs;
    spread += a * a.transpose();
    cross += (dst[i] - cd) * a.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(spread);
  const auto ev = eig.eigenvalues();  // ascending
  require(ev[2] > 0.0 && ev[1] > 1e-12 * ev[2], ErrorCode::DegenerateConfiguration,
          "source points are collinear or coincident");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d& u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  if ((u * v.transpose()).determinant() < 0.0) fix(2, 2) = -1.0;

  RigidTransform t;
  t.rotation = u * fix * v.transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

inline double registration_residual(const RigidTransform& t, const std::vector<Point3>& src,
                                    const std::vector<Point3>& dst) {
  double r = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) r += (t.apply(src[i]) - dst[i]).squaredNorm();
  return r;
}

/// Draws a septal vertex: Gaussian jitter (std sigma, mm) around the vertex nearest the
/// mean-shape septum, snapped back onto the mesh.
inline Point3 sample_septum(const TriMesh& mesh, const Point3& mean_septum, double sigma, Rng& rng) {
  require(sigma >= 0.0, ErrorCode::InvalidArgument, "septum sigma must be non-negative");
  const Point3 c = mesh.vertices()[nearest_vertex(mesh, mean_septum)];
  const Point3 g = c + sigma * normal_point(rng);
  return mesh.vertices()[nearest_vertex(mesh, g)];
}

}  // namespace larecon
