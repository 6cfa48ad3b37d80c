// Synthetic catheter paths: landmark projection from the mean shape, a distance-weighted
// voxel graph, Dijkstra legs between landmarks, augmentation and re-voxelization.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "larecon/core.hpp"
#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"
#include "larecon/volume.hpp"

namespace larecon {

enum class Section { SeptumToLS, LSToLI, LIToRI, RIToRS, Augmented };

inline std::string_view to_string(Section s) {
  switch (s) {
    case Section::SeptumToLS: return "SeptumToLS";
    case Section::LSToLI: return "LSToLI";
    case Section::LIToRI: return "LIToRI";
    case Section::RIToRS: return "RIToRS";
    case Section::Augmented: return "Augmented";
  }
  return "Augmented";
}

inline Section section_from_string(std::string_view s) {
  for (Section v : {Section::SeptumToLS, Section::LSToLI, Section::LIToRI, Section::RIToRS, Section::Augmented}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown path section '" + std::string(s) + "'");
}

struct PathCloud {
  std::vector<Point3> points;
  std::vector<Section> sections;

  std::size_t size() const { return points.size(); }
  void push(const Point3& p, Section s) {
    points.push_back(p);
    sections.push_back(s);
  }
};

struct AugmentConfig {
  int n = 6;            // draws per path point
  double sigma = 4.0;   // mm
  double s_f = 0.5;     // keep probability
  double mu_s = 2.0;    // mm

  void validate() const {
    require(n >= 0 && sigma >= 0.0 && s_f >= 0.0 && s_f <= 1.0 && mu_s >= 0.0, ErrorCode::InvalidArgument,
            "invalid augmentation config");
  }
};

constexpr std::array<double, 4> kDefaultLegAlphas{0.001, 4.0, 1.0, 4.0};

/// Moves the mean-shape landmarks onto a target mesh: each PV ostium by the normal-guided
/// walk, the septum by Gaussian sampling around its nearest vertex.
inline Landmarks project_landmarks(const TriMesh& mean_mesh, const Landmarks& mean_landmarks,
                                   const TriMesh& target_mesh, double eps, double septum_sigma, Rng& rng) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  Landmarks out;
  const auto pvs = mean_landmarks.pvs();
  for (int k = 0; k < 4; ++k) {
    const Point3 d = vertex_normal(mean_mesh, nearest_vertex(mean_mesh, pvs[k]));
    const int v = find_point_in_pv(target_mesh, pvs[k], d, eps);
    out.set_pv(k, target_mesh.vertices()[v]);
  }
  out.septum = sample_septum(target_mesh, mean_landmarks.septum, septum_sigma, rng);
  return out;
}

/// Interior voxels (every true voxel) are nodes with weight (m_w - w_dt)^alpha, where w_dt is
/// the distance to the boundary and m_w = max w_dt + 1. Edges join 6-neighbors and cost the
/// mean of their endpoint weights.
struct VoxelGraph {
  GridSpec grid;
  std::vector<double> node_weight;  // NaN for non-nodes
  std::vector<double> depth;        // w_dt on nodes
  double alpha = 1.0;

  bool is_node(std::size_t n) const { return !std::isnan(node_weight[n]); }
  bool is_node(const Index3& i) const { return grid.contains(i) && is_node(grid.linear(i)); }
  double edge_cost(std::size_t a, std::size_t b) const { return 0.5 * (node_weight[a] + node_weight[b]); }
};

inline VoxelGraph build_graph(const OccupancyVolume& vol, double alpha) {
  require(alpha >= 0.0, ErrorCode::InvalidArgument, "alpha must be non-negative");
  require(vol.count() >= 2, ErrorCode::DisconnectedInterior, "graph needs at least two interior voxels");
  require(component_count(vol) == 1, ErrorCode::DisconnectedInterior, "interior is not 6-connected");
  const ScalarField sdt = signed_distance_transform(vol);
  VoxelGraph g{vol.grid, std::vector<double>(vol.grid.size(), std::numeric_limits<double>::quiet_NaN()),
               std::vector<double>(vol.grid.size(), 0.0), alpha};
  double max_depth = 0.0;
  for (std::size_t n = 0; n < sdt.data.size(); ++n)
    if (vol.data[n]) max_depth = std::max(max_depth, sdt.data[n]);
  const double m_w = max_depth + 1.0;
  for (std::size_t n = 0; n < sdt.data.size(); ++n) {
    if (!vol.data[n]) continue;
    g.depth[n] = sdt.data[n];
    g.node_weight[n] = alpha == 0.0 ? 1.0 : std::pow(m_w - sdt.data[n], alpha);
  }
  return g;
}

struct GraphPath {
  std::vector<Index3> voxels;
  double cost = 0.0;
};

/// Cheapest 6-connected node path from s to t. Equal-cost frontier entries pop in linear
/// voxel-index order, and a node's predecessor is only replaced by a strictly cheaper one.
inline GraphPath dijkstra(const VoxelGraph& graph, const Index3& s, const Index3& t) {
  require(graph.is_node(s) && graph.is_node(t), ErrorCode::InvalidArgument, "endpoints must be graph nodes");
  const GridSpec& g = graph.grid;
  const std::size_t src = g.linear(s), dst = g.linear(t);
  std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> prev(g.size(), -1);
  std::vector<std::uint8_t> done(g.size(), 0);
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> open;
  dist[src] = 0.0;
  open.push({0.0, src});
  while (!open.empty()) {
    const auto [d, u] = open.top();
    open.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (u == dst) break;
    const Index3 ui = g.unlinear(u);
    for (const auto& off : kFaceNeighbors) {
      const Index3 vi = offset(ui, off);
      if (!graph.is_node(vi)) continue;
      const std::size_t v = g.linear(vi);
      if (done[v]) continue;
      const double nd = d + graph.edge_cost(u, v);
      if (nd < dist[v]) {
        dist[v] = nd;
        prev[v] = static_cast<std::int64_t>(u);
        open.push({nd, v});
      }
    }
  }
  require(done[dst] != 0, ErrorCode::Unreachable, "target voxel is not reachable from the source");
  GraphPath path;
  path.cost = dist[dst];
  for (std::int64_t n = static_cast<std::int64_t>(dst); n >= 0; n = prev[n]) {
    path.voxels.push_back(g.unlinear(static_cast<std::size_t>(n)));
  }
  std::reverse(path.voxels.begin(), path.voxels.end());
  return path;
}

/// Sums edge costs along a voxel path in walk order.
inline double path_cost(const VoxelGraph& graph, const std::vector<Index3>& voxels) {
  double c = 0.0;
  for (std::size_t i = 1; i < voxels.size(); ++i)
    c += graph.edge_cost(graph.grid.linear(voxels[i - 1]), graph.grid.linear(voxels[i]));
  return c;
}

constexpr double kLandmarkSnapVoxels = 2.0;

/// Nearest true voxel (Euclidean, voxel units) within the snap radius of a world point.
inline Index3 snap_to_interior(const OccupancyVolume& vol, const Point3& p) {
  const GridSpec& g = vol.grid;
  const Point3 v = g.voxel_coords(p);
  const int r = static_cast<int>(std::ceil(kLandmarkSnapVoxels)) + 1;
  const Index3 c{static_cast<int>(std::lround(v.x())), static_cast<int>(std::lround(v.y())),
                 static_cast<int>(std::lround(v.z()))};
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_n = 0;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const Index3 i{c[0] + dx, c[1] + dy, c[2] + dz};
        if (!vol.at_or_false(i)) continue;
        const double d2 = (Point3(i[0], i[1], i[2]) - v).squaredNorm();
        const std::size_t n = g.linear(i);
        if (d2 < best || (d2 == best && n < best_n)) {
          best = d2;
          best_n = n;
        }
      }
  require(best <= kLandmarkSnapVoxels * kLandmarkSnapVoxels, ErrorCode::LandmarkOutside,
          "landmark has no interior voxel within the snap radius");
  return g.unlinear(best_n);
}

/// Septum -> LS -> LI -> RI -> RS, one Dijkstra leg per alpha; junction voxels appear once.
inline PathCloud compose_path(const OccupancyVolume& vol, const Landmarks& lm,
                              const std::array<double, 4>& alphas = kDefaultLegAlphas) {
  const std::array<Point3, 5> stops{lm.septum, lm.pv_ls, lm.pv_li, lm.pv_ri, lm.pv_rs};
  std::array<Index3, 5> voxels{};
  for (int k = 0; k < 5; ++k) voxels[k] = snap_to_interior(vol, stops[k]);

  PathCloud path;
  std::vector<std::pair<double, VoxelGraph>> graphs;
  for (int leg = 0; leg < 4; ++leg) {
    const VoxelGraph* graph = nullptr;
    for (const auto& [a, gr] : graphs)
      if (a == alphas[leg]) graph = &gr;
    if (!graph) {
      graphs.emplace_back(alphas[leg], build_graph(vol, alphas[leg]));
      graph = &graphs.back().second;
    }
    const GraphPath p = dijkstra(*graph, voxels[leg], voxels[leg + 1]);
    for (std::size_t i = (leg == 0 ? 0 : 1); i < p.voxels.size(); ++i) {
      path.push(vol.grid.world_of(p.voxels[i]), static_cast<Section>(leg));
    }
  }
  return path;
}

/// Adds Gaussian scatter around every path point: keep with probability s_f, drop points
/// whose voxel is exterior, then jitter survivors by N(0, I) * mu_s.
inline PathCloud augment_path(const PathCloud& path, const OccupancyVolume& vol, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  PathCloud out = path;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Point3& xp = path.points[i];
    for (int k = 0; k < cfg.n; ++k) {
      const Point3 x = xp + cfg.sigma * normal_point(rng);
      const bool keep = uniform01(rng) < cfg.s_f;
      const Point3 t = cfg.mu_s * normal_point(rng);
      if (!keep) continue;
      const auto cell = vol.grid.cell_of(x);
      if (!cell || !vol.at(*cell)) continue;
      out.push(x + t, Section::Augmented);
    }
  }
  return out;
}

struct PathVolume {
  OccupancyVolume volume;
  std::size_t dropped = 0;  // points outside the grid
};

inline PathVolume path_to_volume(const PathCloud& path, const GridSpec& grid) {
  PathVolume out{OccupancyVolume(grid), 0};
  for (const auto& p : path.points) {
    const auto cell = grid.cell_of(p);
    if (!cell) {
      ++out.dropped;
      continue;
    }
    out.volume.set(*cell, true);
  }
  return out;
}

}  // namespace larecon
