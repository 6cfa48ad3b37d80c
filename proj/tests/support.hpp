// Test fixtures and brute-force oracles. Nothing here is used by the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "larecon/larecon.hpp"

namespace larecon::oracle {

/// Closed axis-aligned box with outward-wound triangles.
inline TriMesh box_mesh(const Point3& lo, const Point3& hi) {
  std::vector<Point3> v;
  for (int i = 0; i < 8; ++i)
    v.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  const std::vector<Face> f{{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                            {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return TriMesh(v, f);
}

/// Subdivided icosahedron with vertices on a sphere.
inline TriMesh icosphere(const Point3& center, double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Point3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid[key] = id;
      return id;
    };
    std::vector<Face> next;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (auto& p : v) p = center + radius * p;
  return TriMesh(v, f);
}

inline OccupancyVolume random_volume(const GridSpec& g, double p_true, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p_true);
  OccupancyVolume v(g);
  for (auto& x : v.data) x = coin(rng) ? 1 : 0;
  return v;
}

/// Non-degenerate random volume: at least one true and one false voxel.
inline OccupancyVolume random_nondegenerate_volume(const GridSpec& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> p(0.1, 0.9);
  for (;;) {
    OccupancyVolume v = random_volume(g, p(rng), rng);
    const std::size_t c = v.count();
    if (c > 0 && c < v.data.size()) return v;
  }
}

inline OccupancyVolume ball_volume(const GridSpec& g, const Point3& center_vox, double radius_vox) {
  OccupancyVolume v(g);
  for (std::size_t n = 0; n < g.size(); ++n) {
    const Index3 i = g.unlinear(n);
    v.data[n] = (Point3(i[0], i[1], i[2]) - center_vox).norm() <= radius_vox;
  }
  return v;
}

/// Boundary voxels by direct neighbor inspection.
inline std::vector<std::uint8_t> brute_boundary(const OccupancyVolume& vol) {
  const GridSpec& g = vol.grid;
  std::vector<std::uint8_t> b(g.size(), 0);
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (!vol.data[n]) continue;
    const Index3 i = g.unlinear(n);
    const int dx[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& d : dx) {
      const Index3 j{i[0] + d[0], i[1] + d[1], i[2] + d[2]};
      if (!g.contains(j) || !vol.at(j)) b[n] = 1;
    }
  }
  return b;
}

/// O(n^2) signed squared distance: every voxel against every boundary voxel.
inline std::vector<std::int64_t> brute_signed_squared_distance(const OccupancyVolume& vol) {
  const GridSpec& g = vol.grid;
  const auto b = brute_boundary(vol);
  std::vector<Index3> seeds;
  for (std::size_t n = 0; n < g.size(); ++n)
    if (b[n]) seeds.push_back(g.unlinear(n));
  std::vector<std::int64_t> out(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const Index3 i = g.unlinear(n);
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (const auto& s : seeds) {
      const std::int64_t d0 = i[0] - s[0], d1 = i[1] - s[1], d2 = i[2] - s[2];
      best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
    }
    out[n] = vol.data[n] ? best : -best;
  }
  return out;
}

/// Pairwise brute-force AVDist (same summation order as the library: linear voxel order).
inline double brute_avdist(const OccupancyVolume& x, const OccupancyVolume& y) {
  const GridSpec& g = x.grid;
  const auto bx = brute_boundary(x), by = brute_boundary(y);
  auto directed = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (!from[n]) continue;
      const Index3 i = g.unlinear(n);
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (std::size_t m = 0; m < g.size(); ++m) {
        if (!to[m]) continue;
        const Index3 j = g.unlinear(m);
        const std::int64_t d0 = i[0] - j[0], d1 = i[1] - j[1], d2 = i[2] - j[2];
        best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
      }
      sum += std::sqrt(static_cast<double>(best));
      ++cnt;
    }
    return sum / static_cast<double>(cnt);
  };
  return (0.5 * directed(bx, by) + 0.5 * directed(by, bx)) * g.spacing_mm;
}

inline double brute_dice(const OccupancyVolume& x, const OccupancyVolume& y) {
  long inter = 0, a = 0, b = 0;
  for (std::size_t n = 0; n < x.data.size(); ++n) {
    inter += (x.data[n] && y.data[n]);
    a += x.data[n];
    b += y.data[n];
  }
  return a + b == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Cheapest path cost by Bellman-Ford style label correcting over all node pairs
/// (exhaustive relaxation until no label changes).
inline double brute_shortest_cost(const VoxelGraph& graph, const Index3& s, const Index3& t) {
  const GridSpec& g = graph.grid;
  std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
  dist[g.linear(s)] = 0.0;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t u = 0; u < g.size(); ++u) {
      if (!graph.is_node(u) || !std::isfinite(dist[u])) continue;
      const Index3 ui = g.unlinear(u);
      for (const auto& off : kFaceNeighbors) {
        const Index3 vi = offset(ui, off);
        if (!graph.is_node(vi)) continue;
        const std::size_t v = g.linear(vi);
        const double nd = dist[u] + graph.edge_cost(u, v);
        if (nd < dist[v]) {
          dist[v] = nd;
          changed = true;
        }
      }
    }
  }
  return dist[g.linear(t)];
}

/// Exhaustive enumeration of simple paths (tiny graphs only).
inline double enumerate_simple_paths(const VoxelGraph& graph, const Index3& s, const Index3& t) {
  const GridSpec& g = graph.grid;
  std::vector<std::uint8_t> on_path(g.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  const std::size_t target = g.linear(t);
  std::function<void(std::size_t, double)> dfs = [&](std::size_t u, double cost) {
    if (cost >= best) return;
    if (u == target) {
      best = cost;
      return;
    }
    on_path[u] = 1;
    const Index3 ui = g.unlinear(u);
    for (const auto& off : kFaceNeighbors) {
      const Index3 vi = offset(ui, off);
      if (!graph.is_node(vi)) continue;
      const std::size_t v = g.linear(vi);
      if (on_path[v]) continue;
      dfs(v, cost + graph.edge_cost(u, v));
    }
    on_path[u] = 0;
  };
  dfs(g.linear(s), 0.0);
  return best;
}

}  // namespace larecon::oracle
