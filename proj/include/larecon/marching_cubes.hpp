// Marching cubes over a scalar field. Each cell's surface is assembled from per-face
// crossing segments (ambiguous faces resolved by the asymptotic decider), which makes
// neighboring cells agree on every shared face and yields watertight output.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"

namespace larecon {

namespace mc {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
constexpr Index3 corner_offset(int c) { return {c & 1, (c >> 1) & 1, (c >> 2) & 1}; }

// Faces as corner cycles, counter-clockwise seen from outside the cell.
constexpr std::array<std::array<int, 4>, 6> kFaces{{
    {0, 4, 6, 2},  // x = 0
    {1, 3, 7, 5},  // x = 1
    {0, 1, 5, 4},  // y = 0
    {2, 6, 7, 3},  // y = 1
    {0, 2, 3, 1},  // z = 0
    {4, 5, 7, 6},  // z = 1
}};

// Cell edges, indexed by (lower corner, axis); edge k joins corners kEdges[k][0..1].
constexpr std::array<std::array<int, 2>, 12> kEdges{{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // along x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // along y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // along z
}};

constexpr int edge_between(int a, int b) {
  for (int k = 0; k < 12; ++k) {
    if ((kEdges[k][0] == a && kEdges[k][1] == b) || (kEdges[k][0] == b && kEdges[k][1] == a)) return k;
  }
  return -1;
}

constexpr int edge_axis(int k) { return k / 4; }

constexpr bool edges_share_face(int e, int f) {
  for (const auto& face : kFaces) {
    bool has_e = false, has_f = false;
    for (int s = 0; s < 4; ++s) {
      const int k = edge_between(face[s], face[(s + 1) % 4]);
      has_e = has_e || k == e;
      has_f = has_f || k == f;
    }
    if (has_e && has_f) return true;
  }
  return false;
}

}  // namespace mc

/// Triangulates the level set {field = iso}; faces wind so normals point from the
/// region above iso toward the region below it.
inline TriMesh marching_cubes(const ScalarField& field, double iso) {
  const GridSpec& g = field.grid;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : field.data) {
    require(std::isfinite(v), ErrorCode::InvalidArgument, "field contains non-finite values");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  require(lo <= iso && iso < hi, ErrorCode::NoSurface, "iso value is never crossed");

  std::vector<Point3> vertices;
  std::vector<Face> faces;
  std::unordered_map<std::uint64_t, int> edge_vertex;

  for (int z = 0; z + 1 < g.dims[2]; ++z)
    for (int y = 0; y + 1 < g.dims[1]; ++y)
      for (int x = 0; x + 1 < g.dims[0]; ++x) {
        std::array<double, 8> val{};
        std::array<bool, 8> in{};
        int inside_count = 0;
        for (int c = 0; c < 8; ++c) {
          const Index3 o = mc::corner_offset(c);
          val[c] = field.at({x + o[0], y + o[1], z + o[2]});
          in[c] = val[c] > iso;
          inside_count += in[c];
        }
        if (inside_count == 0 || inside_count == 8) continue;

        auto vertex_on = [&](int edge) {
          const int a = mc::kEdges[edge][0];
          const int b = mc::kEdges[edge][1];
          const Index3 oa = mc::corner_offset(a);
          const Index3 base{x + oa[0], y + oa[1], z + oa[2]};
          const std::uint64_t key = 3 * static_cast<std::uint64_t>(g.linear(base)) + mc::edge_axis(edge);
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) return it->second;
          const double t = (iso - val[a]) / (val[b] - val[a]);
          const Index3 ob = mc::corner_offset(b);
          const Point3 pa = g.world_of(base);
          const Point3 pb = g.world_of({x + ob[0], y + ob[1], z + ob[2]});
          const int id = static_cast<int>(vertices.size());
          vertices.push_back(pa + t * (pb - pa));
          edge_vertex.emplace(key, id);
          return id;
        };

        // next[e] = edge reached from crossing e by the face segment that leaves it.
        std::array<int, 12> next;
        next.fill(-1);
        for (const auto& face : mc::kFaces) {
          // Walking the face counter-clockwise, exits go inside -> outside.
          std::array<int, 2> exits{}, entries{};
          int ne = 0, nn = 0;
          std::array<int, 4> fe{};
          for (int s = 0; s < 4; ++s) {
            const int a = face[s], b = face[(s + 1) % 4];
            fe[s] = mc::edge_between(a, b);
            if (in[a] && !in[b]) exits[ne++] = s;
            if (!in[a] && in[b]) entries[nn++] = s;
          }
          if (ne == 1) {
            next[fe[exits[0]]] = fe[entries[0]];
          } else if (ne == 2) {
            const double q0 = val[face[0]], q1 = val[face[1]], q2 = val[face[2]], q3 = val[face[3]];
            const double saddle = (q0 * q2 - q1 * q3) / (q0 + q2 - q1 - q3);
            const bool joined = saddle > iso;  // inside corners connected through the face
            // An exit on side s pairs with the entry on side s+1 when the outside corner
            // between them is cut off (joined), or with side s-1 otherwise.
            for (int k = 0; k < 2; ++k) {
              const int s = exits[k];
              const int target = joined ? (s + 1) % 4 : (s + 3) % 4;
              next[fe[s]] = fe[target];
            }
          }
        }

        std::array<bool, 12> used{};
        for (int start = 0; start < 12; ++start) {
          if (next[start] < 0 || used[start]) continue;
          std::vector<int> loop;
          for (int e = start; !used[e]; e = next[e]) {
            used[e] = true;
            loop.push_back(e);
          }
          // The face walk yields loops clockwise seen from outside; reverse for outward normals.
          std::reverse(loop.begin(), loop.end());
          std::vector<int> ids;
          ids.reserve(loop.size());
          for (int e : loop) ids.push_back(vertex_on(e));
          if (ids.size() == 3) {
            faces.push_back({ids[0], ids[1], ids[2]});
            continue;
          }
          bool fan_safe = true;
          for (std::size_t i = 2; i + 1 < loop.size() && fan_safe; ++i) {
            if (mc::edges_share_face(loop[0], loop[i])) fan_safe = false;
          }
          if (fan_safe) {
            for (std::size_t i = 1; i + 1 < ids.size(); ++i) faces.push_back({ids[0], ids[i], ids[i + 1]});
          } else {
            Point3 centroid = Point3::Zero();
            for (int id : ids) centroid += vertices[id];
            centroid /= static_cast<double>(ids.size());
            const int c = static_cast<int>(vertices.size());
            vertices.push_back(centroid);
            for (std::size_t i = 0; i < ids.size(); ++i) faces.push_back({c, ids[i], ids[(i + 1) % ids.size()]});
          }
        }
      }
  return TriMesh(std::move(vertices), std::move(faces));
}

inline TriMesh marching_cubes(const OccupancyVolume& vol, double iso = 0.5) {
  return marching_cubes(ScalarField::from_occupancy(vol), iso);
}

}  // namespace larecon
