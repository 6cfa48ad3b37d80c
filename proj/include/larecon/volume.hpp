// Occupancy-volume algorithms: boundary extraction, exact Euclidean distance transforms,
// Gaussian smoothing, the boundary weight mask, mean shapes and mesh voxelization.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"

namespace larecon {

/// True voxels with at least one false 6-neighbor; off-grid neighbors count as false.
inline std::vector<std::uint8_t> boundary_mask(const OccupancyVolume& vol) {
  const GridSpec& g = vol.grid;
  std::vector<std::uint8_t> mask(g.size(), 0);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const Index3 i{x, y, z};
        if (!vol.at(i)) continue;
        for (const auto& d : kFaceNeighbors) {
          if (!vol.at_or_false(offset(i, d))) {
            mask[g.linear(i)] = 1;
            break;
          }
        }
      }
  return mask;
}

inline VoxelSet extract_boundary(const OccupancyVolume& vol) {
  VoxelSet out{vol.grid, {}};
  const auto mask = boundary_mask(vol);
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (mask[n]) out.voxels.push_back(vol.grid.unlinear(n));
  return out;
}

namespace detail {

constexpr std::int64_t kInfSq = std::numeric_limits<std::int64_t>::max() / 4;

// Exact 1-D lower envelope of parabolas (x - i)^2 + f[i] over the finite entries of f.
inline void edt_pass(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out,
                     std::vector<int>& site, std::vector<std::int64_t>& start) {
  const int n = static_cast<int>(f.size());
  out.assign(n, kInfSq);
  site.clear();
  start.clear();
  auto value = [&](std::int64_t x, int i) { return (x - i) * (x - i) + f[i]; };
  auto floor_div = [](std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
  };
  for (int u = 0; u < n; ++u) {
    if (f[u] >= kInfSq) continue;
    while (!site.empty() && value(start.back(), site.back()) > value(start.back(), u)) {
      site.pop_back();
      start.pop_back();
    }
    if (site.empty()) {
      site.push_back(u);
      start.push_back(0);
    } else {
      const int i = site.back();
      const std::int64_t sep =
          floor_div(static_cast<std::int64_t>(u) * u - static_cast<std::int64_t>(i) * i + f[u] - f[i],
                    2 * static_cast<std::int64_t>(u - i));
      const std::int64_t w = 1 + sep;
      if (w < n) {
        site.push_back(u);
        start.push_back(std::max<std::int64_t>(w, 0));
      }
    }
  }
  if (site.empty()) return;
  std::size_t q = site.size() - 1;
  for (int x = n - 1; x >= 0; --x) {
    out[x] = value(x, site[q]);
    if (q > 0 && x == start[q]) --q;
  }
}

}  // namespace detail

/// Exact squared Euclidean distance (voxel units) from every voxel to the nearest seed.
inline std::vector<std::int64_t> squared_distance_to_seeds(const GridSpec& g, const std::vector<std::uint8_t>& seeds) {
  require(seeds.size() == g.size(), ErrorCode::ShapeMismatch, "seed mask size mismatch");
  std::vector<std::int64_t> d(g.size());
  for (std::size_t n = 0; n < d.size(); ++n) d[n] = seeds[n] ? 0 : detail::kInfSq;

  std::vector<std::int64_t> line, res, start;
  std::vector<int> site;
  const Index3 dims = g.dims;
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    line.resize(dims[axis]);
    for (int j = 0; j < dims[a2]; ++j)
      for (int i = 0; i < dims[a1]; ++i) {
        Index3 idx{};
        idx[a1] = i;
        idx[a2] = j;
        for (int t = 0; t < dims[axis]; ++t) {
          idx[axis] = t;
          line[t] = d[g.linear(idx)];
        }
        detail::edt_pass(line, res, site, start);
        for (int t = 0; t < dims[axis]; ++t) {
          idx[axis] = t;
          d[g.linear(idx)] = res[t];
        }
      }
  }
  return d;
}

inline void require_nondegenerate(const OccupancyVolume& vol) {
  const std::size_t c = vol.count();
  require(c > 0 && c < vol.data.size(), ErrorCode::DegenerateVolume, "volume is all-true or all-false");
}

/// Signed squared distances to the boundary set: >0 strictly inside, 0 on the boundary,
/// <0 outside.
inline std::vector<std::int64_t> signed_squared_distance(const OccupancyVolume& vol) {
  require_nondegenerate(vol);
  const auto bnd = boundary_mask(vol);
  auto d = squared_distance_to_seeds(vol.grid, bnd);
  for (std::size_t n = 0; n < d.size(); ++n)
    if (!vol.data[n]) d[n] = -d[n];
  return d;
}

/// Distance in voxel units to the nearest boundary voxel, positive inside, negative outside.
inline ScalarField signed_distance_transform(const OccupancyVolume& vol) {
  const auto sq = signed_squared_distance(vol);
  ScalarField out(vol.grid);
  for (std::size_t n = 0; n < sq.size(); ++n) {
    const double m = std::sqrt(static_cast<double>(sq[n] < 0 ? -sq[n] : sq[n]));
    out.data[n] = sq[n] < 0 ? -m : m;
  }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur (sigma in voxels), clamped edges.
inline ScalarField gaussian_smooth(const ScalarField& field, double sigma) {
  require(sigma >= 0.0, ErrorCode::InvalidArgument, "sigma must be non-negative");
  if (sigma == 0.0) return field;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const GridSpec& g = field.grid;
  ScalarField cur = field;
  ScalarField next(g);
  for (int axis = 0; axis < 3; ++axis) {
    const int n = g.dims[axis];
    for (int z = 0; z < g.dims[2]; ++z)
      for (int y = 0; y < g.dims[1]; ++y)
        for (int x = 0; x < g.dims[0]; ++x) {
          Index3 i{x, y, z};
          const int c = i[axis];
          double acc = 0.0;
          for (int t = -r; t <= r; ++t) {
            Index3 j = i;
            j[axis] = std::clamp(c + t, 0, n - 1);
            acc += k[t + r] * cur.at(j);
          }
          next.at(i) = acc;
        }
    std::swap(cur, next);
  }
  return cur;
}

/// Loss weights peaking on the shape boundary: (1 + alpha) / (1 + D'), D' the blurred
/// unsigned boundary distance in voxels.
inline ScalarField boundary_weight_mask(const OccupancyVolume& vol, double alpha, double sigma) {
  require(alpha > 0.0, ErrorCode::InvalidArgument, "mask alpha must be positive");
  require(sigma > 0.0, ErrorCode::InvalidArgument, "mask sigma must be positive");
  ScalarField dist = signed_distance_transform(vol);
  for (double& v : dist.data) v = std::abs(v);
  ScalarField smooth = gaussian_smooth(dist, sigma);
  for (double& v : smooth.data) v = (1.0 + alpha) / (1.0 + v);
  return smooth;
}

struct MeanShape {
  ScalarField mean;
  OccupancyVolume binary;
};

/// Voxel-wise average of the stack and its binarization (mean >= 0.5 -> true).
inline MeanShape mean_shape(const std::vector<OccupancyVolume>& volumes) {
  require(!volumes.empty(), ErrorCode::EmptyDataset, "mean_shape needs at least one volume");
  const GridSpec& g = volumes.front().grid;
  std::vector<std::uint32_t> counts(g.size(), 0);
  for (const auto& v : volumes) {
    require_same_grid(g, v.grid);
    for (std::size_t n = 0; n < counts.size(); ++n) counts[n] += v.data[n];
  }
  MeanShape out{ScalarField(g), OccupancyVolume(g)};
  const double total = static_cast<double>(volumes.size());
  for (std::size_t n = 0; n < counts.size(); ++n) {
    out.mean.data[n] = counts[n] / total;
    out.binary.data[n] = (2 * static_cast<std::uint64_t>(counts[n]) >= volumes.size()) ? 1 : 0;
  }
  return out;
}

/// Labels 6-connected components of true voxels; returns labels (0 = background) and count.
inline std::pair<std::vector<int>, int> label_components(const OccupancyVolume& vol) {
  const GridSpec& g = vol.grid;
  std::vector<int> label(g.size(), 0);
  int count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < g.size(); ++seed) {
    if (!vol.data[seed] || label[seed]) continue;
    ++count;
    label[seed] = count;
    stack.push_back(seed);
    while (!stack.empty()) {
      const Index3 i = g.unlinear(stack.back());
      stack.pop_back();
      for (const auto& d : kFaceNeighbors) {
        const Index3 j = offset(i, d);
        if (!vol.at_or_false(j)) continue;
        const std::size_t m = g.linear(j);
        if (label[m]) continue;
        label[m] = count;
        stack.push_back(m);
      }
    }
  }
  return {std::move(label), count};
}

inline int component_count(const OccupancyVolume& vol) { return label_components(vol).second; }

namespace detail {

// Sign of orient2d((a,b), p) in the (y,z) plane, with p symbolically displaced by
// (delta, delta^2) so that exact zeros resolve consistently across shared edges.
inline int perturbed_orient_yz(const Point3& a, const Point3& b, const Point3& p) {
  const double by = b.y() - a.y(), bz = b.z() - a.z();
  const double o = by * (p.z() - a.z()) - bz * (p.y() - a.y());
  if (o > 0) return 1;
  if (o < 0) return -1;
  if (bz != 0) return bz < 0 ? 1 : -1;  // first-order term: -bz * delta
  if (by != 0) return by > 0 ? 1 : -1;  // second-order term: by * delta^2
  return 0;
}

inline double point_triangle_distance2(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  // Ericson, closest point on triangle.
  const Point3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.squaredNorm();
  const Point3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.squaredNorm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).squaredNorm();
  const Point3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.squaredNorm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).squaredNorm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return (p - (b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))))).squaredNorm();
  }
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).squaredNorm();
}

}  // namespace detail

/// Parity ray casting along +x from each voxel center. Centers on the surface count as inside.
inline OccupancyVolume voxelize(const TriMesh& mesh, const GridSpec& grid) {
  require(!mesh.empty(), ErrorCode::EmptyMesh, "voxelize on empty mesh");
  for (const auto& [e, c] : mesh.edge_use())
    require(c == 2, ErrorCode::OpenMesh, "mesh has an edge not shared by exactly two faces");
  Point3 lo = mesh.vertices().front(), hi = lo;
  for (const auto& v : mesh.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Point3 glo = grid.min_corner_mm(), ghi = grid.max_corner_mm();
  require((lo.array() >= glo.array()).all() && (hi.array() <= ghi.array()).all(), ErrorCode::OutOfExtent,
          "mesh exceeds grid extent");

  const double on_surface_tol2 = std::pow(1e-9 * grid.spacing_mm, 2);
  const auto& V = mesh.vertices();
  OccupancyVolume out(grid);
  for (int z = 0; z < grid.dims[2]; ++z)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int x = 0; x < grid.dims[0]; ++x) {
        const Index3 i{x, y, z};
        const Point3 p = grid.world_of(i);
        bool on_surface = false;
        int crossings = 0;
        for (const Face& t : mesh.faces()) {
          const Point3 &a = V[t[0]], &b = V[t[1]], &c = V[t[2]];
          if (detail::point_triangle_distance2(p, a, b, c) <= on_surface_tol2) {
            on_surface = true;
            break;
          }
          const int s0 = detail::perturbed_orient_yz(a, b, p);
          const int s1 = detail::perturbed_orient_yz(b, c, p);
          const int s2 = detail::perturbed_orient_yz(c, a, p);
          if (s0 == 0 || s0 != s1 || s1 != s2) continue;
          // Plane x-coordinate at (p.y, p.z).
          const Point3 n = (b - a).cross(c - a);
          if (n.x() == 0.0) continue;
          const double xhit = a.x() - (n.y() * (p.y() - a.y()) + n.z() * (p.z() - a.z())) / n.x();
          if (xhit > p.x()) ++crossings;
        }
        out.set(i, on_surface || (crossings % 2 == 1));
      }
  return out;
}

}  // namespace larecon
