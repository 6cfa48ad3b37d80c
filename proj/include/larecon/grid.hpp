// Regular isotropic lattices and the per-voxel containers that live on them.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "larecon/core.hpp"

namespace larecon {

using Index3 = std::array<int, 3>;

struct GridSpec {
  Index3 dims{2, 2, 2};
  double spacing_mm = 1.0;
  Point3 origin_mm = Point3::Zero();

  GridSpec() = default;
  GridSpec(Index3 d, double spacing, Point3 origin = Point3::Zero())
      : dims(d), spacing_mm(spacing), origin_mm(std::move(origin)) {
    validate();
  }

  /// Cube of n voxels per axis, centered on the world origin.
  static GridSpec centered_cube(int n, double spacing) {
    const double half = 0.5 * (n - 1) * spacing;
    return GridSpec({n, n, n}, spacing, Point3(-half, -half, -half));
  }

  void validate() const {
    for (int d : dims) require(d >= 2, ErrorCode::InvalidArgument, "grid dims must be >= 2");
    require(spacing_mm > 0.0 && std::isfinite(spacing_mm), ErrorCode::InvalidArgument,
            "grid spacing must be positive");
  }

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  bool contains(const Index3& i) const {
    return i[0] >= 0 && i[1] >= 0 && i[2] >= 0 && i[0] < dims[0] && i[1] < dims[1] && i[2] < dims[2];
  }

  std::size_t linear(const Index3& i) const {
    return static_cast<std::size_t>(i[0]) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(i[1]) +
                                                static_cast<std::size_t>(dims[1]) * i[2]);
  }

  Index3 unlinear(std::size_t n) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(n % nx), static_cast<int>((n / nx) % ny), static_cast<int>(n / (nx * ny))};
  }

  Point3 world_of(const Index3& i) const {
    return origin_mm + spacing_mm * Point3(i[0], i[1], i[2]);
  }

  /// Continuous voxel coordinates of a world point (voxel centers are integers).
  Point3 voxel_coords(const Point3& p) const { return (p - origin_mm) / spacing_mm; }

  /// Cell containing p; cells are the half-open cubes [c - 1/2, c + 1/2) around centers.
  std::optional<Index3> cell_of(const Point3& p) const {
    const Point3 v = voxel_coords(p);
    Index3 i{};
    for (int a = 0; a < 3; ++a) {
      const double f = std::floor(v[a] + 0.5);
      if (!std::isfinite(f) || f < 0 || f >= dims[a]) return std::nullopt;
      i[a] = static_cast<int>(f);
    }
    return i;
  }

  Point3 min_corner_mm() const { return origin_mm - Point3::Constant(0.5 * spacing_mm); }
  Point3 max_corner_mm() const {
    return origin_mm + spacing_mm * Point3(dims[0] - 0.5, dims[1] - 0.5, dims[2] - 0.5);
  }

  bool operator==(const GridSpec& o) const {
    return dims == o.dims && spacing_mm == o.spacing_mm && origin_mm == o.origin_mm;
  }
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b) {
  require(a == b, ErrorCode::GridMismatch, "volumes live on different grids");
}

constexpr std::array<Index3, 6> kFaceNeighbors{{
    {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

inline Index3 offset(const Index3& i, const Index3& d) { return {i[0] + d[0], i[1] + d[1], i[2] + d[2]}; }

/// Binary occupancy: 1 for voxels inside or on the boundary of the set.
struct OccupancyVolume {
  GridSpec grid;
  std::vector<std::uint8_t> data;

  OccupancyVolume() = default;
  explicit OccupancyVolume(GridSpec g) : grid(std::move(g)), data(grid.size(), 0) {}
  OccupancyVolume(GridSpec g, std::vector<std::uint8_t> d) : grid(std::move(g)), data(std::move(d)) {
    require(data.size() == grid.size(), ErrorCode::ShapeMismatch, "occupancy data length != voxel count");
    for (auto& v : data) require(v <= 1, ErrorCode::InvalidArgument, "occupancy values must be 0 or 1");
  }

  bool at(const Index3& i) const { return data[grid.linear(i)] != 0; }
  void set(const Index3& i, bool v) { data[grid.linear(i)] = v ? 1 : 0; }
  bool at_or_false(const Index3& i) const { return grid.contains(i) && at(i); }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }

  bool operator==(const OccupancyVolume& o) const { return grid == o.grid && data == o.data; }
};

struct ScalarField {
  GridSpec grid;
  std::vector<double> data;

  ScalarField() = default;
  explicit ScalarField(GridSpec g, double fill = 0.0) : grid(std::move(g)), data(grid.size(), fill) {}
  ScalarField(GridSpec g, std::vector<double> d) : grid(std::move(g)), data(std::move(d)) {
    require(data.size() == grid.size(), ErrorCode::ShapeMismatch, "field data length != voxel count");
    for (double v : data) require(std::isfinite(v), ErrorCode::InvalidArgument, "field values must be finite");
  }

  double at(const Index3& i) const { return data[grid.linear(i)]; }
  double& at(const Index3& i) { return data[grid.linear(i)]; }

  static ScalarField from_occupancy(const OccupancyVolume& vol) {
    ScalarField f(vol.grid);
    for (std::size_t n = 0; n < vol.data.size(); ++n) f.data[n] = vol.data[n];
    return f;
  }
};

/// Set of voxel indices, kept sorted by linear index.
struct VoxelSet {
  GridSpec grid;
  std::vector<Index3> voxels;

  std::size_t size() const { return voxels.size(); }
  bool empty() const { return voxels.empty(); }
};

}  // namespace larecon
