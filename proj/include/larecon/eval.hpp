// Reconstruction metrics (DICE, boundary AVDist, vertex distances) and the paired
// comparison against the mean-shape baseline.
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"
#include "larecon/volume.hpp"

namespace larecon {

/// 2|x ∩ y| / (|x| + |y|); two empty volumes score 1.
inline double dice(const OccupancyVolume& x, const OccupancyVolume& y) {
  require_same_grid(x.grid, y.grid);
  std::size_t inter = 0, nx = 0, ny = 0;
  for (std::size_t n = 0; n < x.data.size(); ++n) {
    inter += x.data[n] & y.data[n];
    nx += x.data[n];
    ny += y.data[n];
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(nx + ny);
}

/// Mean over voxels of `from_mask` (linear order) of the distance to the nearest voxel of
/// `to_mask`, in voxel units.
inline double directed_boundary_distance(const GridSpec& g, const std::vector<std::uint8_t>& from_mask,
                                         const std::vector<std::uint8_t>& to_mask) {
  const auto d2 = squared_distance_to_seeds(g, to_mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < from_mask.size(); ++i) {
    if (!from_mask[i]) continue;
    sum += std::sqrt(static_cast<double>(d2[i]));
    ++n;
  }
  return sum / static_cast<double>(n);
}

/// Symmetric mean nearest-boundary-voxel distance, in mm.
inline double avdist(const OccupancyVolume& x, const OccupancyVolume& y) {
  require_same_grid(x.grid, y.grid);
  const auto bx = boundary_mask(x);
  const auto by = boundary_mask(y);
  auto any = [](const std::vector<std::uint8_t>& m) {
    for (auto v : m)
      if (v) return true;
    return false;
  };
  require(any(bx) && any(by), ErrorCode::EmptyBoundary, "avdist needs non-empty boundaries");
  const double a = directed_boundary_distance(x.grid, bx, by);
  const double b = directed_boundary_distance(x.grid, by, bx);
  return (0.5 * a + 0.5 * b) * x.grid.spacing_mm;
}

struct PointDistances {
  std::vector<double> distances;
  double mean = 0.0;
};

/// Distance from each point to the nearest mesh vertex (not to faces).
inline PointDistances point_to_mesh(const std::vector<Point3>& points, const TriMesh& mesh) {
  require(!mesh.empty(), ErrorCode::EmptyMesh, "point_to_mesh on empty mesh");
  PointDistances out;
  out.distances.reserve(points.size());
  double sum = 0.0;
  for (const auto& p : points) {
    const double d = (mesh.vertices()[nearest_vertex(mesh, p)] - p).norm();
    out.distances.push_back(d);
    sum += d;
  }
  out.mean = points.empty() ? 0.0 : sum / static_cast<double>(points.size());
  return out;
}

/// Symmetric mean vertex-to-nearest-vertex distance; each direction only uses source
/// vertices within radius_mm of some center (all vertices when radius is nullopt).
inline double radius_limited_surface_distance(const TriMesh& a, const TriMesh& b, const std::vector<Point3>& centers,
                                              std::optional<double> radius_mm) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptyMesh, "surface distance on empty mesh");
  require(!radius_mm || !centers.empty(), ErrorCode::InvalidArgument, "bounded radius needs centers");
  auto directed = [&](const TriMesh& src, const TriMesh& dst) {
    std::vector<Point3> chosen;
    for (const auto& v : src.vertices()) {
      bool in_range = !radius_mm;
      for (const auto& c : centers) {
        if (in_range) break;
        in_range = (v - c).norm() <= *radius_mm;
      }
      if (in_range) chosen.push_back(v);
    }
    require(!chosen.empty(), ErrorCode::NoVerticesInRadius, "no vertices within the radius of any center");
    return point_to_mesh(chosen, dst).mean;
  };
  return 0.5 * directed(a, b) + 0.5 * directed(b, a);
}

namespace stats {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(T <= t) for Student's t with `dof` degrees of freedom.
inline double student_t_cdf(double t, double dof) {
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

struct PairedTTest {
  std::size_t n = 0;
  double mean_difference = 0.0;
  double sd_difference = 0.0;
  double t = 0.0;
  double p_one_tailed = 1.0;  // H1: mean difference > 0
  bool significant = false;   // at alpha = 0.05
};

/// One-tailed paired t-test on differences d_i = a_i - b_i.
inline PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b, double alpha = 0.05) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "paired samples differ in length");
  PairedTTest r;
  r.n = a.size();
  if (r.n < 2) return r;
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(r.n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  r.mean_difference = mean;
  r.sd_difference = sd;
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
  } else {
    r.t = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  }
  r.p_one_tailed = 1.0 - student_t_cdf(r.t, static_cast<double>(r.n - 1));
  r.significant = r.p_one_tailed < alpha;
  return r;
}

}  // namespace stats

struct SampleMetrics {
  std::string id;
  double dice = 0.0;
  double avdist_mm = 0.0;
  double baseline_dice = 0.0;
  double baseline_avdist_mm = 0.0;
};

struct MetricReport {
  std::vector<SampleMetrics> per_sample;
  double dice = 0.0;
  double avdist_mm = 0.0;
  double baseline_dice = 0.0;
  double baseline_avdist_mm = 0.0;
  stats::PairedTTest dice_test;    // recon - baseline
  stats::PairedTTest avdist_test;  // baseline - recon (positive = recon closer)
};

/// Scores each reconstruction and the mean shape against the same truth. A reconstruction
/// with an empty boundary (nothing predicted) gets an infinite AVDist.
inline MetricReport compare_to_mean_shape(const std::vector<OccupancyVolume>& recons,
                                          const std::vector<OccupancyVolume>& truths, const OccupancyVolume& mean_vol,
                                          const std::vector<std::string>& ids = {}) {
  require(recons.size() == truths.size(), ErrorCode::ShapeMismatch, "reconstruction/truth counts differ");
  require(ids.empty() || ids.size() == truths.size(), ErrorCode::ShapeMismatch, "id count differs");
  MetricReport r;
  std::vector<double> d_rec, d_base, a_rec, a_base;
  for (std::size_t i = 0; i < recons.size(); ++i) {
    require_same_grid(truths[i].grid, recons[i].grid);
    require_same_grid(truths[i].grid, mean_vol.grid);
    SampleMetrics m;
    m.id = ids.empty() ? std::to_string(i) : ids[i];
    m.dice = dice(recons[i], truths[i]);
    m.baseline_dice = dice(mean_vol, truths[i]);
    try {
      m.avdist_mm = avdist(recons[i], truths[i]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyBoundary) throw;
      m.avdist_mm = std::numeric_limits<double>::infinity();
    }
    m.baseline_avdist_mm = avdist(mean_vol, truths[i]);
    d_rec.push_back(m.dice);
    d_base.push_back(m.baseline_dice);
    a_rec.push_back(m.avdist_mm);
    a_base.push_back(m.baseline_avdist_mm);
    r.per_sample.push_back(m);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  r.dice = mean(d_rec);
  r.baseline_dice = mean(d_base);
  r.avdist_mm = mean(a_rec);
  r.baseline_avdist_mm = mean(a_base);
  r.dice_test = stats::paired_t_test(d_rec, d_base);
  r.avdist_test = stats::paired_t_test(a_base, a_rec);
  return r;
}

}  // namespace larecon
