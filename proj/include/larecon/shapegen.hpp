// Parametric left-atrium generator: an ellipsoidal body smoothly blended with four
// pulmonary-vein tubes and an appendage, bent by a divergence-free sinusoidal warp.
// Parameters are drawn from a multivariate normal and kept only when they score within
// the model's Mahalanobis acceptance radius.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "larecon/core.hpp"
#include "larecon/grid.hpp"
#include "larecon/marching_cubes.hpp"
#include "larecon/mesh.hpp"
#include "larecon/parallel.hpp"
#include "larecon/volume.hpp"

namespace larecon {

struct AtriumParams {
  Point3 body_radii_mm{28, 24, 21};
  std::array<Point3, 4> pv_dir{};  // LS, LI, RI, RS
  std::array<double, 4> pv_radius_mm{6, 6, 6, 6};
  std::array<double, 4> pv_length_mm{14, 14, 14, 14};
  Point3 appendage_dir = Point3::UnitX();
  double appendage_radius_mm = 7.0;
  double appendage_length_mm = 16.0;
  std::uint64_t warp_seed = 0;
  double warp_amp_mm = 0.0;

  /// Range and separation checks on the sampled anatomy.
  bool satisfies_invariants() const {
    if ((body_radii_mm.array() <= 0.0).any()) return false;
    for (int k = 0; k < 4; ++k) {
      if (pv_radius_mm[k] < 3.0 || pv_radius_mm[k] > 12.0) return false;
      if (pv_length_mm[k] <= 0.0) return false;
      if (std::abs(pv_dir[k].norm() - 1.0) > 1e-9) return false;
    }
    const double min_cos = std::cos(20.0 * std::numbers::pi / 180.0);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (pv_dir[i].dot(pv_dir[j]) > min_cos) return false;
    return appendage_radius_mm > 0.0 && appendage_length_mm > 0.0 && warp_amp_mm >= 0.0;
  }
};

/// Layout of the flat MVN parameter vector.
namespace param_index {
constexpr int kBodyRadii = 0;   // 3 values, mm
constexpr int kPvAngles = 3;    // 4 x (azimuth, elevation), radians
constexpr int kPvRadius = 11;   // 4 values, mm
constexpr int kPvLength = 15;   // 4 values, mm
constexpr int kAppAngles = 19;  // azimuth, elevation
constexpr int kAppRadius = 21;
constexpr int kAppLength = 22;
constexpr int kWarpAmp = 23;
constexpr int kCount = 24;
}  // namespace param_index

inline Point3 direction_from_angles(double azimuth, double elevation) {
  return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
}

inline AtriumParams params_from_vector(const Eigen::VectorXd& v) {
  namespace pi = param_index;
  require(v.size() == pi::kCount, ErrorCode::ShapeMismatch, "parameter vector has wrong length");
  AtriumParams p;
  p.body_radii_mm = v.segment<3>(pi::kBodyRadii);
  for (int k = 0; k < 4; ++k) {
    p.pv_dir[k] = direction_from_angles(v[pi::kPvAngles + 2 * k], v[pi::kPvAngles + 2 * k + 1]);
    p.pv_radius_mm[k] = v[pi::kPvRadius + k];
    p.pv_length_mm[k] = v[pi::kPvLength + k];
  }
  p.appendage_dir = direction_from_angles(v[pi::kAppAngles], v[pi::kAppAngles + 1]);
  p.appendage_radius_mm = v[pi::kAppRadius];
  p.appendage_length_mm = v[pi::kAppLength];
  p.warp_amp_mm = v[pi::kWarpAmp];
  return p;
}

struct MvnSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double accept_threshold = 0.0;  // max Mahalanobis distance

  void validate() const {
    require(mean.size() > 0 && covariance.rows() == mean.size() && covariance.cols() == mean.size(),
            ErrorCode::ShapeMismatch, "MVN mean/covariance sizes disagree");
    require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-9, ErrorCode::InvalidArgument,
            "covariance must be symmetric");
    require(accept_threshold >= 0.0, ErrorCode::InvalidArgument, "accept threshold must be non-negative");
  }

  /// Hand-tuned default for 24^3 grids at 5 mm spacing (a 12 cm field of view).
  static MvnSpec default_spec() {
    namespace pi = param_index;
    constexpr double deg = std::numbers::pi / 180.0;
    MvnSpec s;
    s.mean.resize(pi::kCount);
    Eigen::VectorXd sd(pi::kCount);
    s.mean.segment<3>(pi::kBodyRadii) << 28.0, 24.0, 21.0;
    sd.segment<3>(pi::kBodyRadii) << 2.5, 2.0, 2.0;
    const double az[4] = {-40.0, -40.0, -140.0, -140.0};
    const double el[4] = {35.0, -30.0, -30.0, 35.0};
    for (int k = 0; k < 4; ++k) {
      s.mean[pi::kPvAngles + 2 * k] = az[k] * deg;
      s.mean[pi::kPvAngles + 2 * k + 1] = el[k] * deg;
      sd[pi::kPvAngles + 2 * k] = 8.0 * deg;
      sd[pi::kPvAngles + 2 * k + 1] = 6.0 * deg;
      s.mean[pi::kPvRadius + k] = 6.0;
      sd[pi::kPvRadius + k] = 0.8;
      s.mean[pi::kPvLength + k] = 14.0;
      sd[pi::kPvLength + k] = 3.0;
    }
    s.mean[pi::kAppAngles] = 50.0 * deg;
    s.mean[pi::kAppAngles + 1] = 20.0 * deg;
    sd[pi::kAppAngles] = 10.0 * deg;
    sd[pi::kAppAngles + 1] = 8.0 * deg;
    s.mean[pi::kAppRadius] = 7.0;
    sd[pi::kAppRadius] = 1.0;
    s.mean[pi::kAppLength] = 16.0;
    sd[pi::kAppLength] = 3.0;
    s.mean[pi::kWarpAmp] = 3.0;
    sd[pi::kWarpAmp] = 1.0;

    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(pi::kCount, pi::kCount);
    // Bigger bodies come with bigger veins.
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) corr(pi::kBodyRadii + a, pi::kBodyRadii + b) = 0.5;
    for (int k = 0; k < 4; ++k) {
      corr(pi::kBodyRadii, pi::kPvRadius + k) = corr(pi::kPvRadius + k, pi::kBodyRadii) = 0.3;
    }
    s.covariance = sd.asDiagonal() * corr * sd.asDiagonal();
    s.accept_threshold = 6.274079775282102;  // sqrt of the 97.5% chi-square quantile, 24 dof
    return s;
  }
};

struct MvnSampler {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;      // eigenvectors
  Eigen::VectorXd variances;  // eigenvalues floored at 0
  double threshold = 0.0;

  explicit MvnSampler(const MvnSpec& spec) : mean(spec.mean), threshold(spec.accept_threshold) {
    spec.validate();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.covariance);
    basis = eig.eigenvectors();
    variances = eig.eigenvalues().cwiseMax(0.0);
  }

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng) * std::sqrt(variances[i]);
    return mean + basis * z;
  }

  double mahalanobis(const Eigen::VectorXd& x) const {
    const double floor = 1e-12 * std::max(1.0, variances.maxCoeff());
    const Eigen::VectorXd c = basis.transpose() * (x - mean);
    double d2 = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      if (variances[i] > floor) {
        d2 += c[i] * c[i] / variances[i];
      } else if (std::abs(c[i]) > 1e-9) {
        return std::numeric_limits<double>::infinity();
      }
    }
    return std::sqrt(d2);
  }
};

constexpr int kMaxRejections = 1000;

/// Draws parameters from the MVN, resampling draws that fall outside the acceptance
/// radius or violate the anatomy invariants.
inline AtriumParams sample_params(const MvnSpec& spec, Rng& rng) {
  const MvnSampler sampler(spec);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const Eigen::VectorXd x = sampler.draw(rng);
    if (sampler.mahalanobis(x) > spec.accept_threshold) continue;
    AtriumParams p = params_from_vector(x);
    if (!p.satisfies_invariants()) continue;
    return p;
  }
  throw Error(ErrorCode::RejectionExhausted, "no acceptable MVN draw in 1000 attempts");
}

namespace sdf {

inline double ellipsoid(const Point3& p, const Point3& r) {
  const double q = (p.array() / r.array()).square().sum();
  const double k1 = (p.array() / r.array().square()).matrix().norm();
  if (k1 == 0.0) return -r.minCoeff();
  const double k0 = std::sqrt(q);
  // k0 (k0 - 1) / k1 with the sign carried exactly by q - 1.
  return k0 * (q - 1.0) / ((k0 + 1.0) * k1);
}

inline double capped_cylinder(const Point3& p, const Point3& a, const Point3& b, double r) {
  const Point3 ba = b - a, pa = p - a;
  const double baba = ba.dot(ba);
  const double paba = pa.dot(ba);
  const double x = (pa * baba - ba * paba).norm() - r * baba;
  const double y = std::abs(paba - baba * 0.5) - baba * 0.5;
  const double x2 = x * x;
  const double y2 = y * y * baba;
  const double d = (std::max(x, y) < 0.0) ? -std::min(x2, y2) : ((x > 0.0 ? x2 : 0.0) + (y > 0.0 ? y2 : 0.0));
  return std::copysign(std::sqrt(std::abs(d)), d) / baba;
}

inline double capsule(const Point3& p, const Point3& a, const Point3& b, double r) {
  const Point3 pa = p - a, ba = b - a;
  const double h = std::clamp(pa.dot(ba) / ba.dot(ba), 0.0, 1.0);
  return (pa - ba * h).norm() - r;
}

inline double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

}  // namespace sdf

/// Sum of sinusoidal shear waves (wave vector orthogonal to amplitude, hence divergence
/// free) over three octaves; |displacement| <= amplitude everywhere.
class WarpField {
 public:
  WarpField(std::uint64_t seed, double amplitude_mm, double base_wavelength_mm = 120.0) {
    Rng rng(seed);
    constexpr int kOctaves = 3;
    constexpr int kWavesPerOctave = 3;
    double weight_sum = 0.0;
    for (int o = 0; o < kOctaves; ++o) weight_sum += kWavesPerOctave * std::ldexp(1.0, -o);
    for (int o = 0; o < kOctaves; ++o) {
      const double wavenumber = 2.0 * std::numbers::pi * std::ldexp(1.0, o) / base_wavelength_mm;
      for (int j = 0; j < kWavesPerOctave; ++j) {
        const Point3 dir = normal_point(rng).normalized();
        Point3 amp = normal_point(rng);
        amp = (amp - amp.dot(dir) * dir).normalized();
        const double phase = 2.0 * std::numbers::pi * uniform01(rng);
        waves_.push_back({wavenumber * dir, amp * (amplitude_mm * std::ldexp(1.0, -o) / weight_sum), phase});
      }
    }
  }

  Point3 displacement(const Point3& x) const {
    Point3 d = Point3::Zero();
    for (const auto& w : waves_) d += w.amplitude * std::sin(w.wavevector.dot(x) + w.phase);
    return d;
  }

  double divergence(const Point3& x) const {
    double div = 0.0;
    for (const auto& w : waves_) div += w.amplitude.dot(w.wavevector) * std::cos(w.wavevector.dot(x) + w.phase);
    return div;
  }

  /// Solves y - displacement(y) = x by fixed-point iteration (the warp is a contraction
  /// for the amplitudes used here).
  Point3 forward(const Point3& x) const {
    Point3 y = x;
    for (int it = 0; it < 60; ++it) y = x + displacement(y);
    return y;
  }

 private:
  struct Wave {
    Point3 wavevector;
    Point3 amplitude;
    double phase;
  };
  std::vector<Wave> waves_;
};

/// Implicit atrium: negative inside. Coordinates relative to the body center, in mm.
class AtriumImplicit {
 public:
  static constexpr double kBlendMm = 4.0;

  explicit AtriumImplicit(const AtriumParams& p) : params_(p), warp_(p.warp_seed, p.warp_amp_mm) {
    for (int k = 0; k < 4; ++k) {
      const Point3 root = body_surface_along(p.pv_dir[k]);
      pv_start_[k] = 0.5 * root;
      pv_end_[k] = root + p.pv_length_mm[k] * p.pv_dir[k];
    }
    const Point3 app_root = body_surface_along(p.appendage_dir);
    app_start_ = 0.5 * app_root;
    app_end_ = app_root + p.appendage_length_mm * p.appendage_dir;
  }

  Point3 body_surface_along(const Point3& dir) const {
    const double t = 1.0 / std::sqrt((dir.array() / params_.body_radii_mm.array()).square().sum());
    return t * dir;
  }

  /// Implicit value before warping.
  double unwarped(const Point3& x) const {
    double f = sdf::ellipsoid(x, params_.body_radii_mm);
    for (int k = 0; k < 4; ++k) {
      if (params_.pv_length_mm[k] <= 0.0) continue;
      f = sdf::smooth_min(f, sdf::capped_cylinder(x, pv_start_[k], pv_end_[k], params_.pv_radius_mm[k]), kBlendMm);
    }
    if (params_.appendage_length_mm > 0.0) {
      f = sdf::smooth_min(f, sdf::capsule(x, app_start_, app_end_, params_.appendage_radius_mm), kBlendMm);
    }
    return f;
  }

  double operator()(const Point3& x) const { return unwarped(x - warp_.displacement(x)); }

  /// Septal point: body surface toward the right-anterior side.
  static Point3 septum_direction() { return Point3(-0.75, 0.65, 0.1).normalized(); }

  const AtriumParams& params() const { return params_; }
  const WarpField& warp() const { return warp_; }
  const std::array<Point3, 4>& pv_ends() const { return pv_end_; }

  /// Landmarks in body-centered coordinates: warped PV end-cap centers and septum.
  Landmarks landmarks() const {
    Landmarks lm;
    for (int k = 0; k < 4; ++k) lm.set_pv(k, warp_.forward(pv_end_[k]));
    lm.septum = warp_.forward(body_surface_along(septum_direction()));
    return lm;
  }

 private:
  AtriumParams params_;
  WarpField warp_;
  std::array<Point3, 4> pv_start_{}, pv_end_{};
  Point3 app_start_, app_end_;
};

struct Atrium {
  OccupancyVolume volume;
  TriMesh mesh;
  Landmarks landmarks;
};

inline Point3 grid_center(const GridSpec& g) {
  return g.origin_mm + 0.5 * g.spacing_mm * Point3(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1);
}

/// Samples the implicit atrium (centered on the grid) at voxel centers and meshes its
/// zero level set.
inline Atrium build_atrium(const AtriumParams& params, const GridSpec& grid) {
  grid.validate();
  const AtriumImplicit shape(params);
  const Point3 center = grid_center(grid);
  ScalarField negated(grid);
  OccupancyVolume vol(grid);
  for (int z = 0; z < grid.dims[2]; ++z)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int x = 0; x < grid.dims[0]; ++x) {
        const Index3 i{x, y, z};
        const double f = shape(grid.world_of(i) - center);
        negated.at(i) = -f;
        if (f > 0.0) continue;
        require(x > 0 && y > 0 && z > 0 && x + 1 < grid.dims[0] && y + 1 < grid.dims[1] && z + 1 < grid.dims[2],
                ErrorCode::OutOfExtent, "atrium touches the grid boundary");
        vol.set(i, true);
      }
  require(vol.count() > 0, ErrorCode::OutOfExtent, "atrium contains no voxel centers");
  Landmarks lm = shape.landmarks();
  for (int k = 0; k < 4; ++k) lm.set_pv(k, lm.pvs()[k] + center);
  lm.septum += center;
  return {std::move(vol), marching_cubes(negated, 0.0), lm};
}

struct GeneratedSample {
  AtriumParams params;
  Atrium atrium;
  std::uint64_t sample_seed = 0;
  int attempts = 0;
};

/// n accepted atria; sample i uses its own stream derived from (seed, i). Draws that leave
/// the grid or split into several components count against the rejection budget.
inline std::vector<GeneratedSample> generate_dataset(const MvnSpec& spec, const GridSpec& grid, int n,
                                                     std::uint64_t seed) {
  require(n >= 1, ErrorCode::InvalidArgument, "dataset size must be >= 1");
  spec.validate();
  std::vector<std::optional<GeneratedSample>> slots(static_cast<std::size_t>(n));
  std::vector<std::optional<Error>> failures(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const std::uint64_t sample_seed = mix_seed(seed, i);
    Rng rng(sample_seed);
    for (int attempt = 1; attempt <= kMaxRejections; ++attempt) {
      AtriumParams p;
      try {
        p = sample_params(spec, rng);
      } catch (const Error& e) {
        failures[i] = e;
        return;
      }
      p.warp_seed = rng();
      try {
        Atrium a = build_atrium(p, grid);
        if (component_count(a.volume) != 1 || !a.mesh.is_closed()) continue;
        slots[i] = GeneratedSample{p, std::move(a), sample_seed, attempt};
        return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::OutOfExtent) {
          failures[i] = e;
          return;
        }
      }
    }
    failures[i] = Error(ErrorCode::RejectionExhausted, "sample " + std::to_string(i) + " exhausted its draws");
  });
  std::vector<GeneratedSample> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (failures[i]) throw *failures[i];
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

}  // namespace larecon
