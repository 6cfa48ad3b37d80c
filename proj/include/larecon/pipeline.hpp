// Glue shared by the CLI and the end-to-end tests: the mean-shape model and per-sample
// path synthesis.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "larecon/core.hpp"
#include "larecon/marching_cubes.hpp"
#include "larecon/mesh.hpp"
#include "larecon/pathgen.hpp"
#include "larecon/volume.hpp"

namespace larecon {

struct MeanModel {
  OccupancyVolume volume;
  ScalarField mean;  // voxelwise mean occupancy
  TriMesh mesh;
  Landmarks landmarks;  // average of the sample landmarks
};

inline Landmarks average_landmarks(const std::vector<Landmarks>& lms) {
  require(!lms.empty(), ErrorCode::EmptyDataset, "no landmarks to average");
  Landmarks out{Point3::Zero(), Point3::Zero(), Point3::Zero(), Point3::Zero(), Point3::Zero()};
  for (const auto& l : lms) {
    for (int k = 0; k < 4; ++k) out.set_pv(k, out.pvs()[k] + l.pvs()[k]);
    out.septum += l.septum;
  }
  const double inv = 1.0 / static_cast<double>(lms.size());
  for (int k = 0; k < 4; ++k) out.set_pv(k, out.pvs()[k] * inv);
  out.septum *= inv;
  return out;
}

inline MeanModel build_mean_model(const std::vector<OccupancyVolume>& volumes, const std::vector<Landmarks>& lms) {
  MeanShape ms = mean_shape(volumes);
  TriMesh mesh = marching_cubes(ms.binary, 0.5);
  return {std::move(ms.binary), std::move(ms.mean), std::move(mesh), average_landmarks(lms)};
}

struct PathSettings {
  std::array<double, 4> alphas = kDefaultLegAlphas;
  AugmentConfig augment;
  double septum_sigma_mm = 3.0;
  double pv_eps = 0.1;  // cosine threshold of the PV walk
};

struct SynthesizedPath {
  Landmarks landmarks;  // projected onto the sample
  PathCloud path;       // composed + augmented
  PathVolume volume;
};

/// Landmark projection, Dijkstra legs, augmentation and voxelization for one sample.
inline SynthesizedPath synthesize_path(const MeanModel& mean, const OccupancyVolume& vol, const TriMesh& mesh,
                                       const PathSettings& s, std::uint64_t seed) {
  Rng rng(seed);
  SynthesizedPath out;
  out.landmarks = project_landmarks(mean.mesh, mean.landmarks, mesh, s.pv_eps, s.septum_sigma_mm, rng);
  const PathCloud composed = compose_path(vol, out.landmarks, s.alphas);
  out.path = augment_path(composed, vol, s.augment, rng);
  out.volume = path_to_volume(out.path, vol.grid);
  return out;
}

}  // namespace larecon
