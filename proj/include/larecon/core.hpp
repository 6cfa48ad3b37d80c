// Shared vocabulary for the larecon library: points, errors and random streams.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace larecon {

using Point3 = Eigen::Vector3d;

enum class ErrorCode {
  InvalidArgument,
  OpenMesh,
  OutOfExtent,
  DegenerateVolume,
  NoSurface,
  GridMismatch,
  EmptyMesh,
  IsolatedVertex,
  DegenerateConfiguration,
  RejectionExhausted,
  DisconnectedInterior,
  Unreachable,
  LandmarkOutside,
  ShapeMismatch,
  StaleCache,
  EmptyDataset,
  EmptyBoundary,
  NoVerticesInRadius,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OpenMesh: return "OpenMesh";
    case ErrorCode::OutOfExtent: return "OutOfExtent";
    case ErrorCode::DegenerateVolume: return "DegenerateVolume";
    case ErrorCode::NoSurface: return "NoSurface";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::IsolatedVertex: return "IsolatedVertex";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::RejectionExhausted: return "RejectionExhausted";
    case ErrorCode::DisconnectedInterior: return "DisconnectedInterior";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::LandmarkOutside: return "LandmarkOutside";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyBoundary: return "EmptyBoundary";
    case ErrorCode::NoVerticesInRadius: return "NoVerticesInRadius";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above, so callers
/// (and the CLI's machine-readable error line) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-sample streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline Point3 normal_point(Rng& rng) {
  // Sequenced explicitly: argument evaluation order is unspecified.
  const double x = standard_normal(rng);
  const double y = standard_normal(rng);
  const double z = standard_normal(rng);
  return {x, y, z};
}

}  // namespace larecon
