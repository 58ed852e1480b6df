#pragma once

#include <Eigen/Core>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <vector>

#include "proxhmr/error.hpp"
#include "proxhmr/json_eigen.hpp"
#include "proxhmr/kinematics.hpp"
#include "proxhmr/visibility.hpp"

namespace proxhmr {

struct Measurement {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  SensorKind kind = SensorKind::touch;
  SensorPlacement source;
  double noise_sigma = 0.0;
  int vertex = -1;  // touched ground-truth vertex, -1 for scans

  void validate() const {
    if (!point.allFinite()) throw InvalidInput("non-finite measurement");
    if (!(noise_sigma >= 0.0)) throw InvalidInput("negative measurement noise");
  }
};

inline Measurement sample_touch(const Eigen::Matrix3Xd& gt_vertices, int vertex, double sigma, std::uint64_t seed,
                                const SensorPlacement& source = {}) {
  if (vertex < 0 || vertex >= gt_vertices.cols()) throw InvalidInput("touch vertex out of range");
  if (!(sigma >= 0.0)) throw InvalidInput("negative touch noise");
  Measurement m;
  m.point = gt_vertices.col(vertex);
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (int k = 0; k < 3; ++k) m.point[k] += n(rng);
  }
  m.kind = SensorKind::touch;
  m.source = source;
  m.noise_sigma = sigma;
  m.vertex = vertex;
  return m;
}

struct Lidar2DSpec {
  double scan_height = 0.25;                           // m, informational; the placement sets the plane
  double angular_resolution = std::numbers::pi / 360;  // rad
  double max_range = 4.0;
  double min_range = 0.01;
  double field_of_view = 2.0 * std::numbers::pi;      // centered on the sensor x axis

  void validate() const {
    if (!(angular_resolution > 0.0)) throw InvalidInput("LiDAR resolution must be positive");
    if (!(min_range >= 0.0) || !(min_range < max_range)) throw InvalidInput("LiDAR range band is empty");
    if (!(field_of_view > 0.0) || field_of_view > 2.0 * std::numbers::pi + 1e-12)
      throw InvalidInput("bad LiDAR field of view");
  }
};

// Rays in the sensor's x-y plane; the first surface hit inside the range band
// is reported with radial Gaussian noise.
inline std::vector<Measurement> scan_lidar_slice(const Eigen::Matrix3Xd& gt_vertices,
                                                 const std::vector<Eigen::Vector3i>& faces, const Lidar2DSpec& spec,
                                                 const SensorPlacement& placement, double sigma, std::uint64_t seed) {
  spec.validate();
  if (!(sigma >= 0.0)) throw InvalidInput("negative LiDAR noise");
  // Sensor frame: only faces crossing the scan plane can be hit.
  const Eigen::Matrix3Xd local = placement.rotation.transpose() * (gt_vertices.colwise() - placement.translation);
  std::vector<Eigen::Vector3i> crossing;
  for (const auto& f : faces) {
    const double z0 = local(2, f[0]), z1 = local(2, f[1]), z2 = local(2, f[2]);
    if (std::min({z0, z1, z2}) <= 0.0 && std::max({z0, z1, z2}) >= 0.0) crossing.push_back(f);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Measurement> out;
  if (crossing.empty()) return out;
  const int rays = std::max(1, static_cast<int>(std::floor(spec.field_of_view / spec.angular_resolution + 1e-9)));
  const double start = -0.5 * spec.field_of_view;
  for (int r = 0; r < rays; ++r) {
    const double a = start + r * spec.angular_resolution;
    const Eigen::Vector3d dir(std::cos(a), std::sin(a), 0.0);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : crossing) {
      const double t = detail::ray_triangle(dir, local.col(f[0]), local.col(f[1]), local.col(f[2]));
      if (t >= spec.min_range && t <= spec.max_range && t < best) best = t;
    }
    if (!std::isfinite(best)) continue;
    const double range = sigma > 0.0 ? best + sigma * noise(rng) : best;
    Measurement m;
    m.point = placement.translation + placement.rotation * (range * dir);
    m.kind = SensorKind::lidar;
    m.source = placement;
    m.noise_sigma = sigma;
    out.push_back(m);
  }
  return out;
}

struct LegFilter {
  double max_cluster_diameter = 0.25;  // m
  double cluster_gap = 0.05;           // m, consecutive hits closer than this share a cluster
  double min_range = 0.01;
  double max_range = 4.0;
};

// Range-band plus cluster-width filter. Consecutive scan points are grouped
// into clusters; clusters wider than a leg are dropped.
inline std::vector<Measurement> filter_legs(const std::vector<Measurement>& scan, const LegFilter& f = {}) {
  std::vector<Measurement> in_band;
  for (const auto& m : scan) {
    const double r = (m.point - m.source.translation).norm();
    if (r >= f.min_range && r <= f.max_range) in_band.push_back(m);
  }
  std::vector<Measurement> out;
  std::size_t begin = 0;
  while (begin < in_band.size()) {
    std::size_t end = begin + 1;
    while (end < in_band.size() && (in_band[end].point - in_band[end - 1].point).norm() < f.cluster_gap) ++end;
    double diameter = 0.0;
    for (std::size_t a = begin; a < end; ++a) {
      for (std::size_t b = a + 1; b < end; ++b) diameter = std::max(diameter, (in_band[a].point - in_band[b].point).norm());
    }
    if (diameter <= f.max_cluster_diameter) out.insert(out.end(), in_band.begin() + begin, in_band.begin() + end);
    begin = end;
  }
  return out;
}

inline nlohmann::json measurement_to_json(const Measurement& m) {
  return {{"kind", m.kind == SensorKind::touch ? "touch" : "lidar"},
          {"point", to_json_vec(m.point)},
          {"source", placement_to_json(m.source)},
          {"noise_sigma", m.noise_sigma},
          {"vertex", m.vertex}};
}

}  // namespace proxhmr
