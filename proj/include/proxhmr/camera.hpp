#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

#include "proxhmr/error.hpp"
#include "proxhmr/rotation.hpp"

namespace proxhmr {

// Points closer than this along the optical axis are not projectable.
inline constexpr double kNearPlane = 1e-3;

// Pinhole camera. `rotation` maps camera axes to world (columns are the
// camera x-right, y-down, z-forward axes); `translation` is the optical center.
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double focal = 2200.0;
  int width = 1920;
  int height = 1080;

  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }

  void validate() const {
    if (!is_rotation(rotation)) throw InvalidInput("camera rotation is not a proper rotation");
    if (!translation.allFinite()) throw InvalidInput("non-finite camera translation");
    if (!(focal > 0.0) || width <= 0 || height <= 0) throw InvalidInput("bad camera intrinsics");
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation.transpose() * (world - translation); }

  Eigen::Matrix3Xd to_camera(const Eigen::Matrix3Xd& world) const {
    return rotation.transpose() * (world.colwise() - translation);
  }
};

struct Projection {
  double x;
  double y;
  double depth;
};

// Camera at `eye` looking at `target`, with image "up" aligned to world +z.
inline Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double focal = 2200.0,
                      int width = 1920, int height = 1080) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = down;
  cam.rotation.col(2) = forward;
  cam.translation = eye;
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  return cam;
}

inline std::optional<Projection> project_camera_point(const Eigen::Vector3d& p, const Camera& cam) {
  if (!(p.z() > kNearPlane)) return std::nullopt;
  return Projection{cam.focal * p.x() / p.z() + cam.cx(), cam.focal * p.y() / p.z() + cam.cy(), p.z()};
}

// Pinhole projection of a world point. Points behind (or on) the near plane
// are reported as not projectable.
inline std::optional<Projection> project(const Eigen::Vector3d& world, const Camera& cam) {
  return project_camera_point(cam.to_camera(world), cam);
}

inline bool in_frame(const Projection& p, const Camera& cam) {
  return p.x >= 0.0 && p.x <= cam.width && p.y >= 0.0 && p.y <= cam.height;
}

}  // namespace proxhmr
