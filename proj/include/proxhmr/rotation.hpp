#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

namespace proxhmr {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return s;
}

// Rodrigues' formula. Exact identity for a zero vector.
inline Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d k = skew(w / angle);
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

// Left Jacobian of SO(3): R(w + dw) ~= exp([J_l(w) dw]x) R(w).
inline Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  const Eigen::Matrix3d k = skew(w);
  if (angle < 1e-5) {
    return Eigen::Matrix3d::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double a2 = angle * angle;
  return Eigen::Matrix3d::Identity() + ((1.0 - std::cos(angle)) / a2) * k +
         ((angle - std::sin(angle)) / (a2 * angle)) * k * k;
}

// Maps an axis-angle vector to the equivalent one with magnitude <= pi.
inline Eigen::Vector3d canonical_axis_angle(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle <= std::numbers::pi) return w;
  const Eigen::Vector3d axis = w / angle;
  double wrapped = std::fmod(angle, 2.0 * std::numbers::pi);
  if (wrapped > std::numbers::pi) wrapped -= 2.0 * std::numbers::pi;
  return axis * wrapped;
}

inline bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-6) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace proxhmr
