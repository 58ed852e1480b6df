#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "proxhmr/error.hpp"

namespace proxhmr {

inline void check_joint_sets(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  if (pred.cols() != gt.cols() || pred.cols() == 0) throw InvalidInput("joint sets must be non-empty and equal in size");
  if (!pred.allFinite() || !gt.allFinite()) throw InvalidInput("non-finite joints");
}

// Mean per-joint position error in meters. With `pelvis_aligned`, both sets
// are first translated so that joint 0 sits at the origin.
inline double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, bool pelvis_aligned = false) {
  check_joint_sets(pred, gt);
  Eigen::Matrix3Xd d = pred - gt;
  if (pelvis_aligned) d.colwise() -= Eigen::Vector3d(d.col(0));
  return d.colwise().norm().mean();
}

struct AlignedError {
  double error = 0.0;
  bool degenerate = false;  // ground truth is (nearly) collinear; only translation was fitted
};

// MPJPE after the least-squares similarity transform from pred onto gt.
inline AlignedError pa_mpjpe_detail(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  check_joint_sets(pred, gt);
  const Eigen::Matrix3Xd g0 = gt.colwise() - gt.rowwise().mean();
  const Eigen::Matrix3Xd p0 = pred.colwise() - pred.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(g0).singularValues();
  const Eigen::Vector3d spv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(p0).singularValues();
  AlignedError out;
  if (gt.cols() < 3 || !(sv[1] > 1e-9 * std::max(1.0, sv[0])) || !(spv[1] > 1e-9 * std::max(1.0, spv[0]))) {
    out.degenerate = true;
    out.error = (p0 - g0).colwise().norm().mean();
    return out;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(pred, gt, true);
  const Eigen::Matrix3Xd aligned = (T.topLeftCorner<3, 3>() * pred).colwise() + Eigen::Vector3d(T.topRightCorner<3, 1>());
  out.error = (aligned - gt).colwise().norm().mean();
  return out;
}

inline double pa_mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  return pa_mpjpe_detail(pred, gt).error;
}

}  // namespace proxhmr
