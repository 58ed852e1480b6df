#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "proxhmr/error.hpp"

namespace proxhmr {

inline nlohmann::json to_json_vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

inline Eigen::Vector3d vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json to_json_mat3(const Eigen::Matrix3d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

inline Eigen::Matrix3d mat3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3x3 matrix");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) m.row(r) = vec3_from_json(j[r]).transpose();
  return m;
}

inline nlohmann::json to_json_cols(const Eigen::Matrix3Xd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(to_json_vec(m.col(c)));
  return out;
}

inline Eigen::Matrix3Xd cols_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("expected a list of 3-vectors");
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = vec3_from_json(j[c]);
  return m;
}

inline nlohmann::json to_json_vecx(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::VectorXd vecx_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("expected a list of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace proxhmr
