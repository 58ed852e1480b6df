#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "proxhmr/error.hpp"
#include "proxhmr/json_eigen.hpp"
#include "proxhmr/rotation.hpp"

namespace proxhmr {

struct SensorPlacement {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

enum class JointType { revolute, prismatic, planar_base };

struct Limit {
  double lo;
  double hi;
};

struct ChainJoint {
  JointType type = JointType::revolute;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  std::vector<Limit> limits;  // one per degree of freedom
  SensorPlacement origin;     // fixed transform from the previous frame

  int dof() const { return type == JointType::planar_base ? 3 : 1; }
};

enum class SensorKind { touch, lidar };

struct KinematicChain {
  static constexpr int kFormatVersion = 1;
  std::string name;
  std::vector<ChainJoint> joints;
  SensorPlacement tool;  // sensor frame relative to the last joint frame
  SensorKind sensor = SensorKind::touch;

  int dof() const {
    int n = 0;
    for (const auto& j : joints) n += j.dof();
    return n;
  }

  void validate() const {
    if (joints.empty()) throw InvalidInput("chain needs at least one joint");
    for (const auto& j : joints) {
      if (static_cast<int>(j.limits.size()) != j.dof()) throw InvalidInput("joint limit count mismatch");
      for (const auto& l : j.limits) {
        if (!std::isfinite(l.lo) || !std::isfinite(l.hi) || l.lo > l.hi) throw InvalidInput("bad joint limits");
      }
      if (j.type != JointType::planar_base && std::abs(j.axis.norm() - 1.0) > 1e-9)
        throw InvalidInput("joint axis must be unit length");
      if (!is_rotation(j.origin.rotation) || !j.origin.translation.allFinite())
        throw InvalidInput("bad joint origin");
    }
    if (!is_rotation(tool.rotation) || !tool.translation.allFinite()) throw InvalidInput("bad tool transform");
  }

  Eigen::VectorXd lower() const { return bounds(true); }
  Eigen::VectorXd upper() const { return bounds(false); }

  bool within_limits(const Eigen::VectorXd& q, double tol = 0.0) const {
    return q.size() == dof() && (q.array() >= lower().array() - tol).all() && (q.array() <= upper().array() + tol).all();
  }

 private:
  Eigen::VectorXd bounds(bool low) const {
    Eigen::VectorXd b(dof());
    int k = 0;
    for (const auto& j : joints) {
      for (const auto& l : j.limits) b[k++] = low ? l.lo : l.hi;
    }
    return b;
  }
};

namespace detail {

inline void compose(SensorPlacement& t, const Eigen::Matrix3d& r, const Eigen::Vector3d& p) {
  t.translation += t.rotation * p;
  t.rotation = t.rotation * r;
}

// Sensor placement plus the world-frame position Jacobian columns.
inline SensorPlacement chain_fk(const KinematicChain& chain, const Eigen::VectorXd& q, Eigen::Matrix3Xd* jac) {
  struct Motion {
    JointType type;
    Eigen::Vector3d axis;  // world frame
    Eigen::Vector3d point;
  };
  std::vector<Motion> motions;
  SensorPlacement t;
  int k = 0;
  for (const auto& j : chain.joints) {
    compose(t, j.origin.rotation, j.origin.translation);
    switch (j.type) {
      case JointType::revolute:
        motions.push_back({JointType::revolute, t.rotation * j.axis, t.translation});
        compose(t, Eigen::AngleAxisd(q[k], j.axis).toRotationMatrix(), Eigen::Vector3d::Zero());
        break;
      case JointType::prismatic:
        motions.push_back({JointType::prismatic, t.rotation * j.axis, t.translation});
        compose(t, Eigen::Matrix3d::Identity(), q[k] * j.axis);
        break;
      case JointType::planar_base:
        motions.push_back({JointType::prismatic, t.rotation * Eigen::Vector3d::UnitX(), t.translation});
        motions.push_back({JointType::prismatic, t.rotation * Eigen::Vector3d::UnitY(), t.translation});
        compose(t, Eigen::Matrix3d::Identity(), Eigen::Vector3d(q[k], q[k + 1], 0.0));
        motions.push_back({JointType::revolute, t.rotation * Eigen::Vector3d::UnitZ(), t.translation});
        compose(t, Eigen::AngleAxisd(q[k + 2], Eigen::Vector3d::UnitZ()).toRotationMatrix(), Eigen::Vector3d::Zero());
        break;
    }
    k += j.dof();
  }
  compose(t, chain.tool.rotation, chain.tool.translation);
  if (jac) {
    jac->resize(3, static_cast<Eigen::Index>(motions.size()));
    for (std::size_t m = 0; m < motions.size(); ++m) {
      const auto& mo = motions[m];
      jac->col(static_cast<Eigen::Index>(m)) =
          mo.type == JointType::revolute ? Eigen::Vector3d(mo.axis.cross(t.translation - mo.point)) : mo.axis;
    }
  }
  return t;
}

}  // namespace detail

inline SensorPlacement fk(const KinematicChain& chain, const Eigen::VectorXd& q) {
  if (q.size() != chain.dof() || !q.allFinite()) throw InvalidInput("joint vector has wrong size or is non-finite");
  if (!chain.within_limits(q, 1e-12)) throw InvalidInput("joint vector outside limits");
  return detail::chain_fk(chain, q, nullptr);
}

struct IkOptions {
  double damping = 0.05;
  int max_iterations = 200;
  int restarts = 8;
  double tolerance = 0.01;   // m, success threshold on the position residual
  double clearance = 0.05;   // m, minimum distance to committed placements
  std::uint64_t seed = 0x5eed;

  void validate() const {
    if (!(damping >= 0.0) || max_iterations < 1 || restarts < 1 || !(tolerance > 0.0) || !(clearance >= 0.0))
      throw InvalidInput("bad IK options");
  }
};

struct IkResult {
  Eigen::VectorXd q;
  bool success = false;
  double residual = std::numeric_limits<double>::infinity();
  SensorPlacement placement;
};

// Deterministic restart configurations: the clamped zero vector, then
// uniform draws inside the limits.
inline std::vector<Eigen::VectorXd> ik_seeds(const KinematicChain& chain, const IkOptions& opt) {
  const Eigen::VectorXd lo = chain.lower(), hi = chain.upper();
  std::vector<Eigen::VectorXd> seeds;
  seeds.push_back(Eigen::VectorXd::Zero(chain.dof()).cwiseMax(lo).cwiseMin(hi));
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 1; r < opt.restarts; ++r) {
    Eigen::VectorXd q(chain.dof());
    for (int d = 0; d < chain.dof(); ++d) q[d] = lo[d] + u(rng) * (hi[d] - lo[d]);
    seeds.push_back(q);
  }
  return seeds;
}

// Damped least-squares position IK with restarts. Success needs the residual
// within tolerance, the joints inside their limits and the sensor kept clear
// of every already committed placement.
inline IkResult ik_reach(const KinematicChain& chain, const Eigen::Vector3d& target,
                         const std::vector<SensorPlacement>& occupied, const IkOptions& opt = {}) {
  opt.validate();
  if (!target.allFinite()) throw InvalidInput("non-finite IK target");
  const Eigen::VectorXd lo = chain.lower(), hi = chain.upper();
  auto clear = [&](const Eigen::Vector3d& p) {
    for (const auto& o : occupied) {
      if ((o.translation - p).norm() < opt.clearance) return false;
    }
    return true;
  };
  IkResult best;
  best.q = Eigen::VectorXd::Zero(chain.dof()).cwiseMax(lo).cwiseMin(hi);
  best.placement = detail::chain_fk(chain, best.q, nullptr);
  best.residual = (best.placement.translation - target).norm();
  const double lambda2 = opt.damping * opt.damping;
  for (Eigen::VectorXd q : ik_seeds(chain, opt)) {
    Eigen::Matrix3Xd jac;
    SensorPlacement t = detail::chain_fk(chain, q, &jac);
    for (int it = 0; it < opt.max_iterations; ++it) {
      const Eigen::Vector3d err = target - t.translation;
      if (err.norm() < 1e-6) break;
      const Eigen::Matrix3d jjt = jac * jac.transpose() + lambda2 * Eigen::Matrix3d::Identity();
      const Eigen::VectorXd dq = jac.transpose() * jjt.ldlt().solve(err);
      const Eigen::VectorXd next = (q + dq).cwiseMax(lo).cwiseMin(hi);
      if ((next - q).norm() < 1e-12) break;
      q = next;
      t = detail::chain_fk(chain, q, &jac);
    }
    const double residual = (t.translation - target).norm();
    const bool ok = residual <= opt.tolerance && clear(t.translation);
    // Prefer successes; among equals keep the smaller residual.
    if ((ok && !best.success) || (ok == best.success && residual < best.residual)) {
      best.q = q;
      best.success = ok;
      best.residual = residual;
      best.placement = t;
    }
    if (best.success) break;
  }
  return best;
}

// Mobile base (x, y, yaw) with a fixed mast and a three-joint pitch arm.
inline KinematicChain default_touch_chain() {
  KinematicChain c;
  c.name = "mobile-arm";
  c.sensor = SensorKind::touch;
  ChainJoint base;
  base.type = JointType::planar_base;
  base.limits = {{-3.0, 3.0}, {-3.0, 3.0}, {-std::numbers::pi, std::numbers::pi}};
  c.joints.push_back(base);
  const double pitch_limits[3][2] = {{-2.6, 2.6}, {-2.6, 2.6}, {-1.9, 1.9}};
  const Eigen::Vector3d offsets[3] = {{0.0, 0.0, 0.9}, {0.4, 0.0, 0.0}, {0.35, 0.0, 0.0}};
  for (int k = 0; k < 3; ++k) {
    ChainJoint j;
    j.type = JointType::revolute;
    j.axis = Eigen::Vector3d::UnitY();
    j.limits = {{pitch_limits[k][0], pitch_limits[k][1]}};
    j.origin.translation = offsets[k];
    c.joints.push_back(j);
  }
  c.tool.translation = Eigen::Vector3d(0.1, 0.0, 0.0);
  return c;
}

// Base-mounted scanner: the base pose fixes the scan origin and heading.
inline KinematicChain default_lidar_chain(double scan_height = 0.25) {
  KinematicChain c;
  c.name = "base-lidar";
  c.sensor = SensorKind::lidar;
  ChainJoint base;
  base.type = JointType::planar_base;
  base.limits = {{-3.0, 3.0}, {-3.0, 3.0}, {-std::numbers::pi, std::numbers::pi}};
  c.joints.push_back(base);
  c.tool.translation = Eigen::Vector3d(0.0, 0.0, scan_height);
  return c;
}

inline std::string to_string(JointType t) {
  switch (t) {
    case JointType::revolute: return "revolute";
    case JointType::prismatic: return "prismatic";
    case JointType::planar_base: return "planar-base";
  }
  return "revolute";
}

inline JointType joint_type_from_string(const std::string& s) {
  if (s == "revolute") return JointType::revolute;
  if (s == "prismatic") return JointType::prismatic;
  if (s == "planar-base") return JointType::planar_base;
  throw FormatError("unknown joint type " + s);
}

inline nlohmann::json placement_to_json(const SensorPlacement& p) {
  return {{"rotation", to_json_mat3(p.rotation)}, {"translation", to_json_vec(p.translation)}};
}

inline SensorPlacement placement_from_json(const nlohmann::json& j) {
  SensorPlacement p;
  if (j.contains("rotation")) p.rotation = mat3_from_json(j.at("rotation"));
  if (j.contains("translation")) p.translation = vec3_from_json(j.at("translation"));
  return p;
}

inline nlohmann::json chain_to_json(const KinematicChain& c) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& j : c.joints) {
    nlohmann::json limits = nlohmann::json::array();
    for (const auto& l : j.limits) limits.push_back({l.lo, l.hi});
    joints.push_back({{"type", to_string(j.type)},
                      {"axis", to_json_vec(j.axis)},
                      {"limits", limits},
                      {"origin", placement_to_json(j.origin)}});
  }
  return {{"format", "proxhmr-chain"},
          {"version", KinematicChain::kFormatVersion},
          {"name", c.name},
          {"sensor", c.sensor == SensorKind::touch ? "touch" : "lidar"},
          {"joints", joints},
          {"tool", placement_to_json(c.tool)}};
}

inline KinematicChain chain_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "proxhmr-chain") throw FormatError("not a chain document");
    if (j.at("version").get<int>() != KinematicChain::kFormatVersion) throw FormatError("unsupported chain version");
    KinematicChain c;
    c.name = j.value("name", "");
    const std::string sensor = j.value("sensor", "touch");
    if (sensor != "touch" && sensor != "lidar") throw FormatError("unknown sensor kind " + sensor);
    c.sensor = sensor == "touch" ? SensorKind::touch : SensorKind::lidar;
    for (const auto& jj : j.at("joints")) {
      ChainJoint cj;
      cj.type = joint_type_from_string(jj.at("type").get<std::string>());
      if (jj.contains("axis")) cj.axis = vec3_from_json(jj.at("axis"));
      for (const auto& l : jj.at("limits")) cj.limits.push_back({l.at(0).get<double>(), l.at(1).get<double>()});
      if (jj.contains("origin")) cj.origin = placement_from_json(jj.at("origin"));
      c.joints.push_back(std::move(cj));
    }
    if (j.contains("tool")) c.tool = placement_from_json(j.at("tool"));
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed chain: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid chain: ") + e.what());
  }
}

inline KinematicChain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open chain file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cannot parse chain file " + path + ": " + e.what());
  }
  return chain_from_json(j);
}

}  // namespace proxhmr
