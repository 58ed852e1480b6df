#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "proxhmr/error.hpp"
#include "proxhmr/rotation.hpp"

namespace proxhmr {

inline constexpr int kNoParent = -1;

// Kinematic tree. Joints are stored parent-before-child, root (pelvis) at 0.
struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parent;
  // Offset from the parent joint in the rest pose, meters. The root entry is
  // the root rest position itself.
  std::vector<Eigen::Vector3d> rest_offsets;

  int joint_count() const { return static_cast<int>(parent.size()); }

  std::vector<Eigen::Vector3d> rest_positions() const {
    std::vector<Eigen::Vector3d> out(parent.size());
    for (std::size_t j = 0; j < parent.size(); ++j) {
      out[j] = parent[j] == kNoParent ? rest_offsets[j] : Eigen::Vector3d(out[parent[j]] + rest_offsets[j]);
    }
    return out;
  }

  void validate() const {
    const int n = joint_count();
    if (n < 2) throw InvalidInput("skeleton needs at least two joints");
    if (static_cast<int>(rest_offsets.size()) != n || (!names.empty() && static_cast<int>(names.size()) != n)) {
      throw InvalidInput("skeleton field sizes disagree");
    }
    if (parent[0] != kNoParent) throw InvalidInput("joint 0 must be the root");
    for (int j = 1; j < n; ++j) {
      if (parent[j] < 0 || parent[j] >= j) throw InvalidInput("skeleton parents must precede children");
    }
    for (const auto& o : rest_offsets) {
      if (!o.allFinite()) throw InvalidInput("non-finite rest offset");
    }
  }
};

struct BodyTemplate {
  static constexpr int kFormatVersion = 1;

  Skeleton skeleton;
  Eigen::Matrix3Xd vertices_rest;             // 3 x Nv, meters, pelvis-centered
  std::vector<Eigen::Vector3i> faces;         // counter-clockwise seen from outside
  Eigen::MatrixXd skin_weights;               // Nv x J, row-stochastic
  std::vector<Eigen::Matrix3Xd> shape_dirs;   // Nb blendshapes, each 3 x Nv
  Eigen::MatrixXd joint_regressor;            // J x Nv, row-stochastic

  int vertex_count() const { return static_cast<int>(vertices_rest.cols()); }
  int joint_count() const { return skeleton.joint_count(); }
  int shape_count() const { return static_cast<int>(shape_dirs.size()); }

  void validate() const {
    skeleton.validate();
    const int nv = vertex_count();
    const int nj = joint_count();
    if (nv == 0) throw InvalidInput("template has no vertices");
    if (!vertices_rest.allFinite()) throw InvalidInput("non-finite template vertex");
    if (skin_weights.rows() != nv || skin_weights.cols() != nj) throw InvalidInput("skin weight shape mismatch");
    if (joint_regressor.rows() != nj || joint_regressor.cols() != nv) throw InvalidInput("regressor shape mismatch");
    for (int i = 0; i < nv; ++i) {
      if ((skin_weights.row(i).array() < 0.0).any() || std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6) {
        throw InvalidInput("skin weights row " + std::to_string(i) + " not stochastic");
      }
    }
    for (int j = 0; j < nj; ++j) {
      if (std::abs(joint_regressor.row(j).sum() - 1.0) > 1e-6) {
        throw InvalidInput("regressor row " + std::to_string(j) + " does not sum to one");
      }
    }
    for (const auto& d : shape_dirs) {
      if (d.cols() != nv || !d.allFinite()) throw InvalidInput("bad shape direction");
    }
    std::vector<bool> used(nv, false);
    for (const auto& f : faces) {
      for (int c = 0; c < 3; ++c) {
        if (f[c] < 0 || f[c] >= nv) throw InvalidInput("face index out of range");
        used[f[c]] = true;
      }
    }
    if (std::find(used.begin(), used.end(), false) != used.end()) {
      throw InvalidInput("vertex not referenced by any face");
    }
  }
};

// Per-joint axis-angle rotations, 3 x J, radians.
struct PoseParams {
  Eigen::Matrix3Xd theta;

  static PoseParams zero(int joints) { return {Eigen::Matrix3Xd::Zero(3, joints)}; }

  // Wraps every joint to magnitude <= pi; rejects non-finite input.
  void canonicalize() {
    if (!theta.allFinite()) throw InvalidInput("non-finite pose parameter");
    for (Eigen::Index j = 0; j < theta.cols(); ++j) theta.col(j) = canonical_axis_angle(theta.col(j));
  }
};

struct ShapeParams {
  static constexpr double kLimit = 5.0;
  Eigen::VectorXd beta;

  static ShapeParams zero(int n) { return {Eigen::VectorXd::Zero(n)}; }

  void clamp() {
    if (!beta.allFinite()) throw InvalidInput("non-finite shape parameter");
    beta = beta.cwiseMax(-kLimit).cwiseMin(kLimit);
  }
};

struct GlobalPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate() const {
    if (!is_rotation(rotation)) throw InvalidInput("global rotation is not a proper rotation");
    if (!translation.allFinite()) throw InvalidInput("non-finite global translation");
  }
};

// Joint transforms and shaped rest geometry for one (theta, beta). Everything
// is in pelvis-local coordinates (shaped pelvis at the origin).
struct PoseState {
  Eigen::Matrix3Xd shaped_vertices;             // rest geometry after blendshapes, centered
  std::vector<Eigen::Vector3d> shaped_joints;   // centered rest joint positions
  std::vector<Eigen::Matrix3d> rotation;        // accumulated joint rotation
  std::vector<Eigen::Vector3d> position;        // posed joint position
  std::vector<Eigen::Vector3d> displacement;    // position - shaped_joints
  std::vector<bool> moved;                      // false when the bone transform is exactly identity
  std::vector<Eigen::Matrix3d> local_jacobian;  // left Jacobian of each joint's own rotation
};

struct TemplateOptions {
  int ring_segments = 8;   // vertices per ring
  int ring_scale = 1;      // multiplies the ring count of every bone capsule
};

// Procedural low-poly humanoid: one capsule per joint, 16 joints, z up,
// facing +y, person's right on +x. Default options give 512 vertices.
inline BodyTemplate make_default_template(const TemplateOptions& opt = {}) {
  BodyTemplate t;
  auto& sk = t.skeleton;
  sk.names = {"pelvis", "spine", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
              "r_elbow", "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle"};
  sk.parent = {kNoParent, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14};
  const std::vector<Eigen::Vector3d> pos = {
      {0.0, 0.0, 0.0},    {0.0, 0.0, 0.25},    {0.0, 0.0, 0.50},    {0.0, 0.0, 0.62},
      {-0.18, 0.0, 0.45}, {-0.46, 0.0, 0.45},  {-0.71, 0.0, 0.45},  {0.18, 0.0, 0.45},
      {0.46, 0.0, 0.45},  {0.71, 0.0, 0.45},   {-0.09, 0.0, -0.06}, {-0.09, 0.0, -0.48},
      {-0.09, 0.0, -0.90}, {0.09, 0.0, -0.06}, {0.09, 0.0, -0.48},  {0.09, 0.0, -0.90}};
  const int nj = static_cast<int>(pos.size());
  sk.rest_offsets.resize(nj);
  for (int j = 0; j < nj; ++j) {
    sk.rest_offsets[j] = sk.parent[j] == kNoParent ? pos[j] : Eigen::Vector3d(pos[j] - pos[sk.parent[j]]);
  }

  struct Capsule {
    Eigen::Vector3d end;
    double r0x, r0y, r1x, r1y;
    int rings;
  };
  // Capsule j starts at joint j and is skinned to it.
  const std::vector<Capsule> caps = {
      {pos[1], 0.15, 0.10, 0.15, 0.10, 5},
      {pos[2], 0.15, 0.10, 0.18, 0.11, 6},
      {pos[3], 0.055, 0.055, 0.055, 0.055, 1},
      {{0.0, 0.0, 0.86}, 0.07, 0.07, 0.09, 0.09, 4},
      {pos[5], 0.055, 0.055, 0.045, 0.045, 4},
      {pos[6], 0.045, 0.045, 0.035, 0.035, 4},
      {{-0.83, 0.0, 0.45}, 0.035, 0.035, 0.03, 0.03, 2},
      {pos[8], 0.055, 0.055, 0.045, 0.045, 4},
      {pos[9], 0.045, 0.045, 0.035, 0.035, 4},
      {{0.83, 0.0, 0.45}, 0.035, 0.035, 0.03, 0.03, 2},
      {pos[11], 0.08, 0.08, 0.06, 0.06, 5},
      {pos[12], 0.055, 0.055, 0.045, 0.045, 5},
      {{-0.09, 0.16, -0.97}, 0.04, 0.04, 0.035, 0.035, 2},
      {pos[14], 0.08, 0.08, 0.06, 0.06, 5},
      {pos[15], 0.055, 0.055, 0.045, 0.045, 5},
      {{0.09, 0.16, -0.97}, 0.04, 0.04, 0.035, 0.035, 2}};

  const int seg = opt.ring_segments;
  if (seg < 3 || opt.ring_scale < 1) throw InvalidInput("bad template resolution");
  int nv = 0;
  for (const auto& c : caps) nv += c.rings * opt.ring_scale * seg + 2;

  t.vertices_rest.resize(3, nv);
  t.skin_weights = Eigen::MatrixXd::Zero(nv, nj);
  t.joint_regressor = Eigen::MatrixXd::Zero(nj, nv);
  Eigen::Matrix3Xd radial = Eigen::Matrix3Xd::Zero(3, nv);
  std::vector<int> owner(nv);

  int next = 0;
  auto add_vertex = [&](const Eigen::Vector3d& p, const Eigen::Vector3d& rad, int joint, double tpar) {
    // + 0.0 turns negative zeros into positive ones so rest outputs compare bitwise.
    t.vertices_rest.col(next) = p.array() + 0.0;
    radial.col(next) = rad;
    owner[next] = joint;
    const int par = sk.parent[joint];
    const double wp = par == kNoParent ? 0.0 : 0.5 * std::max(0.0, 1.0 - tpar / 0.35);
    t.skin_weights(next, joint) = 1.0 - wp;
    if (par != kNoParent) t.skin_weights(next, par) += wp;
    return next++;
  };

  for (int j = 0; j < nj; ++j) {
    const auto& c = caps[j];
    const Eigen::Vector3d start = pos[j];
    const Eigen::Vector3d axis = (c.end - start).normalized();
    const Eigen::Vector3d ref = std::abs(axis.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    const Eigen::Vector3d u = (ref - ref.dot(axis) * axis).normalized();
    const Eigen::Vector3d v = axis.cross(u);
    const double len = (c.end - start).norm();
    const int rings = c.rings * opt.ring_scale;

    std::vector<int> ring_start(rings);
    for (int r = 0; r < rings; ++r) {
      const double tp = static_cast<double>(r) / rings;
      const double rx = c.r0x + (c.r1x - c.r0x) * tp;
      const double ry = c.r0y + (c.r1y - c.r0y) * tp;
      const Eigen::Vector3d center = start + axis * (len * tp);
      ring_start[r] = next;
      for (int k = 0; k < seg; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / seg;
        const Eigen::Vector3d rad = rx * std::cos(phi) * u + ry * std::sin(phi) * v;
        const int idx = add_vertex(center + rad, rad, j, tp);
        if (r == 0) t.joint_regressor(j, idx) = 1.0 / seg;
      }
    }
    const int cap0 = add_vertex(start - axis * (0.5 * std::min(c.r0x, c.r0y)), Eigen::Vector3d::Zero(), j, 0.0);
    const int cap1 = add_vertex(c.end, Eigen::Vector3d::Zero(), j, 1.0);

    for (int r = 0; r + 1 < rings; ++r) {
      for (int k = 0; k < seg; ++k) {
        const int a = ring_start[r] + k, b = ring_start[r] + (k + 1) % seg;
        const int cc = ring_start[r + 1] + (k + 1) % seg, d = ring_start[r + 1] + k;
        t.faces.emplace_back(a, b, cc);
        t.faces.emplace_back(a, cc, d);
      }
    }
    for (int k = 0; k < seg; ++k) {
      t.faces.emplace_back(cap0, ring_start[0] + (k + 1) % seg, ring_start[0] + k);
      t.faces.emplace_back(ring_start[rings - 1] + k, ring_start[rings - 1] + (k + 1) % seg, cap1);
    }
  }

  // Blendshapes: height, girth, arm length, leg length.
  t.shape_dirs.assign(4, Eigen::Matrix3Xd::Zero(3, nv));
  for (int i = 0; i < nv; ++i) {
    const Eigen::Vector3d p = t.vertices_rest.col(i);
    t.shape_dirs[0](2, i) = 0.05 * p.z();
    t.shape_dirs[1].col(i) = 0.08 * radial.col(i);
    const int o = owner[i];
    if (o >= 4 && o <= 9) {
      const double sx = o <= 6 ? pos[4].x() : pos[7].x();
      t.shape_dirs[2](0, i) = 0.06 * (p.x() - sx);
    } else if (o >= 10) {
      t.shape_dirs[3](2, i) = 0.06 * (p.z() - pos[10].z());
    }
  }
  return t;
}

inline Eigen::Matrix3Xd world_mesh(const Eigen::Matrix3Xd& local, const GlobalPose& g) {
  g.validate();
  return (g.rotation * local).colwise() + g.translation;
}

inline Eigen::Matrix3Xd regress_joints(const Eigen::MatrixXd& regressor, const Eigen::Matrix3Xd& local,
                                       const GlobalPose& g) {
  g.validate();
  if (regressor.cols() != local.cols()) throw InvalidInput("regressor/mesh size mismatch");
  const Eigen::Matrix3Xd joints_local = local * regressor.transpose();
  return (g.rotation * joints_local).colwise() + g.translation;
}

// Skinned articulated body. Immutable after construction; all queries are
// pure and may run concurrently.
class BodyModel {
 public:
  struct Influence {
    int joint;
    double weight;
  };

  explicit BodyModel(BodyTemplate tmpl) : tmpl_(std::move(tmpl)) {
    tmpl_.validate();
    const int nv = tmpl_.vertex_count();
    const int nj = tmpl_.joint_count();
    influences_.resize(nv);
    dominant_.resize(nv);
    for (int i = 0; i < nv; ++i) {
      int best = 0;
      for (int j = 0; j < nj; ++j) {
        const double w = tmpl_.skin_weights(i, j);
        if (w > 0.0) influences_[i].push_back({j, w});
        if (w > tmpl_.skin_weights(i, best)) best = j;
      }
      dominant_[i] = best;
    }
    ancestor_.assign(nj, std::vector<bool>(nj, false));
    for (int j = 0; j < nj; ++j) {
      for (int a = j; a != kNoParent; a = tmpl_.skeleton.parent[a]) ancestor_[a][j] = true;
    }
    rest_joints_ = tmpl_.skeleton.rest_positions();
    vertex_faces_.resize(nv);
    for (int f = 0; f < static_cast<int>(tmpl_.faces.size()); ++f) {
      for (int c = 0; c < 3; ++c) vertex_faces_[tmpl_.faces[f][c]].push_back(f);
    }
  }

  const BodyTemplate& body_template() const { return tmpl_; }
  int vertex_count() const { return tmpl_.vertex_count(); }
  int joint_count() const { return tmpl_.joint_count(); }
  int shape_count() const { return tmpl_.shape_count(); }
  const std::vector<Eigen::Vector3i>& faces() const { return tmpl_.faces; }
  const Eigen::MatrixXd& regressor() const { return tmpl_.joint_regressor; }
  const std::vector<Influence>& influences(int vertex) const { return influences_[vertex]; }
  // Joint with the largest skin weight (ties to the lower index).
  int dominant_joint(int vertex) const { return dominant_[vertex]; }
  const std::vector<int>& dominant_joints() const { return dominant_; }
  const std::vector<int>& faces_of_vertex(int vertex) const { return vertex_faces_[vertex]; }
  // True when joint `a` is `j` or one of its ancestors.
  bool affects(int a, int j) const { return ancestor_[a][j]; }
  int joint_index(const std::string& name) const {
    const auto& n = tmpl_.skeleton.names;
    const auto it = std::find(n.begin(), n.end(), name);
    if (it == n.end()) throw InvalidInput("unknown joint " + name);
    return static_cast<int>(it - n.begin());
  }

  PoseState forward(const PoseParams& pose, const ShapeParams& shape) const {
    check_inputs(pose, shape);
    const int nj = joint_count();
    PoseState s;
    s.shaped_vertices = tmpl_.vertices_rest;
    std::vector<Eigen::Vector3d> joints = rest_joints_;
    bool shaped = false;
    for (int b = 0; b < shape_count(); ++b) {
      const double coeff = std::clamp(shape.beta[b], -ShapeParams::kLimit, ShapeParams::kLimit);
      if (coeff == 0.0) continue;
      shaped = true;
      s.shaped_vertices += coeff * tmpl_.shape_dirs[b];
    }
    if (shaped) {
      // Rest joints follow the regressed shape displacement.
      const Eigen::Matrix3Xd dj = (s.shaped_vertices - tmpl_.vertices_rest) * tmpl_.joint_regressor.transpose();
      for (int j = 0; j < nj; ++j) joints[j] += dj.col(j);
    }
    const Eigen::Vector3d center = joints[0];
    if (!center.isZero(0.0)) {
      s.shaped_vertices.colwise() -= center;
      for (auto& j : joints) j -= center;
    }
    s.shaped_joints = std::move(joints);
    repose(s, pose);
    return s;
  }

  // Re-articulates `s` for a new pose, keeping its shaped rest geometry.
  void repose(PoseState& s, const PoseParams& pose) const {
    if (pose.theta.cols() != joint_count()) throw InvalidInput("pose has wrong joint count");
    const int nj = joint_count();
    s.rotation.resize(nj);
    s.position.resize(nj);
    s.displacement.resize(nj);
    s.moved.resize(nj);
    s.local_jacobian.resize(nj);
    for (int j = 0; j < nj; ++j) {
      const Eigen::Vector3d w = pose.theta.col(j);
      const Eigen::Matrix3d local = axis_angle_to_matrix(w);
      s.local_jacobian[j] = left_jacobian(w);
      const int p = tmpl_.skeleton.parent[j];
      if (p == kNoParent) {
        s.rotation[j] = local;
        s.displacement[j].setZero();
      } else {
        s.rotation[j] = s.rotation[p] * local;
        const Eigen::Vector3d bone = s.shaped_joints[j] - s.shaped_joints[p];
        s.displacement[j] = s.displacement[p];
        if (s.moved[p]) s.displacement[j] += (s.rotation[p] - Eigen::Matrix3d::Identity()) * bone;
      }
      s.position[j] = s.shaped_joints[j] + s.displacement[j];
      s.moved[j] = !(s.rotation[j] == Eigen::Matrix3d::Identity() && s.displacement[j].isZero(0.0));
    }
  }

  // Bone-j transform applied to the shaped vertex (pelvis-local).
  static Eigen::Vector3d bone_point(const PoseState& s, int joint, const Eigen::Vector3d& shaped_vertex) {
    return s.rotation[joint] * (shaped_vertex - s.shaped_joints[joint]) + s.position[joint];
  }

  Eigen::Vector3d posed_vertex(const PoseState& s, int i) const {
    const Eigen::Vector3d rest = s.shaped_vertices.col(i);
    Eigen::Vector3d out = rest;
    for (const auto& inf : influences_[i]) {
      if (!s.moved[inf.joint]) continue;
      const Eigen::Vector3d delta =
          (s.rotation[inf.joint] - Eigen::Matrix3d::Identity()) * (rest - s.shaped_joints[inf.joint]) +
          s.displacement[inf.joint];
      out += inf.weight * delta;
    }
    return out;
  }

  Eigen::Matrix3Xd posed_vertices(const PoseState& s) const {
    Eigen::Matrix3Xd out(3, vertex_count());
    for (int i = 0; i < vertex_count(); ++i) out.col(i) = posed_vertex(s, i);
    return out;
  }

  // d(local vertex i)/d(theta), 3 x 3J, column 3a+k is the derivative with
  // respect to component k of joint a.
  Eigen::Matrix3Xd vertex_jacobian(const PoseState& s, int i) const {
    const int nj = joint_count();
    Eigen::Matrix3Xd jac = Eigen::Matrix3Xd::Zero(3, 3 * nj);
    const Eigen::Vector3d rest = s.shaped_vertices.col(i);
    for (const auto& inf : influences_[i]) {
      const Eigen::Vector3d x = bone_point(s, inf.joint, rest);
      for (int a = inf.joint; a != kNoParent; a = tmpl_.skeleton.parent[a]) {
        const int p = tmpl_.skeleton.parent[a];
        const Eigen::Matrix3d axes =
            p == kNoParent ? s.local_jacobian[a] : Eigen::Matrix3d(s.rotation[p] * s.local_jacobian[a]);
        const Eigen::Vector3d arm = x - s.position[a];
        for (int k = 0; k < 3; ++k) jac.col(3 * a + k) += inf.weight * axes.col(k).cross(arm);
      }
    }
    return jac;
  }

  // grad += vertex_jacobian(s, i)^T * dir, without forming the Jacobian.
  void add_vertex_gradient(const PoseState& s, int i, const Eigen::Vector3d& dir, Eigen::VectorXd& grad) const {
    const Eigen::Vector3d rest = s.shaped_vertices.col(i);
    for (const auto& inf : influences_[i]) {
      const Eigen::Vector3d x = bone_point(s, inf.joint, rest);
      for (int a = inf.joint; a != kNoParent; a = tmpl_.skeleton.parent[a]) {
        const int p = tmpl_.skeleton.parent[a];
        const Eigen::Vector3d t = inf.weight * (x - s.position[a]).cross(dir);
        const Eigen::Vector3d g = p == kNoParent ? Eigen::Vector3d(s.local_jacobian[a].transpose() * t)
                                                 : Eigen::Vector3d(s.local_jacobian[a].transpose() * (s.rotation[p].transpose() * t));
        grad.segment<3>(3 * a) += g;
      }
    }
  }

  Eigen::Matrix3Xd skin_mesh(const PoseParams& pose, const ShapeParams& shape) const {
    return posed_vertices(forward(pose, shape));
  }

  Eigen::Matrix3Xd regress_joints(const Eigen::Matrix3Xd& local, const GlobalPose& g) const {
    return proxhmr::regress_joints(tmpl_.joint_regressor, local, g);
  }

  // Shaped, centered rest joint positions (no pose applied).
  std::vector<Eigen::Vector3d> rest_joints() const { return rest_joints_; }

 private:
  void check_inputs(const PoseParams& pose, const ShapeParams& shape) const {
    if (pose.theta.cols() != joint_count()) throw InvalidInput("pose has wrong joint count");
    if (shape.beta.size() != shape_count()) throw InvalidInput("shape has wrong coefficient count");
    if (!pose.theta.allFinite() || !shape.beta.allFinite()) throw InvalidInput("non-finite body parameters");
  }

  BodyTemplate tmpl_;
  std::vector<std::vector<Influence>> influences_;
  std::vector<int> dominant_;
  std::vector<std::vector<bool>> ancestor_;
  std::vector<Eigen::Vector3d> rest_joints_;
  std::vector<std::vector<int>> vertex_faces_;
};

}  // namespace proxhmr
