#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <vector>

#include "proxhmr/body_model.hpp"
#include "proxhmr/camera.hpp"
#include "proxhmr/error.hpp"
#include "proxhmr/json_eigen.hpp"
#include "proxhmr/visibility.hpp"

namespace proxhmr {

// Equal-weight Gaussian mixture over x = [vec(theta); beta] with a shared
// diagonal covariance. Used as the density generator of a belief.
class BeliefMixture {
 public:
  BeliefMixture() = default;
  BeliefMixture(std::vector<Eigen::VectorXd> means, Eigen::VectorXd sigma)
      : means_(std::move(means)), sigma_(std::move(sigma)) {
    validate();
    inv_sigma_ = sigma_.cwiseInverse();
    scaled_.resize(sigma_.size(), static_cast<Eigen::Index>(means_.size()));
    for (std::size_t c = 0; c < means_.size(); ++c) scaled_.col(c) = means_[c].cwiseProduct(inv_sigma_);
    log_norm_ = -std::log(static_cast<double>(means_.size())) - sigma_.array().log().sum() -
                0.5 * static_cast<double>(sigma_.size()) * std::log(2.0 * std::numbers::pi);
  }

  static Eigen::VectorXd flatten(const PoseParams& pose, const ShapeParams& shape) {
    Eigen::VectorXd x(pose.theta.size() + shape.beta.size());
    x.head(pose.theta.size()) = Eigen::Map<const Eigen::VectorXd>(pose.theta.data(), pose.theta.size());
    x.tail(shape.beta.size()) = shape.beta;
    return x;
  }

  void validate() const {
    if (means_.empty()) throw InvalidInput("mixture needs at least one component");
    if (sigma_.size() == 0 || !(sigma_.array() > 0.0).all() || !sigma_.allFinite())
      throw InvalidInput("mixture spreads must be positive");
    for (const auto& m : means_) {
      if (m.size() != sigma_.size() || !m.allFinite()) throw InvalidInput("bad mixture component");
    }
  }

  int dimension() const { return static_cast<int>(sigma_.size()); }
  int component_count() const { return static_cast<int>(means_.size()); }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const Eigen::VectorXd& sigma() const { return sigma_; }

  double log_density(const Eigen::VectorXd& x) const { return evaluate(x, nullptr); }

  // log p(x), with d log p / dx written to `grad` when given.
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (x.size() != sigma_.size()) throw InvalidInput("mixture query has wrong dimension");
    // Components in whitened coordinates: e_c = -|z - mu_c / sigma|^2 / 2.
    const Eigen::VectorXd z = x.cwiseProduct(inv_sigma_);
    thread_local Eigen::MatrixXd diff;
    diff = scaled_.colwise() - z;
    const Eigen::RowVectorXd e = -0.5 * diff.colwise().squaredNorm();
    const double top = e.maxCoeff();
    const Eigen::RowVectorXd w = (e.array() - top).exp().matrix();
    const double total = w.sum();
    if (grad) *grad = (scaled_ * w.transpose() / total - z).cwiseProduct(inv_sigma_);
    return log_norm_ + top + std::log(total);
  }

 private:
  std::vector<Eigen::VectorXd> means_;
  Eigen::VectorXd sigma_;
  Eigen::VectorXd inv_sigma_;
  Eigen::MatrixXd scaled_;  // means divided by sigma, one column per component
  double log_norm_ = 0.0;
};

struct BeliefSample {
  PoseParams pose;
  ShapeParams shape;
  GlobalPose global;
  double log_density = 0.0;
};

struct PoseBelief {
  static constexpr int kFormatVersion = 1;
  std::vector<BeliefSample> samples;
  BeliefMixture generator;
  int ml_index = 0;

  int size() const { return static_cast<int>(samples.size()); }
  const BeliefSample& ml() const { return samples.at(ml_index); }

  // Flags the sample with the largest stored log-density (lowest index on ties).
  void refresh_ml() {
    if (samples.empty()) throw InvalidInput("empty belief");
    ml_index = 0;
    for (int s = 1; s < size(); ++s) {
      if (samples[s].log_density > samples[ml_index].log_density) ml_index = s;
    }
  }

  // Recomputes every stored log-density from the generator, then the ML flag.
  void reevaluate() {
    for (auto& s : samples) s.log_density = generator.log_density(BeliefMixture::flatten(s.pose, s.shape));
    refresh_ml();
  }

  void validate() const {
    if (samples.empty()) throw InvalidInput("empty belief");
    if (ml_index < 0 || ml_index >= size()) throw InvalidInput("ML index out of range");
    for (const auto& s : samples) {
      if (!std::isfinite(s.log_density)) throw InvalidInput("non-finite log-density");
      if (!s.pose.theta.allFinite() || !s.shape.beta.allFinite()) throw InvalidInput("non-finite sample");
      s.global.validate();
    }
  }
};

// World-frame mesh and joints of the ML sample.
inline std::pair<Eigen::Matrix3Xd, Eigen::Matrix3Xd> ml_mesh(const BodyModel& model, const PoseBelief& belief) {
  if (belief.samples.empty()) throw InvalidInput("empty belief");
  const auto& s = belief.ml();
  const Eigen::Matrix3Xd local = model.skin_mesh(s.pose, s.shape);
  return {world_mesh(local, s.global), model.regress_joints(local, s.global)};
}

enum class VarianceWeighting { density, uniform };

// Self-normalized sample weights from the stored log-densities.
inline std::vector<double> sample_weights(const PoseBelief& belief, VarianceWeighting mode) {
  const int n = belief.size();
  std::vector<double> w(n, 1.0 / n);
  if (mode == VarianceWeighting::uniform) return w;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& s : belief.samples) top = std::max(top, s.log_density);
  double total = 0.0;
  for (int k = 0; k < n; ++k) total += (w[k] = std::exp(belief.samples[k].log_density - top));
  for (auto& x : w) x /= total;
  return w;
}

// Per-vertex positional variance (trace of the vertex covariance), m^2,
// evaluated on pelvis-local meshes.
inline Eigen::VectorXd vertex_variance(const BodyModel& model, const PoseBelief& belief,
                                       VarianceWeighting mode = VarianceWeighting::density) {
  if (belief.samples.empty()) throw InvalidInput("empty belief");
  const auto w = sample_weights(belief, mode);
  const int nv = model.vertex_count();
  // Deviations are taken from the first sample so identical samples give an
  // exact zero regardless of weight rounding.
  const Eigen::Matrix3Xd ref = model.skin_mesh(belief.samples[0].pose, belief.samples[0].shape);
  std::vector<Eigen::Matrix3Xd> dev(belief.samples.size(), Eigen::Matrix3Xd::Zero(3, nv));
  Eigen::Matrix3Xd mean = Eigen::Matrix3Xd::Zero(3, nv);
  for (int k = 1; k < belief.size(); ++k) {
    dev[k] = model.skin_mesh(belief.samples[k].pose, belief.samples[k].shape) - ref;
    mean += w[k] * dev[k];
  }
  Eigen::VectorXd sigma = Eigen::VectorXd::Zero(nv);
  for (int k = 0; k < belief.size(); ++k) {
    if (w[k] == 0.0) continue;
    sigma += w[k] * (dev[k] - mean).colwise().squaredNorm().transpose();
  }
  return sigma.cwiseMax(0.0);
}

struct EstimatorNoise {
  double sigma_visible = 0.05;      // rad, joints mostly seen by the camera
  double sigma_hidden = 0.5;        // rad, joints mostly occluded or out of frame
  double depth_bias_sigma = 0.15;   // m, along the camera-to-pelvis ray
  int samples = 64;
  double visible_fraction = 0.3;    // a joint counts as seen above this fraction
  double kernel_scale = 1.0;        // mixture kernel width relative to the joint spread

  void validate() const {
    if (!(sigma_visible >= 0.0) || !(sigma_hidden >= 0.0) || !(depth_bias_sigma >= 0.0))
      throw InvalidInput("estimator spreads must be non-negative");
    if (samples < 1) throw InvalidInput("estimator needs at least one sample");
    if (!(kernel_scale > 0.0)) throw InvalidInput("kernel scale must be positive");
    if (!(visible_fraction >= 0.0 && visible_fraction <= 1.0)) throw InvalidInput("visible fraction outside [0, 1]");
  }
};

// Fraction of each joint's dominantly skinned vertices visible from `cam`.
inline std::vector<double> joint_visibility(const BodyModel& model, const Eigen::Matrix3Xd& world_vertices,
                                            const Camera& cam) {
  const auto mask = zbuffer_visibility(world_vertices, model.faces(), cam);
  std::vector<double> seen(model.joint_count(), 0.0), total(model.joint_count(), 0.0);
  for (int i = 0; i < model.vertex_count(); ++i) {
    const int j = model.dominant_joint(i);
    total[j] += 1.0;
    if (mask.visible[i]) seen[j] += 1.0;
  }
  for (int j = 0; j < model.joint_count(); ++j) seen[j] = total[j] > 0.0 ? seen[j] / total[j] : 0.0;
  return seen;
}

// Stand-in for a camera-conditioned probabilistic estimator. The root
// rotation and the global rotation are reported exactly; every other joint
// gets angular noise depending on how much of it the camera sees, and the
// global position is biased along the viewing ray.
inline PoseBelief simulate_camera_estimate(const BodyModel& model, const PoseParams& gt_pose,
                                           const ShapeParams& gt_shape, const GlobalPose& gt_global,
                                           const Camera& cam, std::uint64_t seed, const EstimatorNoise& noise = {}) {
  noise.validate();
  cam.validate();
  gt_global.validate();
  const int nj = model.joint_count();
  const Eigen::Matrix3Xd gt_world = world_mesh(model.skin_mesh(gt_pose, gt_shape), gt_global);
  const auto seen = joint_visibility(model, gt_world, cam);
  std::vector<double> spread(nj, 0.0);
  for (int j = 1; j < nj; ++j) spread[j] = seen[j] > noise.visible_fraction ? noise.sigma_visible : noise.sigma_hidden;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  PoseParams mode = gt_pose;
  for (int j = 1; j < nj; ++j) {
    for (int k = 0; k < 3; ++k) mode.theta(k, j) += spread[j] * unit(rng);
  }
  GlobalPose global = gt_global;
  Eigen::Vector3d ray = gt_global.translation - cam.translation;
  if (ray.norm() > 0.0) ray.normalize();
  global.translation += noise.depth_bias_sigma * unit(rng) * ray;

  PoseBelief belief;
  belief.samples.resize(noise.samples);
  std::vector<Eigen::VectorXd> means;
  for (int s = 0; s < noise.samples; ++s) {
    auto& smp = belief.samples[s];
    smp.pose = mode;
    if (s > 0) {
      for (int j = 1; j < nj; ++j) {
        for (int k = 0; k < 3; ++k) smp.pose.theta(k, j) += spread[j] * unit(rng);
      }
    }
    smp.shape = gt_shape;
    smp.global = global;
    means.push_back(BeliefMixture::flatten(smp.pose, smp.shape));
  }
  constexpr double kSpreadFloor = 1e-3;
  Eigen::VectorXd sigma = Eigen::VectorXd::Constant(3 * nj + model.shape_count(), kSpreadFloor);
  for (int j = 0; j < nj; ++j) {
    sigma.segment(3 * j, 3).setConstant(std::max(kSpreadFloor, noise.kernel_scale * spread[j]));
  }
  belief.generator = BeliefMixture(std::move(means), sigma);
  belief.reevaluate();
  return belief;
}

inline nlohmann::json belief_to_json(const PoseBelief& b) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : b.samples) {
    samples.push_back({{"theta", to_json_cols(s.pose.theta)},
                       {"beta", to_json_vecx(s.shape.beta)},
                       {"rotation", to_json_mat3(s.global.rotation)},
                       {"translation", to_json_vec(s.global.translation)},
                       {"log_density", s.log_density}});
  }
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : b.generator.means()) means.push_back(to_json_vecx(m));
  return {{"format", "proxhmr-belief"},
          {"version", PoseBelief::kFormatVersion},
          {"ml_index", b.ml_index},
          {"samples", samples},
          {"generator", {{"means", means}, {"sigma", to_json_vecx(b.generator.sigma())}}}};
}

inline PoseBelief belief_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "proxhmr-belief") throw FormatError("not a belief document");
    if (j.at("version").get<int>() != PoseBelief::kFormatVersion) throw FormatError("unsupported belief version");
    PoseBelief b;
    for (const auto& s : j.at("samples")) {
      BeliefSample smp;
      smp.pose.theta = cols_from_json(s.at("theta"));
      smp.shape.beta = vecx_from_json(s.at("beta"));
      smp.global.rotation = mat3_from_json(s.at("rotation"));
      smp.global.translation = vec3_from_json(s.at("translation"));
      smp.log_density = s.at("log_density").get<double>();
      b.samples.push_back(std::move(smp));
    }
    std::vector<Eigen::VectorXd> means;
    for (const auto& m : j.at("generator").at("means")) means.push_back(vecx_from_json(m));
    b.generator = BeliefMixture(std::move(means), vecx_from_json(j.at("generator").at("sigma")));
    b.ml_index = j.at("ml_index").get<int>();
    b.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed belief: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid belief: ") + e.what());
  }
}

}  // namespace proxhmr
