#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <vector>

#include "proxhmr/body_model.hpp"
#include "proxhmr/error.hpp"
#include "proxhmr/pose_belief.hpp"
#include "proxhmr/sensor_sim.hpp"

namespace proxhmr {

struct FusionConfig {
  double alpha = 0.01;
  double step_size = 1e-2;
  int max_iterations = 100;
  double tolerance = 1e-6;      // stop when the loss changes by less than this
  int refresh_period = 5;       // iterations between correspondence updates
  double residual_unit = 1000.0;  // residuals enter the data term in millimeters
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  bool record_trace = false;

  void validate() const {
    if (!(alpha >= 0.0)) throw InvalidInput("alpha must be non-negative");
    if (!(step_size > 0.0)) throw InvalidInput("step size must be positive");
    if (max_iterations < 1) throw InvalidInput("need at least one iteration");
    if (refresh_period < 1) throw InvalidInput("refresh period must be positive");
    if (!(residual_unit > 0.0)) throw InvalidInput("residual unit must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw InvalidInput("bad moment decay");
  }
};

struct Correspondence {
  int index = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// Exact linear scan; ties go to the lowest index.
inline Correspondence nearest_vertex(const Eigen::Matrix3Xd& v, const Eigen::Vector3d& m) {
  if (v.cols() == 0) throw InvalidInput("empty vertex set");
  int best = 0;
  double best_d = (v.col(0) - m).squaredNorm();
  for (Eigen::Index i = 1; i < v.cols(); ++i) {
    const double d = (v.col(i) - m).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return {best, v.col(best)};
}

// Uniform hash grid over a vertex set; answers the same queries as
// nearest_vertex, including the tie rule.
class VertexGrid {
 public:
  explicit VertexGrid(const Eigen::Matrix3Xd& v, double cell = 0.05) : v_(v), cell_(cell) {
    if (v.cols() == 0) throw InvalidInput("empty vertex set");
    if (!(cell > 0.0)) throw InvalidInput("grid cell must be positive");
    lo_ = v.rowwise().minCoeff();
    const Eigen::Vector3d hi = v.rowwise().maxCoeff();
    for (Eigen::Index i = 0; i < v.cols(); ++i) cells_[key(coord(v.col(i)))].push_back(static_cast<int>(i));
    const Eigen::Vector3d span = (hi - lo_) / cell_;
    extent_ = static_cast<int>(std::ceil(span.maxCoeff())) + 1;
  }

  Correspondence nearest(const Eigen::Vector3d& m) const {
    const Eigen::Vector3i c = coord(m);
    // Distance from the query to the grid's bounding cells bounds how far the
    // shell search has to go.
    const Eigen::Vector3i far = (c.array().abs() + extent_ + 1).matrix();
    const int max_r = far.maxCoeff();
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= max_r; ++r) {
      for (int dx = -r; dx <= r; ++dx) {
        for (int dy = -r; dy <= r; ++dy) {
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const auto it = cells_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
            if (it == cells_.end()) continue;
            for (const int i : it->second) {
              const double d = (v_.col(i) - m).squaredNorm();
              if (d < best_d || (d == best_d && i < best)) {
                best_d = d;
                best = i;
              }
            }
          }
        }
      }
      // Unvisited cells are at least r cells away.
      if (best >= 0 && std::sqrt(best_d) < r * cell_) break;
    }
    return {best, v_.col(best)};
  }

 private:
  Eigen::Vector3i coord(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = ((p - lo_) / cell_).array().floor();
    return q.cast<int>();
  }
  static long long key(const Eigen::Vector3i& c) {
    return (static_cast<long long>(c.x() + (1 << 20)) << 42) ^ (static_cast<long long>(c.y() + (1 << 20)) << 21) ^
           static_cast<long long>(c.z() + (1 << 20));
  }

  const Eigen::Matrix3Xd& v_;
  double cell_;
  Eigen::Vector3d lo_;
  int extent_ = 0;
  std::unordered_map<long long, std::vector<int>> cells_;
};

inline Eigen::Matrix3Xd sample_world_mesh(const BodyModel& model, const BeliefSample& s) {
  return world_mesh(model.skin_mesh(s.pose, s.shape), s.global);
}

// Mean distance from each measurement to its nearest vertex.
inline double mean_correspondence_distance(const Eigen::Matrix3Xd& v, const std::vector<Measurement>& ms) {
  if (ms.empty()) return 0.0;
  double total = 0.0;
  for (const auto& m : ms) total += (nearest_vertex(v, m.point).point - m.point).norm();
  return total / static_cast<double>(ms.size());
}

// Closest point on triangle abc to p, by Voronoi region of the triangle.
inline Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                                 const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double surface_distance(const Eigen::Matrix3Xd& v, const std::vector<Eigen::Vector3i>& faces,
                               const Eigen::Vector3d& p) {
  if (faces.empty()) throw InvalidInput("mesh has no faces");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : faces) {
    const Eigen::Vector3d q = closest_point_on_triangle(p, v.col(f[0]), v.col(f[1]), v.col(f[2]));
    best = std::min(best, (q - p).squaredNorm());
  }
  return std::sqrt(best);
}

inline double mean_surface_distance(const Eigen::Matrix3Xd& v, const std::vector<Eigen::Vector3i>& faces,
                                    const std::vector<Measurement>& ms) {
  if (ms.empty()) return 0.0;
  double total = 0.0;
  for (const auto& m : ms) total += surface_distance(v, faces, m.point);
  return total / static_cast<double>(ms.size());
}

// Density-weighted mean correspondence residual (nearest vertex minus
// measurement) over the belief samples.
inline Eigen::Vector3d global_offset(const BodyModel& model, const PoseBelief& belief,
                                     const std::vector<Measurement>& ms,
                                     VarianceWeighting mode = VarianceWeighting::density) {
  if (ms.empty()) return Eigen::Vector3d::Zero();
  const auto w = sample_weights(belief, mode);
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  for (int s = 0; s < belief.size(); ++s) {
    if (w[s] == 0.0) continue;
    const Eigen::Matrix3Xd v = sample_world_mesh(model, belief.samples[s]);
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    for (const auto& m : ms) r += nearest_vertex(v, m.point).point - m.point;
    out += w[s] * r / static_cast<double>(ms.size());
  }
  return out;
}

inline void apply_offset(PoseBelief& belief, const Eigen::Vector3d& offset) {
  for (auto& s : belief.samples) s.global.translation -= offset;
}

struct LossValue {
  double total = 0.0;
  double prior = 0.0;  // -log p
  double data = 0.0;   // (alpha / k) * sum of squared residuals in residual units
};

namespace detail {

// Loss at an articulated state with fixed correspondence indices; the
// gradient is with respect to every pose component (3J).
inline LossValue fusion_loss_at(const BodyModel& model, const BeliefMixture& prior, const PoseState& st,
                                const PoseParams& pose, const ShapeParams& shape, const GlobalPose& g,
                                const std::vector<Measurement>& ms, const std::vector<int>& corr,
                                const FusionConfig& cfg, Eigen::VectorXd* grad) {
  LossValue out;
  const int n = static_cast<int>(pose.theta.size());
  Eigen::VectorXd prior_grad;
  out.prior = -prior.evaluate(BeliefMixture::flatten(pose, shape), grad ? &prior_grad : nullptr);
  if (grad) *grad = -prior_grad.head(n);
  if (!ms.empty()) {
    const double scale = cfg.alpha / static_cast<double>(ms.size()) * cfg.residual_unit * cfg.residual_unit;
    for (std::size_t k = 0; k < ms.size(); ++k) {
      const Eigen::Vector3d w = g.rotation * model.posed_vertex(st, corr[k]) + g.translation;
      const Eigen::Vector3d r = w - ms[k].point;
      out.data += scale * r.squaredNorm();
      if (grad) model.add_vertex_gradient(st, corr[k], 2.0 * scale * (g.rotation.transpose() * r), *grad);
    }
  }
  out.total = out.prior + out.data;
  return out;
}

inline std::vector<int> correspondences(const Eigen::Matrix3Xd& v, const std::vector<Measurement>& ms) {
  std::vector<int> c;
  c.reserve(ms.size());
  for (const auto& m : ms) c.push_back(nearest_vertex(v, m.point).index);
  return c;
}

}  // namespace detail

// Fusion loss of one parameter set with correspondences held fixed.
inline LossValue fusion_loss(const BodyModel& model, const BeliefMixture& prior, const PoseParams& pose,
                             const ShapeParams& shape, const GlobalPose& g, const std::vector<Measurement>& ms,
                             const std::vector<int>& corr, const FusionConfig& cfg = {},
                             Eigen::VectorXd* grad = nullptr) {
  if (corr.size() != ms.size()) throw InvalidInput("one correspondence per measurement required");
  for (const int c : corr) {
    if (c < 0 || c >= model.vertex_count()) throw InvalidInput("correspondence index out of range");
  }
  const PoseState st = model.forward(pose, shape);
  return detail::fusion_loss_at(model, prior, st, pose, shape, g, ms, corr, cfg, grad);
}

struct SampleTrace {
  std::vector<double> loss;  // per iteration, correspondences as used for the step
};

struct FusionResult {
  PoseBelief belief;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  bool converged = true;  // false when any sample ran out of iterations
  double ml_residual_before = 0.0;
  double ml_residual_after = 0.0;
  std::vector<double> final_loss;  // per sample
  std::vector<SampleTrace> traces;
};

struct SampleFit {
  PoseParams pose;
  double loss = 0.0;  // fusion loss of `pose` under fresh correspondences
  bool converged = false;
  SampleTrace trace;
};

// Adam on the free joints (all but the root) with nearest-vertex
// correspondences refreshed every `refresh_period` iterations. The returned
// pose is the best iterate under freshly computed correspondences.
inline SampleFit fit_sample(const BodyModel& model, const BeliefMixture& prior, const BeliefSample& sample,
                            const std::vector<Measurement>& ms, const FusionConfig& cfg) {
  const int nj = model.joint_count();
  const int n = 3 * nj;
  SampleFit fit;
  fit.pose = sample.pose;
  PoseParams pose = sample.pose;
  PoseState st = model.forward(pose, sample.shape);
  auto world = [&](const PoseState& s) {
    return Eigen::Matrix3Xd((sample.global.rotation * model.posed_vertices(s)).colwise() + sample.global.translation);
  };
  std::vector<int> corr = detail::correspondences(world(st), ms);
  double best = detail::fusion_loss_at(model, prior, st, pose, sample.shape, sample.global, ms, corr, cfg, nullptr).total;
  fit.loss = best;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n), m2 = Eigen::VectorXd::Zero(n), grad;
  double prev = std::numeric_limits<double>::infinity();
  double b1t = 1.0, b2t = 1.0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const double loss =
        detail::fusion_loss_at(model, prior, st, pose, sample.shape, sample.global, ms, corr, cfg, &grad).total;
    if (cfg.record_trace) fit.trace.loss.push_back(loss);
    if (std::abs(prev - loss) < cfg.tolerance) {
      fit.converged = true;
      break;
    }
    prev = loss;
    grad.head(3).setZero();
    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * grad;
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
    const Eigen::VectorXd step =
        cfg.step_size * (m1 / (1.0 - b1t)).array() / ((m2 / (1.0 - b2t)).array().sqrt() + 1e-12);
    pose.theta.reshaped() -= step;
    model.repose(st, pose);
    if (it % cfg.refresh_period == 0 || it == cfg.max_iterations) {
      corr = detail::correspondences(world(st), ms);
      const double fresh =
          detail::fusion_loss_at(model, prior, st, pose, sample.shape, sample.global, ms, corr, cfg, nullptr).total;
      if (fresh < best) {
        best = fresh;
        fit.loss = fresh;
        fit.pose = pose;
      }
    }
  }
  return fit;
}

// Local pose optimization of every sample. Each stored log-density becomes
// the negated final fusion loss (prior log-density minus the data term) at the
// optimized parameters, so the ML flag lands on the lowest-loss sample and
// later density weighting reflects the measurements.
inline FusionResult optimize_pose(const BodyModel& model, const PoseBelief& belief, const std::vector<Measurement>& ms,
                                  const FusionConfig& cfg = {}) {
  cfg.validate();
  belief.validate();
  FusionResult out;
  out.belief = belief;
  if (ms.empty()) return out;
  for (const auto& m : ms) m.validate();
  out.ml_residual_before = mean_correspondence_distance(sample_world_mesh(model, belief.ml()), ms);
  for (auto& s : out.belief.samples) {
    auto fit = fit_sample(model, belief.generator, s, ms, cfg);
    out.converged = out.converged && fit.converged;
    s.pose = std::move(fit.pose);
    out.final_loss.push_back(fit.loss);
    if (cfg.record_trace) out.traces.push_back(std::move(fit.trace));
  }
  for (int s = 0; s < out.belief.size(); ++s) out.belief.samples[s].log_density = -out.final_loss[s];
  out.belief.refresh_ml();
  out.ml_residual_after = mean_correspondence_distance(sample_world_mesh(model, out.belief.ml()), ms);
  return out;
}

// Global offset followed by local pose optimization.
inline FusionResult fuse(const BodyModel& model, const PoseBelief& belief, const std::vector<Measurement>& ms,
                         const FusionConfig& cfg = {}) {
  if (ms.empty()) {
    FusionResult r;
    r.belief = belief;
    return r;
  }
  PoseBelief shifted = belief;
  const Eigen::Vector3d offset = global_offset(model, belief, ms);
  apply_offset(shifted, offset);
  auto r = optimize_pose(model, shifted, ms, cfg);
  r.offset = offset;
  r.ml_residual_before = mean_correspondence_distance(sample_world_mesh(model, belief.ml()), ms);
  return r;
}

// Moves the ML flag to the sample with the smallest mean correspondence
// distance; parameters are untouched.
inline PoseBelief closest_sample(const BodyModel& model, const PoseBelief& belief, const std::vector<Measurement>& ms) {
  PoseBelief out = belief;
  if (ms.empty()) return out;
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < belief.size(); ++s) {
    const double d = mean_correspondence_distance(sample_world_mesh(model, belief.samples[s]), ms);
    if (d < best) {
      best = d;
      out.ml_index = s;
    }
  }
  return out;
}

}  // namespace proxhmr
