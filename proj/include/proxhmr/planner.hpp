#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "proxhmr/body_model.hpp"
#include "proxhmr/camera.hpp"
#include "proxhmr/fusion.hpp"
#include "proxhmr/kinematics.hpp"
#include "proxhmr/parallel.hpp"
#include "proxhmr/pose_belief.hpp"
#include "proxhmr/sensor_sim.hpp"
#include "proxhmr/visibility.hpp"

namespace proxhmr {

struct GridOptions {
  int azimuths = 8;
  double radius = 0.7;                     // m, horizontal distance to the pelvis estimate
  std::vector<double> heights = {0.6, 1.0, 1.4};  // m, absolute camera heights
  double focal = 2200.0;
  int width = 1920;
  int height = 1080;

  void validate() const {
    if (azimuths < 1 || heights.empty() || !(radius > 0.0)) throw InvalidInput("empty viewpoint grid");
  }
};

struct ViewpointGrid {
  std::vector<Camera> candidates;
};

// Candidates ordered azimuth-major, heights inner; all aimed at `pelvis`.
inline ViewpointGrid make_viewpoint_grid(const Eigen::Vector3d& pelvis, const GridOptions& opt = {}) {
  opt.validate();
  ViewpointGrid grid;
  for (int a = 0; a < opt.azimuths; ++a) {
    const double phi = 2.0 * std::numbers::pi * a / opt.azimuths;
    for (const double h : opt.heights) {
      const Eigen::Vector3d eye(pelvis.x() + opt.radius * std::cos(phi), pelvis.y() + opt.radius * std::sin(phi), h);
      grid.candidates.push_back(look_at(eye, pelvis, opt.focal, opt.width, opt.height));
    }
  }
  return grid;
}

// Uncertainty-weighted coverage: sum of sigma over vertices visible from cam.
inline double score_viewpoint(const Camera& cam, const Eigen::Matrix3Xd& v_ml, const std::vector<Eigen::Vector3i>& faces,
                              const Eigen::VectorXd& sigma) {
  if (sigma.size() != v_ml.cols()) throw InvalidInput("uncertainty field and mesh sizes differ");
  const auto mask = zbuffer_visibility(v_ml, faces, cam);
  double score = 0.0;
  for (Eigen::Index i = 0; i < v_ml.cols(); ++i) {
    if (mask.visible[i]) score += sigma[i];
  }
  return score;
}

struct ViewpointChoice {
  int index = 0;
  Camera camera;
  std::vector<double> scores;
  bool blind = false;  // no candidate saw anything uncertain
};

inline ViewpointChoice select_viewpoint(const ViewpointGrid& grid, const Eigen::Matrix3Xd& v_ml,
                                        const std::vector<Eigen::Vector3i>& faces, const Eigen::VectorXd& sigma,
                                        int threads = 1) {
  if (grid.candidates.empty()) throw InvalidInput("empty viewpoint grid");
  ViewpointChoice out;
  out.scores.assign(grid.candidates.size(), 0.0);
  parallel_for(static_cast<int>(grid.candidates.size()), threads,
               [&](int c) { out.scores[c] = score_viewpoint(grid.candidates[c], v_ml, faces, sigma); });
  for (int c = 1; c < static_cast<int>(out.scores.size()); ++c) {
    if (out.scores[c] > out.scores[out.index]) out.index = c;
  }
  out.blind = !(out.scores[out.index] > 0.0);
  out.camera = grid.candidates[out.index];
  return out;
}

struct SensorTarget {
  int vertex = -1;
  SensorPlacement placement;
  IkResult ik;
};

// Most uncertain vertex of the ML mesh that the chain can reach while keeping
// clear of the committed placements (ties go to the lowest index). Returns
// nothing when no vertex is reachable.
inline std::optional<SensorTarget> select_sensor_target(const Eigen::VectorXd& sigma, const Eigen::Matrix3Xd& v_ml,
                                                        const KinematicChain& chain,
                                                        const std::vector<SensorPlacement>& committed,
                                                        const IkOptions& ik = {}) {
  if (sigma.size() != v_ml.cols()) throw InvalidInput("uncertainty field and mesh sizes differ");
  if (committed.empty()) throw InvalidInput("the camera placement must be committed first");
  std::vector<int> order(static_cast<std::size_t>(sigma.size()));
  for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sigma[a] > sigma[b]; });
  for (const int i : order) {
    const auto r = ik_reach(chain, v_ml.col(i), committed, ik);
    if (r.success) return SensorTarget{i, r.placement, r};
  }
  return std::nullopt;
}

// Ground truth of one simulated interaction.
struct Scene {
  std::uint64_t seed = 0;
  PoseParams pose;
  ShapeParams shape;
  GlobalPose global;
  Camera start_camera;
};

enum class Selection { active, random };
enum class FusionMethod { sensor_fusion, closest_sample };

inline std::string to_string(Selection s) { return s == Selection::active ? "AM" : "RM"; }
inline std::string to_string(FusionMethod f) { return f == FusionMethod::sensor_fusion ? "SF" : "CS"; }

struct LoopOptions {
  int n_points = 30;
  std::vector<int> snapshots = {0, 3, 5, 10, 30};
  double touch_sigma = 0.02;
  EstimatorNoise estimator;
  FusionConfig fusion;
  IkOptions ik;
  GridOptions grid;
  VarianceWeighting weighting = VarianceWeighting::density;
  int max_random_draws = 200;
  bool lidar = false;
  Lidar2DSpec lidar_spec;
  double lidar_sigma = 0.02;
  double lidar_standoff = 0.6;  // m, scanner distance from the pelvis estimate
  int lidar_max_points = 20;
  int threads = 1;              // viewpoint scoring workers
};

// Deterministic seed for a sub-stream of a scene.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct CameraStage {
  PoseBelief initial;      // estimate from the scene's start camera
  ViewpointChoice choice;
  PoseBelief belief;       // estimate from the chosen camera
};

// Scores the viewpoint grid with the start-camera estimate, then re-estimates
// from the chosen camera.
inline CameraStage camera_stage(const BodyModel& model, const Scene& scene, const LoopOptions& opt) {
  CameraStage st;
  st.initial = simulate_camera_estimate(model, scene.pose, scene.shape, scene.global, scene.start_camera,
                                        mix_seed(scene.seed, 1), opt.estimator);
  const auto [v_ml, j_ml] = ml_mesh(model, st.initial);
  const auto grid = make_viewpoint_grid(j_ml.col(0), opt.grid);
  st.choice = select_viewpoint(grid, v_ml, model.faces(), vertex_variance(model, st.initial, opt.weighting), opt.threads);
  st.belief = simulate_camera_estimate(model, scene.pose, scene.shape, scene.global, st.choice.camera,
                                       mix_seed(scene.seed, 2), opt.estimator);
  return st;
}

struct StepRecord {
  int step = 0;
  int vertex = -1;            // -1 when skipped
  double sigma_before = 0.0;  // uncertainty at the target before fusion
  double sigma_after = 0.0;
  double max_sigma_after = 0.0;
  double residual_before = 0.0;
  double residual_after = 0.0;
  bool converged = true;
  IkResult ik;
  std::string event;
  std::vector<SampleTrace> fusion_trace;  // only with FusionConfig::record_trace
};

struct Snapshot {
  int n = 0;
  int measured = 0;  // measurements actually taken
  Eigen::Matrix3Xd joints;
};

struct MeasurementPlan {
  Camera chosen_camera;
  int camera_index = 0;
  bool blind = false;
  std::vector<double> camera_scores;
  std::vector<SensorTarget> targets;
};

struct LoopResult {
  MeasurementPlan plan;
  PoseBelief belief;
  std::vector<Measurement> measurements;
  std::vector<StepRecord> steps;
  std::vector<Snapshot> snapshots;
};

// Scanner placed in front of the pelvis estimate, facing it.
inline SensorPlacement lidar_placement(const Eigen::Vector3d& pelvis, const Camera& cam, const LoopOptions& opt) {
  Eigen::Vector3d dir = cam.translation - pelvis;
  dir.z() = 0.0;
  if (dir.norm() < 1e-9) dir = Eigen::Vector3d::UnitX();
  dir.normalize();
  SensorPlacement p;
  p.translation = pelvis + opt.lidar_standoff * dir;
  p.translation.z() = opt.lidar_spec.scan_height;
  const double yaw = std::atan2(-dir.y(), -dir.x());
  p.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return p;
}

// Sequential measure-and-update loop starting from a camera-conditioned
// belief: pick a target, touch it, update the belief, repeat.
inline LoopResult measurement_loop(const BodyModel& model, const Scene& scene, const CameraStage& cam,
                                   const KinematicChain& chain, Selection selection, FusionMethod method,
                                   const LoopOptions& opt) {
  chain.validate();
  LoopResult out;
  out.plan.chosen_camera = cam.choice.camera;
  out.plan.camera_index = cam.choice.index;
  out.plan.blind = cam.choice.blind;
  out.plan.camera_scores = cam.choice.scores;
  out.belief = cam.belief;
  const Eigen::Matrix3Xd gt = world_mesh(model.skin_mesh(scene.pose, scene.shape), scene.global);
  std::vector<SensorPlacement> committed = {SensorPlacement{cam.choice.camera.rotation, cam.choice.camera.translation}};
  std::mt19937_64 pick(mix_seed(scene.seed, 3));
  std::uniform_int_distribution<int> any_vertex(0, model.vertex_count() - 1);

  auto snapshot = [&](int n) {
    if (std::find(opt.snapshots.begin(), opt.snapshots.end(), n) == opt.snapshots.end()) return;
    const auto [v, j] = ml_mesh(model, out.belief);
    out.snapshots.push_back({n, static_cast<int>(out.plan.targets.size()), j});
  };
  auto update = [&](StepRecord& rec) {
    if (method == FusionMethod::sensor_fusion) {
      auto r = fuse(model, out.belief, out.measurements, opt.fusion);
      rec.converged = r.converged;
      rec.fusion_trace = std::move(r.traces);
      out.belief = std::move(r.belief);
    } else {
      out.belief = closest_sample(model, out.belief, out.measurements);
    }
  };

  if (opt.lidar) {
    const auto [v, j] = ml_mesh(model, out.belief);
    const auto placement = lidar_placement(j.col(0), cam.choice.camera, opt);
    auto hits = filter_legs(scan_lidar_slice(gt, model.faces(), opt.lidar_spec, placement, opt.lidar_sigma,
                                             mix_seed(scene.seed, 4)));
    if (static_cast<int>(hits.size()) > opt.lidar_max_points) {
      std::vector<Measurement> kept;
      for (int k = 0; k < opt.lidar_max_points; ++k) kept.push_back(hits[k * hits.size() / opt.lidar_max_points]);
      hits = std::move(kept);
    }
    committed.push_back(placement);
    out.measurements.insert(out.measurements.end(), hits.begin(), hits.end());
    if (!hits.empty()) {
      StepRecord rec;
      rec.event = "lidar";
      update(rec);
      out.steps.push_back(rec);
    }
  }
  snapshot(0);

  for (int step = 1; step <= opt.n_points; ++step) {
    StepRecord rec;
    rec.step = step;
    const auto [v_ml, j_ml] = ml_mesh(model, out.belief);
    const Eigen::VectorXd sigma = vertex_variance(model, out.belief, opt.weighting);
    std::optional<SensorTarget> target;
    if (selection == Selection::active) {
      target = select_sensor_target(sigma, v_ml, chain, committed, opt.ik);
    } else {
      for (int d = 0; d < opt.max_random_draws && !target; ++d) {
        const int i = any_vertex(pick);
        const auto r = ik_reach(chain, v_ml.col(i), committed, opt.ik);
        if (r.success) target = SensorTarget{i, r.placement, r};
      }
    }
    if (!target) {
      rec.event = "infeasible";
      out.steps.push_back(rec);
      snapshot(step);
      continue;
    }
    rec.vertex = target->vertex;
    rec.ik = target->ik;
    rec.sigma_before = sigma[target->vertex];
    const auto m = sample_touch(gt, target->vertex, opt.touch_sigma, mix_seed(scene.seed, 1000 + step),
                                target->placement);
    rec.residual_before = (v_ml.col(target->vertex) - m.point).norm();
    out.measurements.push_back(m);
    committed.push_back(target->placement);
    out.plan.targets.push_back(*target);
    update(rec);
    const Eigen::VectorXd sigma_after = vertex_variance(model, out.belief, opt.weighting);
    rec.sigma_after = sigma_after[target->vertex];
    rec.max_sigma_after = sigma_after.maxCoeff();
    rec.residual_after = mean_correspondence_distance(ml_mesh(model, out.belief).first, {m});
    out.steps.push_back(rec);
    snapshot(step);
  }
  return out;
}

// Camera first, then n_points active touches with sensor fusion after each.
inline LoopResult plan_and_measure_loop(const BodyModel& model, const Scene& scene, const KinematicChain& chain,
                                        const LoopOptions& opt = {}) {
  return measurement_loop(model, scene, camera_stage(model, scene, opt), chain, Selection::active,
                          FusionMethod::sensor_fusion, opt);
}

inline nlohmann::json camera_to_json(const Camera& c) {
  return {{"rotation", to_json_mat3(c.rotation)},
          {"translation", to_json_vec(c.translation)},
          {"focal", c.focal},
          {"width", c.width},
          {"height", c.height}};
}

inline nlohmann::json plan_trace_to_json(const LoopResult& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"vertex", s.vertex},
                     {"event", s.event},
                     {"sigma_before", s.sigma_before},
                     {"sigma_after", s.sigma_after},
                     {"residual_before", s.residual_before},
                     {"residual_after", s.residual_after},
                     {"converged", s.converged},
                     {"ik", {{"success", s.ik.success}, {"residual", s.ik.success ? s.ik.residual : -1.0},
                             {"q", to_json_vecx(s.ik.q)}}}});
    if (!s.fusion_trace.empty()) {
      nlohmann::json losses = nlohmann::json::array();
      for (const auto& t : s.fusion_trace) losses.push_back(t.loss);
      steps.back()["fusion_loss"] = losses;
    }
  }
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : r.plan.targets) targets.push_back({{"vertex", t.vertex}, {"placement", placement_to_json(t.placement)}});
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : r.measurements) ms.push_back(measurement_to_json(m));
  return {{"format", "proxhmr-plan-trace"},
          {"version", 1},
          {"camera", camera_to_json(r.plan.chosen_camera)},
          {"camera_index", r.plan.camera_index},
          {"camera_scores", r.plan.camera_scores},
          {"blind", r.plan.blind},
          {"targets", targets},
          {"steps", steps},
          {"measurements", ms}};
}

}  // namespace proxhmr
