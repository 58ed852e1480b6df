#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxhmr/metrics.hpp"
#include "proxhmr/planner.hpp"

namespace proxhmr {

enum class PoseFamily { standing, sitting };

inline std::string to_string(PoseFamily f) { return f == PoseFamily::standing ? "standing" : "sitting"; }

struct BenchConfig {
  static constexpr int kFormatVersion = 1;
  std::uint64_t seed = 2024;
  int scenarios = 50;
  std::vector<int> n_values = {3, 5, 10, 30};
  double sitting_fraction = 0.5;
  double pose_perturbation = 0.1;  // rad, per joint axis
  double shape_sigma = 0.5;
  double start_distance = 0.7;     // m, start camera distance from the pelvis
  double start_height = 1.0;       // m, absolute
  int start_directions = 8;
  bool pelvis_aligned = false;
  int threads = 1;
  LoopOptions loop;

  void validate() const {
    if (scenarios < 0) throw InvalidInput("scenario count must be non-negative");
    if (n_values.empty()) throw InvalidInput("need at least one n value");
    for (int n : n_values) {
      if (n < 0) throw InvalidInput("n values must be non-negative");
    }
    if (!(sitting_fraction >= 0.0 && sitting_fraction <= 1.0)) throw InvalidInput("sitting fraction must be in [0, 1]");
    if (!(pose_perturbation >= 0.0) || !(shape_sigma >= 0.0)) throw InvalidInput("negative scenario spread");
    if (!(start_distance > 0.0) || start_directions < 1) throw InvalidInput("bad start camera ring");
    if (threads < 1) throw InvalidInput("threads must be at least 1");
    if (!(loop.touch_sigma >= 0.0)) throw InvalidInput("negative touch noise");
    loop.estimator.validate();
    loop.fusion.validate();
    loop.ik.validate();
    loop.grid.validate();
    loop.lidar_spec.validate();
  }
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& field, std::set<std::string>& seen) {
  seen.insert(key);
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!seen.count(k)) throw FormatError("unknown config key '" + where + k + "'");
  }
}

}  // namespace detail

inline BenchConfig bench_config_from_json(const nlohmann::json& j) {
  using detail::take;
  BenchConfig c;
  try {
    if (!j.is_object()) throw FormatError("config must be a JSON object");
    std::set<std::string> seen;
    seen.insert("version");
    if (j.contains("version") && j.at("version").get<int>() != BenchConfig::kFormatVersion)
      throw FormatError("unsupported config version");
    take(j, "seed", c.seed, seen);
    take(j, "scenarios", c.scenarios, seen);
    take(j, "n_values", c.n_values, seen);
    take(j, "sitting_fraction", c.sitting_fraction, seen);
    take(j, "pose_perturbation", c.pose_perturbation, seen);
    take(j, "shape_sigma", c.shape_sigma, seen);
    take(j, "start_distance", c.start_distance, seen);
    take(j, "start_height", c.start_height, seen);
    take(j, "start_directions", c.start_directions, seen);
    take(j, "pelvis_aligned", c.pelvis_aligned, seen);
    take(j, "threads", c.threads, seen);
    take(j, "touch_sigma", c.loop.touch_sigma, seen);
    take(j, "max_random_draws", c.loop.max_random_draws, seen);
    seen.insert("weighting");
    if (j.contains("weighting")) {
      const auto w = j.at("weighting").get<std::string>();
      if (w != "density" && w != "uniform") throw FormatError("weighting must be 'density' or 'uniform'");
      c.loop.weighting = w == "density" ? VarianceWeighting::density : VarianceWeighting::uniform;
    }
    auto section = [&](const char* name, auto&& fill) {
      seen.insert(name);
      if (!j.contains(name)) return;
      const auto& s = j.at(name);
      if (!s.is_object()) throw FormatError(std::string("section '") + name + "' must be an object");
      std::set<std::string> inner;
      fill(s, inner);
      detail::reject_unknown(s, inner, std::string(name) + ".");
    };
    section("estimator", [&](const nlohmann::json& s, std::set<std::string>& k) {
      auto& e = c.loop.estimator;
      take(s, "sigma_visible", e.sigma_visible, k);
      take(s, "sigma_hidden", e.sigma_hidden, k);
      take(s, "depth_bias_sigma", e.depth_bias_sigma, k);
      take(s, "samples", e.samples, k);
      take(s, "visible_fraction", e.visible_fraction, k);
      take(s, "kernel_scale", e.kernel_scale, k);
    });
    section("fusion", [&](const nlohmann::json& s, std::set<std::string>& k) {
      auto& f = c.loop.fusion;
      take(s, "alpha", f.alpha, k);
      take(s, "step_size", f.step_size, k);
      take(s, "max_iterations", f.max_iterations, k);
      take(s, "tolerance", f.tolerance, k);
      take(s, "refresh_period", f.refresh_period, k);
      take(s, "residual_unit", f.residual_unit, k);
      take(s, "adam_beta1", f.adam_beta1, k);
      take(s, "adam_beta2", f.adam_beta2, k);
    });
    section("ik", [&](const nlohmann::json& s, std::set<std::string>& k) {
      auto& o = c.loop.ik;
      take(s, "damping", o.damping, k);
      take(s, "max_iterations", o.max_iterations, k);
      take(s, "restarts", o.restarts, k);
      take(s, "tolerance", o.tolerance, k);
      take(s, "clearance", o.clearance, k);
      take(s, "seed", o.seed, k);
    });
    section("viewpoints", [&](const nlohmann::json& s, std::set<std::string>& k) {
      auto& g = c.loop.grid;
      take(s, "azimuths", g.azimuths, k);
      take(s, "radius", g.radius, k);
      take(s, "heights", g.heights, k);
      take(s, "focal", g.focal, k);
      take(s, "width", g.width, k);
      take(s, "height", g.height, k);
    });
    section("lidar", [&](const nlohmann::json& s, std::set<std::string>& k) {
      take(s, "enabled", c.loop.lidar, k);
      take(s, "sigma", c.loop.lidar_sigma, k);
      take(s, "standoff", c.loop.lidar_standoff, k);
      take(s, "max_points", c.loop.lidar_max_points, k);
      take(s, "scan_height", c.loop.lidar_spec.scan_height, k);
      take(s, "angular_resolution", c.loop.lidar_spec.angular_resolution, k);
      take(s, "max_range", c.loop.lidar_spec.max_range, k);
      take(s, "min_range", c.loop.lidar_spec.min_range, k);
    });
    detail::reject_unknown(j, seen, "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

inline BenchConfig load_bench_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cannot parse config '" + path + "': " + e.what());
  }
  return bench_config_from_json(j);
}

inline nlohmann::json bench_config_to_json(const BenchConfig& c) {
  const auto& e = c.loop.estimator;
  const auto& f = c.loop.fusion;
  const auto& k = c.loop.ik;
  const auto& g = c.loop.grid;
  return {{"version", BenchConfig::kFormatVersion},
          {"seed", c.seed},
          {"scenarios", c.scenarios},
          {"n_values", c.n_values},
          {"sitting_fraction", c.sitting_fraction},
          {"pose_perturbation", c.pose_perturbation},
          {"shape_sigma", c.shape_sigma},
          {"start_distance", c.start_distance},
          {"start_height", c.start_height},
          {"start_directions", c.start_directions},
          {"pelvis_aligned", c.pelvis_aligned},
          {"touch_sigma", c.loop.touch_sigma},
          {"max_random_draws", c.loop.max_random_draws},
          {"weighting", c.loop.weighting == VarianceWeighting::density ? "density" : "uniform"},
          {"estimator",
           {{"sigma_visible", e.sigma_visible},
            {"sigma_hidden", e.sigma_hidden},
            {"depth_bias_sigma", e.depth_bias_sigma},
            {"samples", e.samples},
            {"visible_fraction", e.visible_fraction},
            {"kernel_scale", e.kernel_scale}}},
          {"fusion",
           {{"alpha", f.alpha},
            {"step_size", f.step_size},
            {"max_iterations", f.max_iterations},
            {"tolerance", f.tolerance},
            {"refresh_period", f.refresh_period},
            {"residual_unit", f.residual_unit},
            {"adam_beta1", f.adam_beta1},
            {"adam_beta2", f.adam_beta2}}},
          {"ik",
           {{"damping", k.damping},
            {"max_iterations", k.max_iterations},
            {"restarts", k.restarts},
            {"tolerance", k.tolerance},
            {"clearance", k.clearance},
            {"seed", k.seed}}},
          {"viewpoints",
           {{"azimuths", g.azimuths},
            {"radius", g.radius},
            {"heights", g.heights},
            {"focal", g.focal},
            {"width", g.width},
            {"height", g.height}}},
          {"lidar",
           {{"enabled", c.loop.lidar},
            {"sigma", c.loop.lidar_sigma},
            {"standoff", c.loop.lidar_standoff},
            {"max_points", c.loop.lidar_max_points},
            {"scan_height", c.loop.lidar_spec.scan_height},
            {"angular_resolution", c.loop.lidar_spec.angular_resolution},
            {"max_range", c.loop.lidar_spec.max_range},
            {"min_range", c.loop.lidar_spec.min_range}}}};
}

struct BenchScenario {
  int index = 0;
  PoseFamily family = PoseFamily::standing;
  Scene scene;
};

// Reproducible from (config seed, index) alone.
inline BenchScenario make_scenario(const BodyModel& model, const BenchConfig& cfg, int index) {
  BenchScenario out;
  out.index = index;
  Scene& s = out.scene;
  s.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.family = unit(rng) < cfg.sitting_fraction ? PoseFamily::sitting : PoseFamily::standing;

  s.pose = PoseParams::zero(model.joint_count());
  const double arm = 70.0 * std::numbers::pi / 180.0;
  s.pose.theta.col(4) = Eigen::Vector3d(0, -arm, 0);
  s.pose.theta.col(7) = Eigen::Vector3d(0, arm, 0);
  if (out.family == PoseFamily::sitting) {
    for (int hip : {10, 13}) s.pose.theta(0, hip) = std::numbers::pi / 2;
    for (int knee : {11, 14}) s.pose.theta(0, knee) = -std::numbers::pi / 2;
  }
  for (int j = 1; j < model.joint_count(); ++j) {
    for (int a = 0; a < 3; ++a) s.pose.theta(a, j) += cfg.pose_perturbation * normal(rng);
  }
  s.shape = ShapeParams::zero(model.shape_count());
  for (int b = 0; b < model.shape_count(); ++b) s.shape.beta[b] = cfg.shape_sigma * normal(rng);
  s.shape.clamp();

  const double yaw = 2.0 * std::numbers::pi * unit(rng) - std::numbers::pi;
  s.global.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Matrix3Xd local = model.skin_mesh(s.pose, s.shape);
  s.global.translation = Eigen::Vector3d(0, 0, -(s.global.rotation * local).row(2).minCoeff());

  const int dir = std::uniform_int_distribution<int>(0, cfg.start_directions - 1)(rng);
  const double phi = 2.0 * std::numbers::pi * dir / cfg.start_directions;
  const Eigen::Vector3d pelvis = s.global.translation;
  const Eigen::Vector3d eye(pelvis.x() + cfg.start_distance * std::cos(phi),
                            pelvis.y() + cfg.start_distance * std::sin(phi), cfg.start_height);
  s.start_camera = look_at(eye, pelvis, cfg.loop.grid.focal, cfg.loop.grid.width, cfg.loop.grid.height);
  return out;
}

struct Method {
  Selection selection;
  FusionMethod fusion;
  std::string label() const { return to_string(selection) + "+" + to_string(fusion); }
};

inline const std::vector<Method>& ablation_methods() {
  static const std::vector<Method> m = {{Selection::random, FusionMethod::closest_sample},
                                        {Selection::random, FusionMethod::sensor_fusion},
                                        {Selection::active, FusionMethod::closest_sample},
                                        {Selection::active, FusionMethod::sensor_fusion}};
  return m;
}

// Joints reported individually.
inline const std::vector<std::pair<std::string, int>>& reported_joints() {
  static const std::vector<std::pair<std::string, int>> j = {{"head", 3},   {"pelvis", 0},  {"l_wrist", 6},
                                                             {"r_wrist", 9}, {"l_ankle", 12}, {"r_ankle", 15}};
  return j;
}

struct MetricsRow {
  int scenario = 0;
  std::string family;
  std::string method;
  int n = 0;
  int measured = 0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  bool pa_degenerate = false;
  std::vector<double> joint_mm;  // in reported_joints() order
};

struct ScenarioResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::string family;
  std::string error;  // non-empty when the scenario failed
  int camera_index = 0;
  bool blind = false;
  std::vector<MetricsRow> rows;
  std::vector<double> seconds;  // per method
};

inline MetricsRow score_joints(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& gt, bool pelvis_aligned) {
  MetricsRow r;
  r.mpjpe_mm = 1000.0 * mpjpe(est, gt, pelvis_aligned);
  const auto pa = pa_mpjpe_detail(est, gt);
  r.pa_mpjpe_mm = 1000.0 * pa.error;
  r.pa_degenerate = pa.degenerate;
  Eigen::Matrix3Xd d = est - gt;
  if (pelvis_aligned) d.colwise() -= Eigen::Vector3d(d.col(0));
  for (const auto& [name, j] : reported_joints()) r.joint_mm.push_back(1000.0 * d.col(j).norm());
  return r;
}

// One scenario through all four methods. The camera stage is shared; each
// method then runs its own measurement loop to the largest n.
inline ScenarioResult run_scenario(const BodyModel& model, const KinematicChain& chain, const BenchConfig& cfg,
                                   int index, std::vector<LoopResult>* traces = nullptr) {
  ScenarioResult out;
  out.index = index;
  try {
    const auto sc = make_scenario(model, cfg, index);
    out.seed = sc.scene.seed;
    out.family = to_string(sc.family);
    const Eigen::Matrix3Xd gt_joints =
        model.regress_joints(model.skin_mesh(sc.scene.pose, sc.scene.shape), sc.scene.global);
    LoopOptions opt = cfg.loop;
    opt.n_points = *std::max_element(cfg.n_values.begin(), cfg.n_values.end());
    opt.snapshots = cfg.n_values;
    const auto stage = camera_stage(model, sc.scene, opt);
    out.camera_index = stage.choice.index;
    out.blind = stage.choice.blind;
    for (const auto& m : ablation_methods()) {
      const auto t0 = std::chrono::steady_clock::now();
      auto r = measurement_loop(model, sc.scene, stage, chain, m.selection, m.fusion, opt);
      out.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      for (const int n : cfg.n_values) {
        const auto snap = std::find_if(r.snapshots.begin(), r.snapshots.end(), [&](const Snapshot& s) { return s.n == n; });
        if (snap == r.snapshots.end()) throw std::logic_error("missing snapshot");
        auto row = score_joints(snap->joints, gt_joints, cfg.pelvis_aligned);
        row.scenario = index;
        row.family = out.family;
        row.method = m.label();
        row.n = n;
        row.measured = snap->measured;
        out.rows.push_back(std::move(row));
      }
      if (traces) traces->push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    out.rows.clear();
    out.error = e.what();
  }
  return out;
}

struct CellSummary {
  std::string method;
  int n = 0;
  int count = 0;
  double mpjpe_mm = 0.0;
  double mpjpe_std_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  std::vector<double> joint_mm;
};

struct BenchReport {
  BenchConfig config;
  std::vector<ScenarioResult> scenarios;
  std::vector<CellSummary> cells;  // method-major in ablation order, n inner
  int failures = 0;
  std::vector<std::string> invariant_violations;
};

inline std::vector<CellSummary> aggregate(const std::vector<ScenarioResult>& scenarios, const std::vector<int>& n_values) {
  std::vector<CellSummary> cells;
  for (const auto& m : ablation_methods()) {
    for (const int n : n_values) {
      CellSummary c;
      c.method = m.label();
      c.n = n;
      c.joint_mm.assign(reported_joints().size(), 0.0);
      std::vector<double> values;
      for (const auto& s : scenarios) {
        for (const auto& r : s.rows) {
          if (r.method != c.method || r.n != n) continue;
          values.push_back(r.mpjpe_mm);
          c.pa_mpjpe_mm += r.pa_mpjpe_mm;
          for (std::size_t k = 0; k < c.joint_mm.size(); ++k) c.joint_mm[k] += r.joint_mm[k];
        }
      }
      c.count = static_cast<int>(values.size());
      if (c.count > 0) {
        for (double v : values) c.mpjpe_mm += v;
        c.mpjpe_mm /= c.count;
        c.pa_mpjpe_mm /= c.count;
        for (auto& v : c.joint_mm) v /= c.count;
        double sq = 0.0;
        for (double v : values) sq += (v - c.mpjpe_mm) * (v - c.mpjpe_mm);
        c.mpjpe_std_mm = std::sqrt(sq / c.count);
      }
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

inline std::vector<std::string> check_invariants(const BenchReport& rep) {
  std::vector<std::string> bad;
  for (const auto& s : rep.scenarios) {
    for (const auto& r : s.rows) {
      if (!(r.pa_mpjpe_mm <= r.mpjpe_mm + 1e-9))
        bad.push_back("PA-MPJPE exceeds MPJPE in scenario " + std::to_string(s.index) + " " + r.method);
    }
    // With no measurements every method reports the camera-only estimate.
    const MetricsRow* first = nullptr;
    for (const auto& r : s.rows) {
      if (r.n != 0) continue;
      if (first && first->mpjpe_mm != r.mpjpe_mm) bad.push_back("n=0 cells differ in scenario " + std::to_string(s.index));
      if (!first) first = &r;
    }
  }
  return bad;
}

inline BenchReport run_ablation(const BodyModel& model, const KinematicChain& chain, const BenchConfig& cfg) {
  cfg.validate();
  BenchReport rep;
  rep.config = cfg;
  rep.scenarios.resize(static_cast<std::size_t>(cfg.scenarios));
  parallel_for(cfg.scenarios, cfg.threads, [&](int i) { rep.scenarios[i] = run_scenario(model, chain, cfg, i); });
  for (const auto& s : rep.scenarios) rep.failures += !s.error.empty();
  rep.cells = aggregate(rep.scenarios, cfg.n_values);
  rep.invariant_violations = check_invariants(rep);
  return rep;
}

inline double cell_mean(const BenchReport& rep, const std::string& method, int n) {
  for (const auto& c : rep.cells) {
    if (c.method == method && c.n == n) return c.mpjpe_mm;
  }
  throw InvalidInput("no cell " + method + " n=" + std::to_string(n));
}

// Fixed-precision numbers so that reports diff cleanly.
inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string report_csv(const BenchReport& rep) {
  std::ostringstream o;
  o << "# proxhmr-bench-table v1\n";
  o << "scenario,family,method,n,measured,mpjpe_mm,pa_mpjpe_mm,pa_degenerate";
  for (const auto& [name, j] : reported_joints()) o << "," << name << "_mm";
  o << "\n";
  for (const auto& s : rep.scenarios) {
    for (const auto& r : s.rows) {
      o << r.scenario << "," << r.family << "," << r.method << "," << r.n << "," << r.measured << ","
        << fixed(r.mpjpe_mm) << "," << fixed(r.pa_mpjpe_mm) << "," << (r.pa_degenerate ? 1 : 0);
      for (double v : r.joint_mm) o << "," << fixed(v);
      o << "\n";
    }
  }
  return o.str();
}

inline std::string report_json(const BenchReport& rep) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : rep.cells) {
    nlohmann::json joints = nlohmann::json::object();
    for (std::size_t k = 0; k < c.joint_mm.size(); ++k) joints[reported_joints()[k].first] = fixed(c.joint_mm[k]);
    cells.push_back({{"method", c.method},
                     {"n", c.n},
                     {"count", c.count},
                     {"mpjpe_mm", fixed(c.mpjpe_mm)},
                     {"mpjpe_std_mm", fixed(c.mpjpe_std_mm)},
                     {"pa_mpjpe_mm", fixed(c.pa_mpjpe_mm)},
                     {"joints_mm", joints}});
  }
  nlohmann::json scenarios = nlohmann::json::array();
  for (const auto& s : rep.scenarios) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : s.rows) {
      rows.push_back({{"method", r.method},
                      {"n", r.n},
                      {"measured", r.measured},
                      {"mpjpe_mm", fixed(r.mpjpe_mm)},
                      {"pa_mpjpe_mm", fixed(r.pa_mpjpe_mm)}});
    }
    scenarios.push_back({{"index", s.index},
                         {"seed", s.seed},
                         {"family", s.family},
                         {"camera_index", s.camera_index},
                         {"blind", s.blind},
                         {"error", s.error},
                         {"rows", rows}});
  }
  const nlohmann::json j = {{"format", "proxhmr-bench-report"},
                            {"version", 1},
                            {"config", bench_config_to_json(rep.config)},
                            {"failures", rep.failures},
                            {"invariant_violations", rep.invariant_violations},
                            {"cells", cells},
                            {"scenarios", scenarios}};
  return j.dump(2) + "\n";
}

// Wall-clock timings vary between runs, so they live apart from the report.
inline std::string timing_json(const BenchReport& rep) {
  nlohmann::json per_method = nlohmann::json::object();
  for (std::size_t m = 0; m < ablation_methods().size(); ++m) {
    std::vector<double> ms;
    for (const auto& s : rep.scenarios) {
      if (m < s.seconds.size()) ms.push_back(1000.0 * s.seconds[m]);
    }
    double mean = 0.0, sq = 0.0;
    for (double v : ms) mean += v;
    if (!ms.empty()) mean /= ms.size();
    for (double v : ms) sq += (v - mean) * (v - mean);
    per_method[ablation_methods()[m].label()] = {{"scenarios", ms.size()},
                                                 {"mean_ms", mean},
                                                 {"std_ms", ms.empty() ? 0.0 : std::sqrt(sq / ms.size())}};
  }
  return nlohmann::json({{"format", "proxhmr-bench-timing"}, {"version", 1}, {"per_method", per_method}}).dump(2) + "\n";
}

}  // namespace proxhmr
