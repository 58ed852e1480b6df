#pragma once

// Cross-checks of the library against independent reference computations.
// Shared by the `validate` CLI subcommand and the acceptance binary.

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "proxhmr/bench.hpp"
#include "proxhmr/fusion.hpp"
#include "proxhmr/metrics.hpp"
#include "proxhmr/parallel.hpp"
#include "proxhmr/planner.hpp"
#include "proxhmr/visibility.hpp"

namespace proxhmr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

template <typename... Args>
std::string format(const char* fmt, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

inline double region_mean(const Eigen::VectorXd& field, const BodyModel& model, const std::vector<int>& joints) {
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < model.vertex_count(); ++i) {
    for (const int j : joints) {
      if (model.dominant_joint(i) == j) {
        sum += field[i];
        ++n;
      }
    }
  }
  return n ? sum / n : 0.0;
}

}  // namespace detail

// Noiseless touches on the ground-truth mesh, camera-only belief from the
// scenario's start camera, then fuse(). The residual is the mean distance from
// each measurement to the ML mesh surface. The number of touches per trial is
// drawn from the benchmark's n sweep.
inline CheckResult check_fusion_efficacy(const BodyModel& model, const BenchConfig& cfg, int trials,
                                         double limit = 0.01, double required = 0.95) {
  std::vector<double> residual(trials, 0.0);
  std::vector<int> count(trials, 0);
  parallel_for(trials, cfg.threads, [&](int t) {
    const auto sc = make_scenario(model, cfg, t);
    const Eigen::Matrix3Xd gt = world_mesh(model.skin_mesh(sc.scene.pose, sc.scene.shape), sc.scene.global);
    const auto belief = simulate_camera_estimate(model, sc.scene.pose, sc.scene.shape, sc.scene.global,
                                                 sc.scene.start_camera, mix_seed(sc.scene.seed, 1), cfg.loop.estimator);
    std::mt19937_64 rng(mix_seed(sc.scene.seed, 77));
    const int k = cfg.n_values[std::uniform_int_distribution<std::size_t>(0, cfg.n_values.size() - 1)(rng)];
    std::uniform_int_distribution<int> pick(0, model.vertex_count() - 1);
    std::vector<Measurement> ms;
    for (int i = 0; i < k; ++i) ms.push_back(sample_touch(gt, pick(rng), 0.0, 0));
    const auto r = fuse(model, belief, ms, cfg.loop.fusion);
    residual[t] = mean_surface_distance(sample_world_mesh(model, r.belief.ml()), model.faces(), ms);
    count[t] = k;
  });
  int ok = 0;
  std::map<int, std::pair<int, int>> by_k;
  for (int t = 0; t < trials; ++t) {
    const bool good = residual[t] <= limit;
    ok += good;
    by_k[count[t]].first += good;
    by_k[count[t]].second += 1;
  }
  std::vector<double> sorted = residual;
  std::sort(sorted.begin(), sorted.end());
  CheckResult out{"fusion efficacy", ok >= required * trials, ""};
  out.detail = detail::format("%d/%d trials with residual <= %.0f mm (need %.0f%%), median %.1f mm", ok, trials,
                              limit * 1000.0, required * 100.0, sorted[sorted.size() / 2] * 1000.0);
  for (const auto& [k, c] : by_k) out.detail += detail::format("; k=%d %d/%d", k, c.first, c.second);
  return out;
}

// Analytic gradient of the fusion loss against central differences on random
// poses, shapes, priors, measurements and correspondences.
inline CheckResult check_loss_gradient(const BodyModel& model, std::uint64_t seed, int instances,
                                       double h = 1e-5, double limit = 1e-4) {
  const int nj = model.joint_count(), nb = model.shape_count();
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    std::mt19937_64 rng(mix_seed(seed, t));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto random_pose = [&](double spread) {
      auto p = PoseParams::zero(nj);
      for (int j = 0; j < nj; ++j) {
        for (int a = 0; a < 3; ++a) p.theta(a, j) = spread * normal(rng);
      }
      return p;
    };
    const PoseParams pose = random_pose(0.4);
    ShapeParams shape = ShapeParams::zero(nb);
    for (int b = 0; b < nb; ++b) shape.beta[b] = 0.5 * normal(rng);
    shape.clamp();
    GlobalPose g;
    g.rotation = Eigen::AngleAxisd(6.0 * unit(rng), Eigen::Vector3d::UnitZ()).toRotationMatrix();
    g.translation = Eigen::Vector3d(normal(rng), normal(rng), 0.9 + 0.1 * normal(rng));

    const int comps = 1 + static_cast<int>(6 * unit(rng));
    std::vector<Eigen::VectorXd> means;
    for (int c = 0; c < comps; ++c) {
      Eigen::VectorXd m = BeliefMixture::flatten(pose, shape);
      for (Eigen::Index d = 0; d < m.size(); ++d) m[d] += 0.2 * normal(rng);
      means.push_back(m);
    }
    Eigen::VectorXd spread(means[0].size());
    for (Eigen::Index d = 0; d < spread.size(); ++d) spread[d] = 0.1 + 0.4 * unit(rng);
    const BeliefMixture prior(means, spread);

    const Eigen::Matrix3Xd target = world_mesh(model.skin_mesh(random_pose(0.4), shape), g);
    const int k = 1 + static_cast<int>(10 * unit(rng));
    std::vector<Measurement> ms;
    std::vector<int> corr;
    std::uniform_int_distribution<int> pick(0, model.vertex_count() - 1);
    for (int i = 0; i < k; ++i) {
      ms.push_back(sample_touch(target, pick(rng), 0.02, rng()));
      corr.push_back(pick(rng));
    }
    FusionConfig fc;
    fc.alpha = std::pow(10.0, -3.0 + 3.0 * unit(rng));

    Eigen::VectorXd grad;
    fusion_loss(model, prior, pose, shape, g, ms, corr, fc, &grad);
    Eigen::VectorXd fd(grad.size());
    for (Eigen::Index d = 0; d < grad.size(); ++d) {
      PoseParams p = pose, q = pose;
      p.theta.reshaped()[d] += h;
      q.theta.reshaped()[d] -= h;
      fd[d] = (fusion_loss(model, prior, p, shape, g, ms, corr, fc).total -
               fusion_loss(model, prior, q, shape, g, ms, corr, fc).total) /
              (2.0 * h);
    }
    worst = std::max(worst, (grad - fd).norm() / std::max(fd.norm(), 1e-300));
  }
  return {"loss gradient", worst <= limit,
          detail::format("max relative error %.3g over %d instances (limit %.0e)", worst, instances, limit)};
}

// Z-buffer against per-vertex ray casting on random body poses seen from
// random cameras; vertices on pixel-scale silhouettes are excluded.
inline CheckResult check_visibility_oracle(const BodyModel& model, std::uint64_t seed, int scenes, int threads = 1,
                                           double required = 0.999) {
  BenchConfig cfg;
  cfg.seed = seed;
  std::vector<int> compared(scenes, 0), agreed(scenes, 0), seen(scenes, 0);
  parallel_for(scenes, threads, [&](int s) {
    const auto sc = make_scenario(model, cfg, s);
    const Eigen::Matrix3Xd v = world_mesh(model.skin_mesh(sc.scene.pose, sc.scene.shape), sc.scene.global);
    std::mt19937_64 rng(mix_seed(seed, 1000 + s));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double dist = 0.5 + 2.5 * unit(rng);
    const Eigen::Vector3d aim(v.row(0).mean(), v.row(1).mean(), 0.2 + 1.4 * unit(rng));
    const Eigen::Vector3d eye = aim + Eigen::Vector3d(dist * std::cos(phi), dist * std::sin(phi), 0.0);
    const Camera cam = look_at(Eigen::Vector3d(eye.x(), eye.y(), 0.3 + 1.7 * unit(rng)), aim,
                               cfg.loop.grid.focal, cfg.loop.grid.width, cfg.loop.grid.height);
    const auto z = zbuffer_visibility(v, model.faces(), cam);
    const auto r = raycast_visibility_oracle(v, model.faces(), cam);
    const auto sil = silhouette_adjacent(v, model.faces(), cam);
    for (Eigen::Index i = 0; i < v.cols(); ++i) {
      if (sil[i]) continue;
      ++compared[s];
      agreed[s] += z.visible[i] == r.visible[i];
    }
    seen[s] = z.visible_count();
  });
  long total = 0, agree = 0, visible = 0;
  double worst = 1.0;
  for (int s = 0; s < scenes; ++s) {
    total += compared[s];
    agree += agreed[s];
    visible += seen[s];
    if (compared[s]) worst = std::min(worst, static_cast<double>(agreed[s]) / compared[s]);
  }
  const double rate = total ? static_cast<double>(agree) / total : 0.0;
  return {"visibility oracle", total > 0 && rate >= required,
          detail::format("agreement %.5f on %ld vertices (worst scene %.4f, %ld visible in total)", rate, total, worst,
                         visible)};
}

// Similarity-transformed joint sets must align to zero and a uniform 10 mm
// offset must give 10 mm.
inline CheckResult check_metric_identities(std::uint64_t seed, int instances) {
  double worst_pa = 0.0, worst_offset = 0.0;
  for (int t = 0; t < instances; ++t) {
    std::mt19937_64 rng(mix_seed(seed, t));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Matrix3Xd gt(3, 16);
    for (int c = 0; c < gt.cols(); ++c) gt.col(c) = Eigen::Vector3d(0.3 * normal(rng), 0.3 * normal(rng), 1.0 + 0.5 * normal(rng));
    const Eigen::Vector3d axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng)).normalized();
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(std::numbers::pi * unit(rng), axis).toRotationMatrix();
    const double scale = t % 4 == 0 ? 2.0 : 0.5 + 1.5 * unit(rng);
    const Eigen::Vector3d shift(normal(rng), normal(rng), normal(rng));
    const Eigen::Matrix3Xd pred = ((scale * rot) * gt).colwise() + shift;
    worst_pa = std::max(worst_pa, 1000.0 * pa_mpjpe(pred, gt));

    const Eigen::Vector3d dir = Eigen::Vector3d(normal(rng), normal(rng), normal(rng)).normalized();
    const Eigen::Matrix3Xd off = gt.colwise() + 0.01 * dir;
    worst_offset = std::max(worst_offset, std::abs(1000.0 * mpjpe(off, gt) - 10.0));
  }
  const bool ok = worst_pa <= 1e-9 && worst_offset <= 1e-9;
  return {"metric identities", ok,
          detail::format("max PA-MPJPE after similarity %.3g mm; max |MPJPE - 10 mm| %.3g mm", worst_pa, worst_offset)};
}

// A belief with identical samples has no spread anywhere; a camera that cuts
// off the legs leaves the ankles far more uncertain than the head.
inline CheckResult check_uncertainty_semantics(const BodyModel& model, int seeds, double ratio = 5.0) {
  const int nj = model.joint_count();
  GlobalPose g;
  g.translation = Eigen::Vector3d(0.0, 0.0, 0.97);
  auto pose = PoseParams::zero(nj);
  pose.theta.col(4) = Eigen::Vector3d(0, -1.2, 0);
  pose.theta.col(7) = Eigen::Vector3d(0, 1.2, 0);
  const auto shape = ShapeParams::zero(model.shape_count());

  PoseBelief flat;
  const BeliefSample s{pose, shape, g, 0.0};
  flat.samples.assign(8, s);
  for (int k = 0; k < 8; ++k) flat.samples[k].log_density = -0.5 * k;
  flat.generator = BeliefMixture({BeliefMixture::flatten(pose, shape)},
                                 Eigen::VectorXd::Constant(3 * nj + model.shape_count(), 0.1));
  flat.refresh_ml();
  bool zero = true;
  for (const auto mode : {VarianceWeighting::density, VarianceWeighting::uniform})
    zero = zero && (vertex_variance(model, flat, mode).array() == 0.0).all();

  // Horizontal view at chest height from 1.5 m: the frame ends above the knees.
  const Camera cam = look_at(Eigen::Vector3d(0, 1.5, 1.5), Eigen::Vector3d(0, 0, 1.5));
  double ankle = 0.0, head = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto b = simulate_camera_estimate(model, pose, shape, g, cam, static_cast<std::uint64_t>(seed));
    const auto field = vertex_variance(model, b);
    ankle += detail::region_mean(field, model, {12, 15});
    head += detail::region_mean(field, model, {3});
  }
  ankle /= seeds;
  head /= seeds;
  return {"uncertainty semantics", zero && ankle >= ratio * head,
          detail::format("degenerate field all zero: %s; ankle/head mean ratio %.1f over %d seeds (need %.0f)",
                         zero ? "yes" : "no", head > 0 ? ankle / head : std::numeric_limits<double>::infinity(), seeds,
                         ratio)};
}

// Viewpoint selection against an exhaustive scoring of every candidate.
// Every fifth instance has a zero field (all candidates tie) and every fifth
// one a grid listing each candidate twice.
inline CheckResult check_viewpoint_selection(const BodyModel& model, std::uint64_t seed, int instances, int threads = 1) {
  BenchConfig cfg;
  cfg.seed = seed;
  std::vector<int> ok(instances, 0);
  parallel_for(instances, threads, [&](int t) {
    const auto sc = make_scenario(model, cfg, t);
    const auto b = simulate_camera_estimate(model, sc.scene.pose, sc.scene.shape, sc.scene.global,
                                            sc.scene.start_camera, mix_seed(sc.scene.seed, 1), cfg.loop.estimator);
    const auto [v_ml, j_ml] = ml_mesh(model, b);
    Eigen::VectorXd sigma = vertex_variance(model, b, cfg.loop.weighting);
    if (t % 5 == 0) sigma.setZero();
    ViewpointGrid grid = make_viewpoint_grid(j_ml.col(0), cfg.loop.grid);
    if (t % 5 == 1) {
      const auto once = grid.candidates;
      grid.candidates.clear();
      for (const auto& c : once) {
        grid.candidates.push_back(c);
        grid.candidates.push_back(c);
      }
    }
    const auto choice = select_viewpoint(grid, v_ml, model.faces(), sigma, 1);

    int best = -1;
    double best_score = 0.0;
    bool match = choice.scores.size() == grid.candidates.size();
    for (std::size_t c = 0; c < grid.candidates.size(); ++c) {
      const auto mask = zbuffer_visibility(v_ml, model.faces(), grid.candidates[c]);
      double score = 0.0;
      for (int i = 0; i < model.vertex_count(); ++i) score += mask.visible[i] ? sigma[i] : 0.0;
      if (match) match = score == choice.scores[c];
      if (best < 0 || score > best_score) {
        best = static_cast<int>(c);
        best_score = score;
      }
    }
    ok[t] = match && choice.index == best && choice.blind == !(best_score > 0.0);
  });
  const int good = static_cast<int>(std::count(ok.begin(), ok.end(), 1));
  return {"viewpoint selection", good == instances, detail::format("%d/%d instances match the oracle", good, instances)};
}

// Target selection against an exhaustive argmax of sigma over the vertices
// the chain can reach. Fields cycle through continuous, quantized (ties),
// constant (all tie) and height-ordered (top vertices unreachable); one
// instance in ten uses a chain that reaches nothing.
inline CheckResult check_target_selection(const BodyModel& model, const KinematicChain& chain, std::uint64_t seed,
                                          int instances, int threads = 1) {
  BenchConfig cfg;
  cfg.seed = seed;
  const int meshes = 5;
  KinematicChain stuck = chain;
  for (auto& l : stuck.joints[0].limits) l = Limit{10.0, 10.5};

  struct Setup {
    Eigen::Matrix3Xd v;
    std::vector<SensorPlacement> committed;
    std::vector<char> reach, reach_stuck;
  };
  std::vector<Setup> setups(meshes);
  for (int m = 0; m < meshes; ++m) {
    const auto sc = make_scenario(model, cfg, m);
    setups[m].v = world_mesh(model.skin_mesh(sc.scene.pose, sc.scene.shape), sc.scene.global);
    setups[m].committed = {SensorPlacement{sc.scene.start_camera.rotation, sc.scene.start_camera.translation}};
    setups[m].reach.assign(model.vertex_count(), 0);
    setups[m].reach_stuck.assign(model.vertex_count(), 0);
    parallel_for(model.vertex_count(), threads, [&](int i) {
      setups[m].reach[i] = ik_reach(chain, setups[m].v.col(i), setups[m].committed, cfg.loop.ik).success;
      if (m == 0) setups[m].reach_stuck[i] = ik_reach(stuck, setups[m].v.col(i), setups[m].committed, cfg.loop.ik).success;
    });
  }

  int good = 0, ties = 0, empty = 0;
  for (int t = 0; t < instances; ++t) {
    const bool unreachable = t % 10 == 9;
    const Setup& s = setups[unreachable ? 0 : t % meshes];
    std::mt19937_64 rng(mix_seed(seed, 5000 + t));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd sigma(model.vertex_count());
    for (int i = 0; i < sigma.size(); ++i) {
      switch (t % 4) {
        case 0: sigma[i] = unit(rng); break;
        case 1: sigma[i] = std::floor(4.0 * unit(rng)); break;
        case 2: sigma[i] = 0.3; break;
        default: sigma[i] = s.v(2, i); break;
      }
    }
    const auto& reach = unreachable ? s.reach_stuck : s.reach;
    int best = -1;
    int tied = 0;
    for (int i = 0; i < sigma.size(); ++i) {
      if (!reach[i]) continue;
      if (best < 0 || sigma[i] > sigma[best]) {
        best = i;
        tied = 0;
      } else if (sigma[i] == sigma[best]) {
        ++tied;
      }
    }
    ties += tied > 0;
    empty += best < 0;
    const auto got = select_sensor_target(sigma, s.v, unreachable ? stuck : chain, s.committed, cfg.loop.ik);
    good += got ? got->vertex == best : best < 0;
  }
  return {"target selection", good == instances,
          detail::format("%d/%d instances match the oracle (%d with tied maxima, %d with nothing reachable)", good,
                         instances, ties, empty)};
}

inline CheckResult check_touch_noise(std::uint64_t seed, int draws, double sigma = 0.02, double tolerance = 0.05) {
  Eigen::Matrix3Xd v(3, 1);
  v << 0.2, -0.1, 1.0;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  for (int k = 0; k < draws; ++k) {
    const Eigen::Vector3d d = sample_touch(v, 0, sigma, mix_seed(seed, k)).point - v.col(0);
    sum += d;
    sq += d.cwiseProduct(d);
  }
  const Eigen::Vector3d mean = sum / draws;
  Eigen::Vector3d sd;
  bool ok = true;
  for (int a = 0; a < 3; ++a) {
    sd[a] = std::sqrt((sq[a] - draws * mean[a] * mean[a]) / (draws - 1));
    ok = ok && std::abs(sd[a] - sigma) <= tolerance * sigma;
  }
  return {"touch noise", ok,
          detail::format("per-axis std %.5f %.5f %.5f m from %d draws (target %.3f +- %.0f%%)", sd[0], sd[1], sd[2],
                         draws, sigma, tolerance * 100.0)};
}

}  // namespace proxhmr
