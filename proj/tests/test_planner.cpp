#include <gtest/gtest.h>

#include "proxhmr/planner.hpp"

using namespace proxhmr;

namespace {

const BodyModel& model() {
  static const BodyModel m(make_default_template());
  return m;
}

GlobalPose standing_global() {
  GlobalPose g;
  g.translation = Eigen::Vector3d(0.0, 0.0, 0.97);
  return g;
}

Eigen::Matrix3Xd standing_mesh() {
  auto p = PoseParams::zero(16);
  p.theta.col(4) = Eigen::Vector3d(0, 1.2, 0);
  p.theta.col(7) = Eigen::Vector3d(0, -1.2, 0);
  return world_mesh(model().skin_mesh(p, ShapeParams::zero(4)), standing_global());
}

Scene standing_scene(std::uint64_t seed) {
  Scene s;
  s.seed = seed;
  s.pose = PoseParams::zero(16);
  s.pose.theta.col(4) = Eigen::Vector3d(0, 1.2, 0);
  s.pose.theta.col(7) = Eigen::Vector3d(0, -1.2, 0);
  s.shape = ShapeParams::zero(4);
  s.global = standing_global();
  s.start_camera = look_at(Eigen::Vector3d(0.0, 0.7, 1.0), s.global.translation);
  return s;
}

LoopOptions quick_options() {
  LoopOptions o;
  o.n_points = 3;
  o.snapshots = {0, 1, 3};
  o.estimator.samples = 8;
  o.fusion.max_iterations = 20;
  return o;
}

std::vector<SensorPlacement> camera_only() {
  const auto cam = look_at(Eigen::Vector3d(0.0, 0.7, 1.0), Eigen::Vector3d(0, 0, 0.97));
  return {SensorPlacement{cam.rotation, cam.translation}};
}

}  // namespace

TEST(ViewpointGrid, GeometryOfCandidates) {
  const Eigen::Vector3d pelvis(0.2, -0.1, 0.9);
  const auto grid = make_viewpoint_grid(pelvis);
  ASSERT_EQ(grid.candidates.size(), 24u);
  const double heights[3] = {0.6, 1.0, 1.4};
  for (std::size_t c = 0; c < grid.candidates.size(); ++c) {
    const auto& cam = grid.candidates[c];
    EXPECT_NEAR((cam.translation - pelvis).head<2>().norm(), 0.7, 1e-12);
    EXPECT_NEAR(cam.translation.z(), heights[c % 3], 1e-12);
    const auto px = project(pelvis, cam);
    ASSERT_TRUE(px);
    EXPECT_NEAR(px->x, cam.cx(), 1e-6);
    EXPECT_NEAR(px->y, cam.cy(), 1e-6);
  }
  GridOptions bad;
  bad.heights.clear();
  EXPECT_THROW(make_viewpoint_grid(pelvis, bad), InvalidInput);
}

TEST(ViewpointScore, SumsUncertaintyOverVisibleVertices) {
  const auto v = standing_mesh();
  const auto cam = look_at(Eigen::Vector3d(0.0, 0.7, 1.0), Eigen::Vector3d(0, 0, 0.97));
  const auto mask = zbuffer_visibility(v, model().faces(), cam);
  EXPECT_EQ(score_viewpoint(cam, v, model().faces(), Eigen::VectorXd::Zero(v.cols())), 0.0);
  EXPECT_EQ(score_viewpoint(cam, v, model().faces(), Eigen::VectorXd::Ones(v.cols())),
            static_cast<double>(mask.visible_count()));
  EXPECT_THROW(score_viewpoint(cam, v, model().faces(), Eigen::VectorXd::Ones(3)), InvalidInput);
}

TEST(ViewpointSelection, PrefersSideWithUncertainty) {
  const auto v = standing_mesh();
  const Eigen::Vector3d pelvis = standing_global().translation;
  // Only the back of the body (-y) is uncertain.
  Eigen::VectorXd sigma(v.cols());
  for (Eigen::Index i = 0; i < v.cols(); ++i) sigma[i] = v(1, i) < pelvis.y() - 0.02 ? 1.0 : 0.0;
  const auto grid = make_viewpoint_grid(pelvis);
  const auto choice = select_viewpoint(grid, v, model().faces(), sigma);
  EXPECT_FALSE(choice.blind);
  EXPECT_LT(choice.camera.translation.y(), pelvis.y());
  for (double s : choice.scores) EXPECT_LE(s, choice.scores[choice.index]);
  const auto threaded = select_viewpoint(grid, v, model().faces(), sigma, 4);
  EXPECT_EQ(threaded.scores, choice.scores);
  EXPECT_EQ(threaded.index, choice.index);
}

TEST(ViewpointSelection, BlindWhenNothingUncertainTiesToFirst) {
  const auto v = standing_mesh();
  const auto grid = make_viewpoint_grid(standing_global().translation);
  const auto choice = select_viewpoint(grid, v, model().faces(), Eigen::VectorXd::Zero(v.cols()));
  EXPECT_TRUE(choice.blind);
  EXPECT_EQ(choice.index, 0);
  EXPECT_THROW(select_viewpoint(ViewpointGrid{}, v, model().faces(), Eigen::VectorXd::Zero(v.cols())), InvalidInput);
}

TEST(SensorTarget, HighestReachableUncertainty) {
  const auto v = standing_mesh();
  const auto chain = default_touch_chain();
  std::vector<int> reachable;
  for (int i = 0; i < v.cols() && reachable.size() < 3; i += 37) {
    if (ik_reach(chain, v.col(i), camera_only()).success) reachable.push_back(i);
  }
  ASSERT_EQ(reachable.size(), 3u);
  const int low = reachable[0], top = reachable[1], twin = reachable[2];
  Eigen::VectorXd sigma = Eigen::VectorXd::Zero(v.cols());
  sigma[low] = 0.5;
  sigma[top] = 0.9;
  sigma[twin] = 0.9;
  const auto t = select_sensor_target(sigma, v, chain, camera_only());
  ASSERT_TRUE(t);
  EXPECT_EQ(t->vertex, top);
  EXPECT_TRUE(t->ik.success);
  EXPECT_LE((t->placement.translation - v.col(top)).norm(), IkOptions{}.tolerance);
  // Move the top vertices out of reach: the next one wins.
  Eigen::Matrix3Xd moved = v;
  moved.col(top) = Eigen::Vector3d(0, 0, 5.0);
  moved.col(twin) = Eigen::Vector3d(0, 0, 5.0);
  EXPECT_EQ(select_sensor_target(sigma, moved, chain, camera_only())->vertex, low);
}

TEST(SensorTarget, InfeasibleAndPreconditions) {
  Eigen::Matrix3Xd far = standing_mesh();
  far.row(0).array() += 20.0;
  const Eigen::VectorXd sigma = Eigen::VectorXd::LinSpaced(far.cols(), 0.0, 1.0);
  EXPECT_FALSE(select_sensor_target(sigma, far, default_touch_chain(), camera_only()));
  EXPECT_THROW(select_sensor_target(sigma, far, default_touch_chain(), {}), InvalidInput);
  EXPECT_THROW(select_sensor_target(Eigen::VectorXd::Zero(2), far, default_touch_chain(), camera_only()), InvalidInput);
}

TEST(SensorTarget, ClearanceFromCommittedPlacements) {
  const auto v = standing_mesh();
  const auto chain = default_touch_chain();
  std::vector<int> reachable;
  for (int i = 0; i < v.cols() && reachable.size() < 2; i += 37) {
    if (ik_reach(chain, v.col(i), camera_only()).success) reachable.push_back(i);
  }
  ASSERT_EQ(reachable.size(), 2u);
  Eigen::VectorXd sigma = Eigen::VectorXd::Zero(v.cols());
  sigma[reachable[1]] = 1.0;
  sigma[reachable[0]] = 0.5;
  auto committed = camera_only();
  committed.push_back(SensorPlacement{Eigen::Matrix3d::Identity(), v.col(reachable[1])});
  const auto t = select_sensor_target(sigma, v, chain, committed);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->vertex, reachable[0]);
}

TEST(Loop, SnapshotsStepsAndDeterminism) {
  const auto scene = standing_scene(42);
  const auto opt = quick_options();
  const auto r = plan_and_measure_loop(model(), scene, default_touch_chain(), opt);
  ASSERT_EQ(r.snapshots.size(), 3u);
  EXPECT_EQ(r.snapshots[0].n, 0);
  EXPECT_EQ(r.snapshots[2].n, 3);
  EXPECT_EQ(r.snapshots[0].joints.cols(), 16);
  ASSERT_EQ(r.steps.size(), 3u);
  std::vector<SensorPlacement> committed = {SensorPlacement{r.plan.chosen_camera.rotation, r.plan.chosen_camera.translation}};
  for (const auto& t : r.plan.targets) {
    EXPECT_TRUE(t.ik.success);
    for (const auto& c : committed) EXPECT_GE((t.placement.translation - c.translation).norm(), IkOptions{}.clearance);
    committed.push_back(t.placement);
  }
  EXPECT_EQ(r.measurements.size(), r.plan.targets.size());
  for (const auto& s : r.steps) {
    if (s.vertex >= 0) {
      EXPECT_TRUE(s.event.empty());
    }
  }
  const auto again = plan_and_measure_loop(model(), scene, default_touch_chain(), opt);
  EXPECT_EQ(again.snapshots.back().joints, r.snapshots.back().joints);
  EXPECT_EQ(plan_trace_to_json(again).dump(), plan_trace_to_json(r).dump());
  const auto j = plan_trace_to_json(r);
  EXPECT_EQ(j["format"], "proxhmr-plan-trace");
  EXPECT_EQ(j["steps"].size(), 3u);
}

TEST(Loop, UnreachableChainLogsAndKeepsBelief) {
  const auto scene = standing_scene(7);
  auto opt = quick_options();
  auto chain = default_touch_chain();
  for (auto& l : chain.joints[0].limits) l = Limit{10.0, 10.5};
  const auto stage = camera_stage(model(), scene, opt);
  const auto r = measurement_loop(model(), scene, stage, chain, Selection::active, FusionMethod::sensor_fusion, opt);
  EXPECT_TRUE(r.measurements.empty());
  for (const auto& s : r.steps) EXPECT_EQ(s.event, "infeasible");
  EXPECT_EQ(r.snapshots.front().joints, r.snapshots.back().joints);
  EXPECT_EQ(r.snapshots.back().measured, 0);
}

TEST(Loop, ClosestSampleKeepsParameters) {
  const auto scene = standing_scene(9);
  const auto opt = quick_options();
  const auto stage = camera_stage(model(), scene, opt);
  for (auto sel : {Selection::active, Selection::random}) {
    const auto r = measurement_loop(model(), scene, stage, default_touch_chain(), sel, FusionMethod::closest_sample, opt);
    ASSERT_EQ(r.belief.size(), stage.belief.size());
    for (int s = 0; s < r.belief.size(); ++s) EXPECT_EQ(r.belief.samples[s].pose.theta, stage.belief.samples[s].pose.theta);
    EXPECT_EQ(r.measurements.size(), 3u);
  }
}

TEST(Loop, ActiveTouchReducesTargetUncertainty) {
  const auto scene = standing_scene(11);
  auto opt = quick_options();
  opt.n_points = 1;
  opt.estimator.samples = 16;
  opt.fusion.max_iterations = 60;
  const auto r = plan_and_measure_loop(model(), scene, default_touch_chain(), opt);
  ASSERT_EQ(r.steps.size(), 1u);
  ASSERT_GE(r.steps[0].vertex, 0);
  EXPECT_LT(r.steps[0].sigma_after, r.steps[0].sigma_before);
}
