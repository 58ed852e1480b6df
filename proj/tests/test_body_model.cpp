#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "proxhmr/body_model.hpp"
#include "proxhmr/template_io.hpp"

using namespace proxhmr;

namespace {

const BodyModel& default_model() {
  static const BodyModel model(make_default_template());
  return model;
}

PoseParams random_pose(std::mt19937_64& rng, int joints, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  PoseParams p = PoseParams::zero(joints);
  for (int j = 0; j < joints; ++j) p.theta.col(j) = Eigen::Vector3d(n(rng), n(rng), n(rng));
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

// Two joints, child at (1,0,0); a square of vertices around the child skinned
// fully to it and one vertex at the root skinned to the root.
BodyTemplate two_bone_template() {
  BodyTemplate t;
  t.skeleton.names = {"root", "child"};
  t.skeleton.parent = {kNoParent, 0};
  t.skeleton.rest_offsets = {Eigen::Vector3d::Zero(), Eigen::Vector3d(1.0, 0.0, 0.0)};
  t.vertices_rest.resize(3, 4);
  t.vertices_rest.col(0) = Eigen::Vector3d(0.0, 0.0, 0.0);
  t.vertices_rest.col(1) = Eigen::Vector3d(2.0, 0.0, 0.0);
  t.vertices_rest.col(2) = Eigen::Vector3d(1.5, 0.5, 0.0);
  t.vertices_rest.col(3) = Eigen::Vector3d(1.0, 0.0, 1.0);
  t.faces = {{0, 1, 2}, {1, 2, 3}};
  t.skin_weights = Eigen::MatrixXd::Zero(4, 2);
  t.skin_weights(0, 0) = 1.0;
  for (int i = 1; i < 4; ++i) t.skin_weights(i, 1) = 1.0;
  t.joint_regressor = Eigen::MatrixXd::Zero(2, 4);
  t.joint_regressor(0, 0) = 1.0;
  t.joint_regressor(1, 1) = 0.5;
  t.joint_regressor(1, 2) = 0.5;
  return t;
}

}  // namespace

TEST(BodyTemplate, DefaultTemplateIsValid) {
  const auto t = make_default_template();
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.vertex_count(), 512);
  EXPECT_EQ(t.joint_count(), 16);
  EXPECT_EQ(t.shape_count(), 4);
}

TEST(BodyTemplate, ResolutionIsConfigurable) {
  const auto t = make_default_template({.ring_segments = 12, .ring_scale = 2});
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.vertex_count(), 16 * 2 + 12 * 2 * 60);
}

TEST(BodyTemplate, ValidationRejectsBrokenWeights) {
  auto t = make_default_template();
  t.skin_weights(3, 0) += 0.1;
  EXPECT_THROW(t.validate(), InvalidInput);
  t = make_default_template();
  const int last = t.vertex_count() - 1;
  std::erase_if(t.faces, [&](const Eigen::Vector3i& f) { return (f.array() == last).any(); });
  EXPECT_THROW(t.validate(), InvalidInput);
  t = make_default_template();
  t.skeleton.parent[5] = 9;
  EXPECT_THROW(t.validate(), InvalidInput);
}

TEST(SkinMesh, RestPoseReturnsTemplateBitwise) {
  const auto& model = default_model();
  const auto v = model.skin_mesh(PoseParams::zero(16), ShapeParams::zero(4));
  const auto& v0 = model.body_template().vertices_rest;
  ASSERT_EQ(v.cols(), v0.cols());
  EXPECT_EQ(std::memcmp(v.data(), v0.data(), sizeof(double) * v0.size()), 0);
}

TEST(SkinMesh, HeightBlendshapeMatchesDirectEvaluation) {
  const auto& model = default_model();
  const auto& t = model.body_template();
  ShapeParams beta = ShapeParams::zero(4);
  beta.beta[0] = 1.0;
  const auto v = model.skin_mesh(PoseParams::zero(16), beta);
  const Eigen::Matrix3Xd direct = t.vertices_rest + t.shape_dirs[0];
  EXPECT_LE((v - direct).cwiseAbs().maxCoeff(), 1e-12);
  for (int i = 0; i < v.cols(); ++i) {
    EXPECT_NEAR(v(2, i), 1.05 * t.vertices_rest(2, i), 1e-12);
    EXPECT_DOUBLE_EQ(v(0, i), t.vertices_rest(0, i));
  }
}

TEST(SkinMesh, ShapeKeepsPelvisAtOrigin) {
  const auto& model = default_model();
  ShapeParams beta{Eigen::Vector4d(1.5, -2.0, 3.0, -1.0)};
  const auto state = model.forward(PoseParams::zero(16), beta);
  EXPECT_LE(state.shaped_joints[0].norm(), 1e-12);
  const auto v = model.posed_vertices(state);
  const auto j = model.regress_joints(v, GlobalPose{});
  EXPECT_LE(j.col(0).norm(), 1e-9);
}

TEST(SkinMesh, ChildRotationRigidlyRotatesChildVertices) {
  const BodyModel model(two_bone_template());
  PoseParams pose = PoseParams::zero(2);
  pose.theta.col(1) = Eigen::Vector3d(0.0, 0.0, std::numbers::pi / 2.0);
  const auto v = model.skin_mesh(pose, ShapeParams::zero(0));
  // Hand-computed: rotate (p - (1,0,0)) by +90 deg about z, add (1,0,0) back.
  EXPECT_LE((v.col(0) - Eigen::Vector3d(0.0, 0.0, 0.0)).norm(), 1e-15);
  EXPECT_LE((v.col(1) - Eigen::Vector3d(1.0, 1.0, 0.0)).norm(), 1e-12);
  EXPECT_LE((v.col(2) - Eigen::Vector3d(0.5, 0.5, 0.0)).norm(), 1e-12);
  EXPECT_LE((v.col(3) - Eigen::Vector3d(1.0, 0.0, 1.0)).norm(), 1e-12);
}

TEST(SkinMesh, RejectsNonFiniteParameters) {
  const auto& model = default_model();
  PoseParams pose = PoseParams::zero(16);
  pose.theta(1, 4) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(model.skin_mesh(pose, ShapeParams::zero(4)), InvalidInput);
  ShapeParams beta = ShapeParams::zero(4);
  beta.beta[2] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(model.skin_mesh(PoseParams::zero(16), beta), InvalidInput);
  EXPECT_THROW(model.skin_mesh(PoseParams::zero(15), ShapeParams::zero(4)), InvalidInput);
}

TEST(SkinMesh, DeterministicBitwise) {
  const auto& model = default_model();
  std::mt19937_64 rng(7);
  const auto pose = random_pose(rng, 16, 0.4);
  ShapeParams beta{Eigen::Vector4d(0.3, -0.2, 0.5, 1.0)};
  const auto a = model.skin_mesh(pose, beta);
  const auto b = model.skin_mesh(pose, beta);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(SkinMesh, ShapeCoefficientsAreClamped) {
  const auto& model = default_model();
  ShapeParams big = ShapeParams::zero(4);
  big.beta[0] = 40.0;
  ShapeParams at_limit = ShapeParams::zero(4);
  at_limit.beta[0] = 5.0;
  EXPECT_EQ(model.skin_mesh(PoseParams::zero(16), big), model.skin_mesh(PoseParams::zero(16), at_limit));
  big.clamp();
  EXPECT_EQ(big.beta[0], 5.0);
}

TEST(WorldMesh, IdentityAndTranslation) {
  const auto& model = default_model();
  const auto& v0 = model.body_template().vertices_rest;
  EXPECT_EQ(world_mesh(v0, GlobalPose{}), v0);
  GlobalPose g;
  g.translation = Eigen::Vector3d(0.1, -2.0, 0.5);
  const auto v = world_mesh(v0, g);
  for (int i = 0; i < v.cols(); ++i) EXPECT_LE((v.col(i) - v0.col(i) - g.translation).norm(), 1e-15);
}

TEST(WorldMesh, MatchesDirectArithmetic) {
  std::mt19937_64 rng(11);
  GlobalPose g{random_rotation(rng), Eigen::Vector3d(0.3, 0.2, -0.7)};
  Eigen::Matrix3Xd pts(3, 1);
  pts.col(0) = Eigen::Vector3d(0.4, -1.1, 2.5);
  const auto v = world_mesh(pts, g);
  for (int r = 0; r < 3; ++r) {
    double expected = g.translation[r];
    for (int c = 0; c < 3; ++c) expected += g.rotation(r, c) * pts(c, 0);
    EXPECT_NEAR(v(r, 0), expected, 1e-14);
  }
}

TEST(WorldMesh, RejectsImproperRotation) {
  GlobalPose g;
  g.rotation(0, 0) = -1.0;  // reflection
  EXPECT_THROW(world_mesh(Eigen::Matrix3Xd::Zero(3, 2), g), InvalidInput);
}

TEST(RegressJoints, OneHotAndMidpointRows) {
  Eigen::Matrix3Xd v(3, 3);
  v << 0.0, 1.0, 3.0,
       0.0, 2.0, 0.0,
       1.0, 0.0, 5.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 3);
  w(0, 1) = 1.0;
  w(1, 0) = 0.5;
  w(1, 2) = 0.5;
  const auto j = regress_joints(w, v, GlobalPose{});
  EXPECT_EQ(j.col(0), v.col(1));
  EXPECT_LE((j.col(1) - Eigen::Vector3d(1.5, 0.0, 3.0)).norm(), 1e-15);
}

TEST(RegressJoints, DefaultRegressorRecoversRestSkeleton) {
  const auto& model = default_model();
  const auto j = model.regress_joints(model.body_template().vertices_rest, GlobalPose{});
  const auto rest = model.body_template().skeleton.rest_positions();
  for (int k = 0; k < model.joint_count(); ++k) EXPECT_LE((j.col(k) - rest[k]).norm(), 1e-6) << k;
}

TEST(BodyModelProperty, RigidEquivariance) {
  const auto& model = default_model();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = random_pose(rng, 16, 0.5);
    const auto local = model.skin_mesh(pose, ShapeParams::zero(4));
    GlobalPose g{random_rotation(rng), Eigen::Vector3d(0.5, -0.2, 1.0)};
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d t(1.0, 2.0, -3.0);
    const GlobalPose moved{r * g.rotation, r * g.translation + t};
    const Eigen::Matrix3Xd expected = (r * world_mesh(local, g)).colwise() + t;
    EXPECT_LE((world_mesh(local, moved) - expected).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(BodyModelProperty, VertexJacobianMatchesCentralDifferences) {
  const auto& model = default_model();
  std::mt19937_64 rng(5);
  ShapeParams beta{Eigen::Vector4d(0.5, 0.2, -0.4, 0.3)};
  for (int trial = 0; trial < 10; ++trial) {
    const auto pose = random_pose(rng, 16, 0.6);
    const auto state = model.forward(pose, beta);
    const int i = static_cast<int>(rng() % model.vertex_count());
    const auto jac = model.vertex_jacobian(state, i);
    const double h = 1e-6;
    for (int c = 0; c < 3 * 16; ++c) {
      PoseParams plus = pose, minus = pose;
      plus.theta(c % 3, c / 3) += h;
      minus.theta(c % 3, c / 3) -= h;
      const Eigen::Vector3d fd =
          (model.posed_vertex(model.forward(plus, beta), i) - model.posed_vertex(model.forward(minus, beta), i)) /
          (2.0 * h);
      EXPECT_LE((fd - jac.col(c)).norm(), 1e-7) << "vertex " << i << " column " << c;
    }
  }
}

TEST(BodyModelProperty, VertexGradientEqualsJacobianTranspose) {
  const auto& model = default_model();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto state = model.forward(random_pose(rng, 16, 0.6), ShapeParams::zero(4));
    const int i = static_cast<int>(rng() % model.vertex_count());
    const Eigen::Vector3d dir = Eigen::Vector3d::Random();
    Eigen::VectorXd g = Eigen::VectorXd::Ones(48);
    model.add_vertex_gradient(state, i, dir, g);
    const Eigen::VectorXd expected = Eigen::VectorXd::Ones(48) + model.vertex_jacobian(state, i).transpose() * dir;
    EXPECT_LE((g - expected).norm(), 1e-12) << i;
  }
}

TEST(TemplateIo, RoundTripPreservesSkinning) {
  const auto path = std::filesystem::temp_directory_path() / "proxhmr_template_test.json";
  const auto t = make_default_template();
  save_template(t, path.string());
  const BodyModel loaded(load_template(path.string()));
  std::filesystem::remove(path);
  std::mt19937_64 rng(9);
  const auto pose = random_pose(rng, 16, 0.5);
  ShapeParams beta{Eigen::Vector4d(0.1, 0.2, 0.3, 0.4)};
  const auto a = default_model().skin_mesh(pose, beta);
  const auto b = loaded.skin_mesh(pose, beta);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(loaded.faces(), default_model().faces());
}

TEST(TemplateIo, RejectsWrongFormat) {
  nlohmann::json j = template_to_json(make_default_template());
  j["version"] = 99;
  EXPECT_THROW(template_from_json(j), FormatError);
  j = template_to_json(make_default_template());
  j["faces"][0] = {0, 1, 100000};
  EXPECT_THROW(template_from_json(j), FormatError);
  EXPECT_THROW(load_template("/nonexistent/file.json"), FormatError);
}
