#include <gtest/gtest.h>

#include <random>

#include "proxhmr/kinematics.hpp"

using namespace proxhmr;

namespace {

constexpr double kH = 0.3;

KinematicChain planar_arm(double limit = std::numbers::pi) {
  KinematicChain c;
  ChainJoint a;
  a.axis = Eigen::Vector3d::UnitZ();
  a.limits = {{-limit, limit}};
  a.origin.translation = Eigen::Vector3d(0, 0, kH);
  ChainJoint b = a;
  b.origin.translation = Eigen::Vector3d(0.5, 0, 0);
  c.joints = {a, b};
  c.tool.translation = Eigen::Vector3d(0.5, 0, 0);
  return c;
}

Eigen::VectorXd q2(double a, double b) { return (Eigen::VectorXd(2) << a, b).finished(); }

}  // namespace

TEST(Fk, RestPlacement) {
  const auto t = fk(planar_arm(), q2(0, 0));
  EXPECT_TRUE(t.translation.isApprox(Eigen::Vector3d(1.0, 0, kH)));
  EXPECT_TRUE(t.rotation.isIdentity());
}

TEST(Fk, PlanarTrig) {
  EXPECT_TRUE(fk(planar_arm(), q2(std::numbers::pi / 2, 0)).translation.isApprox(Eigen::Vector3d(0, 1.0, kH), 1e-12));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 50; ++k) {
    const double a = u(rng), b = u(rng);
    const Eigen::Vector3d expect(0.5 * std::cos(a) + 0.5 * std::cos(a + b), 0.5 * std::sin(a) + 0.5 * std::sin(a + b), kH);
    EXPECT_LT((fk(planar_arm(), q2(a, b)).translation - expect).norm(), 1e-12);
  }
}

TEST(Fk, RejectsOutOfLimitAndWrongSize) {
  EXPECT_THROW(fk(planar_arm(1.0), q2(1.5, 0)), InvalidInput);
  EXPECT_THROW(fk(planar_arm(), Eigen::VectorXd::Zero(3)), InvalidInput);
}

TEST(Fk, DefaultChainJacobianMatchesFiniteDifferences) {
  const auto chain = default_touch_chain();
  chain.validate();
  EXPECT_EQ(chain.dof(), 6);
  Eigen::VectorXd q(6);
  q << 0.3, -0.2, 0.7, 0.4, -0.8, 0.5;
  Eigen::Matrix3Xd jac;
  detail::chain_fk(chain, q, &jac);
  for (int d = 0; d < 6; ++d) {
    Eigen::VectorXd a = q, b = q;
    a[d] += 1e-6;
    b[d] -= 1e-6;
    const Eigen::Vector3d fd = (fk(chain, a).translation - fk(chain, b).translation) / 2e-6;
    EXPECT_LT((fd - jac.col(d)).norm(), 1e-8) << d;
  }
}

TEST(Ik, InsideWorkspaceSucceeds) {
  const auto r = ik_reach(planar_arm(), Eigen::Vector3d(0.8 * std::cos(0.7), 0.8 * std::sin(0.7), kH), {});
  EXPECT_TRUE(r.success);
  EXPECT_LE(r.residual, 0.01);
  EXPECT_LE((fk(planar_arm(), r.q).translation - Eigen::Vector3d(0.8 * std::cos(0.7), 0.8 * std::sin(0.7), kH)).norm(),
            0.01);
}

TEST(Ik, BeyondReachFails) {
  const auto r = ik_reach(planar_arm(), Eigen::Vector3d(1.5, 0, kH), {});
  EXPECT_FALSE(r.success);
  EXPECT_NEAR(r.residual, 0.5, 1e-3);
}

TEST(Ik, ClearanceViolationFails) {
  const Eigen::Vector3d target(0.0, 0.8, kH);
  ASSERT_TRUE(ik_reach(planar_arm(), target, {}).success);
  SensorPlacement occupied;
  occupied.translation = target + Eigen::Vector3d(0.02, 0, 0);
  EXPECT_FALSE(ik_reach(planar_arm(), target, {occupied}).success);
  occupied.translation = target + Eigen::Vector3d(0.2, 0, 0);
  EXPECT_TRUE(ik_reach(planar_arm(), target, {occupied}).success);
}

TEST(Ik, RoundTripAndDeterminismOnDefaultChain) {
  const auto chain = default_touch_chain();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.6, 0.6), h(0.1, 1.6);
  int successes = 0;
  for (int k = 0; k < 40; ++k) {
    const Eigen::Vector3d target(u(rng), u(rng), h(rng));
    const auto a = ik_reach(chain, target, {});
    const auto b = ik_reach(chain, target, {});
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.success, b.success);
    if (a.success) {
      ++successes;
      EXPECT_LE((fk(chain, a.q).translation - target).norm(), 0.01);
      EXPECT_TRUE(chain.within_limits(a.q));
    }
  }
  EXPECT_EQ(successes, 40);
}

TEST(Ik, DefaultChainCannotReachAboveItsArm) {
  EXPECT_FALSE(ik_reach(default_touch_chain(), Eigen::Vector3d(0, 0, 2.0), {}).success);
}

TEST(Ik, ShrinkingLimitsNeverHelps) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi), rad(0.05, 1.2);
  for (int k = 0; k < 60; ++k) {
    const double a = ang(rng), r = rad(rng);
    const Eigen::Vector3d target(r * std::cos(a), r * std::sin(a), kH);
    const bool wide = ik_reach(planar_arm(), target, {}).success;
    const bool narrow = ik_reach(planar_arm(1.0), target, {}).success;
    EXPECT_TRUE(wide || !narrow) << k;
  }
}

TEST(Ik, ZeroLengthChainIsInfeasible) {
  KinematicChain c;
  ChainJoint j;
  j.limits = {{-1, 1}};
  c.joints = {j};
  EXPECT_FALSE(ik_reach(c, Eigen::Vector3d(0.3, 0, 0), {}).success);
}

TEST(ChainIo, RoundTripAndErrors) {
  const auto chain = default_touch_chain();
  const auto j = chain_to_json(chain);
  const auto back = chain_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(chain_to_json(back).dump(), j.dump());
  auto bad = j;
  bad["joints"][1]["limits"][0] = {1.0, -1.0};
  EXPECT_THROW(chain_from_json(bad), FormatError);
  bad = j;
  bad["joints"][1]["type"] = "spherical";
  EXPECT_THROW(chain_from_json(bad), FormatError);
  bad = j;
  bad["joints"][1]["axis"] = {0.0, 2.0, 0.0};
  EXPECT_THROW(chain_from_json(bad), FormatError);
  EXPECT_THROW(load_chain("/nonexistent/chain.json"), FormatError);
}
