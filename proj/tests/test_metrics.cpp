#include <gtest/gtest.h>

#include <random>

#include "proxhmr/metrics.hpp"

using namespace proxhmr;

namespace {

Eigen::Matrix3Xd random_joints(std::uint64_t seed, int n = 16) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.4);
  Eigen::Matrix3Xd j(3, n);
  for (int c = 0; c < n; ++c) j.col(c) = Eigen::Vector3d(d(rng), d(rng), d(rng));
  return j;
}

// Similarity alignment written out from the SVD of the cross-covariance.
double svd_aligned_error(const Eigen::Matrix3Xd& p, const Eigen::Matrix3Xd& g) {
  const Eigen::Vector3d mp = p.rowwise().mean(), mg = g.rowwise().mean();
  const Eigen::Matrix3Xd pc = p.colwise() - mp, gc = g.colwise() - mg;
  const Eigen::Matrix3d cov = gc * pc.transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1;
  const Eigen::Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();
  const double scale = (svd.singularValues().asDiagonal() * s).trace() / pc.squaredNorm();
  const Eigen::Matrix3Xd aligned = ((scale * r) * pc).colwise() + mg;
  double e = 0.0;
  for (int c = 0; c < p.cols(); ++c) e += (aligned.col(c) - g.col(c)).norm();
  return e / p.cols();
}

}  // namespace

TEST(Mpjpe, HandComputed) {
  Eigen::Matrix3Xd g = Eigen::Matrix3Xd::Zero(3, 2), p = Eigen::Matrix3Xd::Zero(3, 2);
  p.col(0) = Eigen::Vector3d(0.3, 0.4, 0.0);  // 0.5 off
  p.col(1) = Eigen::Vector3d(0.0, 0.0, 0.1);  // 0.1 off
  EXPECT_NEAR(mpjpe(p, g), 0.3, 1e-15);
  EXPECT_NEAR(mpjpe(p, g, true), 0.5 * Eigen::Vector3d(-0.3, -0.4, 0.1).norm(), 1e-15);
  EXPECT_EQ(mpjpe(g, g), 0.0);
  EXPECT_THROW(mpjpe(p, Eigen::Matrix3Xd::Zero(3, 3)), InvalidInput);
}

TEST(Mpjpe, PelvisAlignedIgnoresTranslation) {
  const auto g = random_joints(1);
  const Eigen::Matrix3Xd p = g.colwise() + Eigen::Vector3d(0.2, -0.5, 1.0);
  EXPECT_NEAR(mpjpe(p, g, true), 0.0, 1e-12);
  EXPECT_NEAR(mpjpe(p, g), Eigen::Vector3d(0.2, -0.5, 1.0).norm(), 1e-12);
}

TEST(PaMpjpe, SimilarityTransformIsRemoved) {
  const auto g = random_joints(2);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(1.1, Eigen::Vector3d(0.2, -1, 0.4).normalized()).toRotationMatrix();
  const Eigen::Matrix3Xd p = ((1.7 * r) * g).colwise() + Eigen::Vector3d(3, 1, -2);
  EXPECT_NEAR(pa_mpjpe(p, g), 0.0, 1e-10);
  EXPECT_FALSE(pa_mpjpe_detail(p, g).degenerate);
}

TEST(PaMpjpe, MatchesSvdOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto g = random_joints(10 + s);
    const Eigen::Matrix3Xd p = g + 0.1 * random_joints(100 + s);
    EXPECT_NEAR(pa_mpjpe(p, g), svd_aligned_error(p, g), 1e-10) << s;
    EXPECT_LE(pa_mpjpe(p, g), mpjpe(p, g) + 1e-12);
  }
}

TEST(PaMpjpe, CollinearFallsBackToTranslation) {
  Eigen::Matrix3Xd g(3, 4);
  g << 0, 1, 2, 3, 0, 0, 0, 0, 0, 0, 0, 0;
  const Eigen::Matrix3Xd p = g.colwise() + Eigen::Vector3d(0.5, 0.5, 0.5);
  const auto r = pa_mpjpe_detail(p, g);
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.error, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(pa_mpjpe(Eigen::Matrix3Xd::Zero(3, 4), g)));
}

// Least-squares alignment minimizes the RMS error, not the mean distance, so
// one far-off joint can make the aligned mean error larger than the raw one.
TEST(PaMpjpe, CanExceedMpjpeWithAnOutlier) {
  Eigen::Matrix3Xd g(3, 8);
  for (int c = 0; c < 8; ++c) g.col(c) = Eigen::Vector3d(c >> 2 & 1, c >> 1 & 1, c & 1);
  Eigen::Matrix3Xd p = g;
  p.col(7) *= 2.0;
  EXPECT_NEAR(mpjpe(p, g), std::sqrt(3.0) / 8.0, 1e-15);
  EXPECT_NEAR(pa_mpjpe(p, g), svd_aligned_error(p, g), 1e-12);
  EXPECT_GT(pa_mpjpe(p, g), mpjpe(p, g) + 0.1);
}
