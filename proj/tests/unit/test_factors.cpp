#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/factors.hpp"
#include "vislam/preintegration.hpp"
#include "vislam/simulator.hpp"

using namespace vislam;

namespace {

PreintegratedImu random_preintegration(std::mt19937_64& rng, const ImuBias& lin) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<ImuMeasurement> stream;
  for (int k = 0; k < 30; ++k) {
    ImuMeasurement m;
    m.timestamp = k * 0.005;
    m.omega = Eigen::Vector3d(n(rng), n(rng), n(rng));
    m.accel = Eigen::Vector3d(n(rng), n(rng), 9.81 + n(rng));
    stream.push_back(m);
  }
  return preintegrate(stream, 0.0, 0.15, lin, ImuNoiseModel{});
}


}  // namespace

TEST(Factors, ImuJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Vector3d g(0, 0, -9.81);
  const ImuNoiseModel noise;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const NavState si = oracle::random_state(rng);
    const PreintegratedImu pre = random_preintegration(rng, si.bias);
    Vector15d off;
    for (int k = 0; k < 15; ++k) off(k) = 0.05 * n(rng);
    off.segment<3>(9) *= 0.1;
    const NavState sj = retract(predict(si, pre, g), off);
    const ImuTerm t = imu_residual(si, sj, pre, g, noise);
    const Eigen::MatrixXd Ji = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return imu_residual(retract(si, Vector15d(d)), sj, pre, g, noise).residual;
        }, 15);
    const Eigen::MatrixXd Jj = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return imu_residual(si, retract(sj, Vector15d(d)), pre, g, noise).residual;
        }, 15);
    worst = std::max({worst, oracle::relative_error(t.J_i, Ji), oracle::relative_error(t.J_j, Jj)});
    const Eigen::MatrixXd Jbj = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return imu_residual(si, retract(sj, Vector15d(d)), pre, g, noise).bias_residual;
        }, 15);
    worst = std::max(worst, oracle::relative_error(t.J_bias_j, Jbj));
    EXPECT_LT((t.J_bias_i + t.J_bias_j).norm(), 1e-15);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Factors, ReprojectionJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n(0.0, 1.0);
  const PinholeCamera cam;
  const RigidPosed T_CB = default_T_CB();
  double worst = 0.0;
  int tested = 0;
  while (tested < 100) {
    const NavState s = oracle::random_state(rng);
    const RigidPosed T_WC = RigidPosed(s.R_WB, s.p_WB) * T_CB.inverse();
    const Eigen::Vector3d X_C(n(rng), n(rng), 3.0 + std::abs(2.0 * n(rng)));
    const Eigen::Vector3d X_W = T_WC * X_C;
    Observation obs;
    obs.keypoint = project(cam, X_C) + Eigen::Vector2d(2 * n(rng), 2 * n(rng));
    const auto t = reprojection_residual(s, X_W, obs, cam, T_CB);
    ASSERT_TRUE(t.has_value());
    const Eigen::MatrixXd Js = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return reprojection_residual(retract(s, Vector15d(d)), X_W, obs, cam, T_CB)->residual;
        }, 15);
    const Eigen::MatrixXd Jl = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return reprojection_residual(s, X_W + Eigen::Vector3d(d), obs, cam, T_CB)->residual;
        }, 3);
    worst = std::max({worst, oracle::relative_error(t->J_state, Js), oracle::relative_error(t->J_landmark, Jl)});
    ++tested;
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Factors, ReprojectionBehindCameraIsDropped) {
  const NavState s;
  const RigidPosed T_CB = default_T_CB();
  const Eigen::Vector3d behind = RigidPosed(T_CB.inverse()) * Eigen::Vector3d(0, 0, -2);
  EXPECT_FALSE(reprojection_residual(s, behind, Observation{}, PinholeCamera{}, T_CB).has_value());
}

TEST(Factors, PriorJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    MarginalPrior prior;
    prior.mean = oracle::random_state(rng);
    prior.information = Matrix15d::Identity();
    Vector15d off = Vector15d::Random() * 0.3;
    const NavState s = retract(prior.mean, off);
    const PriorTerm t = prior_residual(s, prior);
    EXPECT_LT((t.residual - off).norm(), 1e-12);
    const Eigen::MatrixXd J = oracle::numeric_jacobian(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return prior_residual(retract(s, Vector15d(d)), prior).residual;
        }, 15);
    worst = std::max(worst, oracle::relative_error(t.J, J));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Factors, HuberKernel) {
  EXPECT_DOUBLE_EQ(huber_cost(1.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(1.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(huber_cost(16.0, 2.0), 2.0 * 2.0 * 4.0 - 4.0);
  EXPECT_DOUBLE_EQ(huber_weight(16.0, 2.0), 0.5);
  EXPECT_NEAR(kHuberReprojection * kHuberReprojection, 5.991, 1e-12);
}

TEST(Factors, InformationFromCovarianceClampsEigenvalues) {
  Eigen::Matrix3d c = Eigen::Vector3d(4.0, 1.0, 0.0).asDiagonal();
  const Eigen::Matrix3d info = information_from_covariance<3>(c, 1e-6);
  EXPECT_DOUBLE_EQ(info(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(info(2, 2), 1e6);
}
