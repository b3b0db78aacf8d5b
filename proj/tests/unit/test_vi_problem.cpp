#include <gtest/gtest.h>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "vislam/factors.hpp"
#include "vislam/vi_problem.hpp"

using namespace vislam;

TEST(ViProblem, StateInformationMatchesDenseNormalEquations) {
  std::mt19937_64 rng(41);
  const NavState si = oracle::random_state(rng);
  std::vector<ImuMeasurement> stream(41);
  for (int k = 0; k <= 40; ++k) {
    stream[k].timestamp = k * 0.005;
    stream[k].accel = Eigen::Vector3d(0.3, -0.2, 9.9);
    stream[k].omega = Eigen::Vector3d(0.1, 0.2, -0.3);
  }
  const ImuNoiseModel noise;
  const PreintegratedImu pre = preintegrate(stream, 0.0, 0.2, si.bias, noise);
  const Eigen::Vector3d g(0, 0, -9.81);
  const NavState sj = predict(si, pre, g);
  MarginalPrior prior;
  prior.mean = si;
  prior.information = 10.0 * Matrix15d::Identity();

  ViProblem p(PinholeCamera{}, RigidPosed(), g, noise);
  p.add_state(si);
  p.add_state(sj);
  p.add_prior(0, prior);
  p.add_imu(0, 1, pre);
  const Eigen::MatrixXd H = p.state_information();

  const ImuTerm t = imu_residual(si, sj, pre, g, noise);
  Eigen::Matrix<double, 9, 30> J;
  J << t.J_i, t.J_j;
  Eigen::Matrix<double, 6, 30> Jb;
  Jb << t.J_bias_i, t.J_bias_j;
  Eigen::MatrixXd expected = J.transpose() * t.information * J + Jb.transpose() * t.bias_information * Jb;
  expected.topLeftCorner<15, 15>() += prior.information;
  EXPECT_LT((H - expected).norm(), 1e-9 * expected.norm());
}

TEST(ViProblem, RecoversPoseFromFixedLandmarks) {
  const auto s = scenario::tracking_sequence(3, false, 5);
  NavState guess = s.truth[1];
  guess.p_WB += Eigen::Vector3d(0.05, -0.03, 0.02);
  guess.R_WB = guess.R_WB * exp_so3(Eigen::Vector3d(0.01, 0.02, -0.01));
  ViProblem p(s.ctx.camera, s.ctx.T_CB, s.ctx.gravity, s.ctx.noise);
  StateMask mask = all_fixed();
  mask.segment<3>(0).setConstant(false);
  mask.segment<3>(6).setConstant(false);
  const int k = p.add_state(guess, mask);
  for (const MapMatch& m : s.matches[1]) p.add_reprojection(k, p.add_landmark(m.X_W, true), m.obs);
  const double c0 = p.cost();
  const SolverReport r = p.solve();
  EXPECT_LT(r.final_cost, c0);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((p.state(k).p_WB - s.truth[1].p_WB).norm(), 1e-9);
  EXPECT_EQ(p.state(k).v_WB, guess.v_WB);  // fixed components untouched
}

TEST(ViProblem, FreeLandmarksAreSchurEliminated) {
  // Two fixed poses and free landmarks: triangulation converges to truth.
  const auto s = scenario::tracking_sequence(8, false, 6);
  ViProblem p(s.ctx.camera, s.ctx.T_CB, s.ctx.gravity, s.ctx.noise);
  const int a = p.add_state(s.truth[0], all_fixed());
  const int b = p.add_state(s.truth[7], all_fixed());
  std::map<int, const Observation*> in_b;
  for (const MapMatch& m : s.matches[7]) in_b[m.obs.landmark_id] = &m.obs;
  std::vector<std::pair<int, Eigen::Vector3d>> added;
  for (const MapMatch& m : s.matches[0]) {
    auto it = in_b.find(m.obs.landmark_id);
    if (it == in_b.end()) continue;
    const int l = p.add_landmark(m.X_W + Eigen::Vector3d(0.05, 0.05, -0.05));
    p.add_reprojection(a, l, m.obs);
    p.add_reprojection(b, l, *it->second);
    added.emplace_back(l, m.X_W);
  }
  ASSERT_GT(added.size(), 10u);
  p.solve({.max_iterations = 20});
  for (const auto& [l, X] : added) EXPECT_LT((p.landmark(l) - X).norm(), 1e-6);
}
