#include <gtest/gtest.h>

#include "scenarios.hpp"
#include "vislam/tracking.hpp"

using namespace vislam;

TEST(Tracking, SlidingMatchesBatchNoiseFree) {
  const auto s = scenario::tracking_sequence(40, false, 1);
  const MarginalPrior prior = scenario::initial_prior(s.truth.front());
  const auto sliding = scenario::run_sliding(s, prior);
  const auto batch = optimize_frame_batch(prior, s.pres, s.matches, s.ctx);
  ASSERT_EQ(sliding.size(), batch.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    worst = std::max(worst, (sliding[k].p_WB - batch[k].p_WB).norm());
  }
  EXPECT_LT(worst, 1e-8);
  EXPECT_LT((batch.back().p_WB - s.truth.back().p_WB).norm(), 1e-8);
}

TEST(Tracking, SlidingCloseToBatchWithNoise) {
  const auto s = scenario::tracking_sequence(60, true, 2);
  const MarginalPrior prior = scenario::initial_prior(s.truth.front());
  const auto sliding = scenario::run_sliding(s, prior);
  const auto batch = optimize_frame_batch(prior, s.pres, s.matches, s.ctx);
  // The newest state carries the same information in both; earlier frames are
  // filtered in one and smoothed in the other.
  const double e_sliding = (sliding.back().p_WB - s.truth.back().p_WB).norm();
  const double e_batch = (batch.back().p_WB - s.truth.back().p_WB).norm();
  EXPECT_LT(e_batch, 0.01);
  EXPECT_NEAR(e_sliding, e_batch, 0.1 * e_batch);
  EXPECT_LT(scenario::position_rmse(batch, s.truth), scenario::position_rmse(sliding, s.truth));
}

TEST(Tracking, FrameToKeyframeRecoversTruth) {
  const auto s = scenario::tracking_sequence(10, false, 3);
  const PreintegratedImu pre = preintegrate(s.data.imu, s.truth[0].timestamp, s.truth[6].timestamp,
                                            s.truth[0].bias, s.data.noise);
  NavState kf = s.truth[0];
  const TrackingResult r = optimize_frame_to_keyframe(kf, pre, s.matches[6], s.truth[6].timestamp, s.ctx);
  EXPECT_LT((r.state.p_WB - s.truth[6].p_WB).norm(), 1e-8);
  EXPECT_TRUE(r.report.converged);
  Eigen::SelfAdjointEigenSolver<Matrix15d> eig(r.prior.information);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Tracking, TooFewMatchesIsTrackingLost) {
  const auto s = scenario::tracking_sequence(3, false, 4);
  std::vector<MapMatch> few(s.matches[1].begin(), s.matches[1].begin() + 5);
  try {
    optimize_frame_pair_with_prior(s.truth[0], scenario::initial_prior(s.truth[0]), s.pres[0], few,
                                   s.truth[1].timestamp, s.ctx);
    FAIL() << "expected TrackingLost";
  } catch (const TrackingLost& e) {
    EXPECT_DOUBLE_EQ(e.timestamp(), s.truth[1].timestamp);
  }
}

TEST(Tracking, MarginalizationMatchesDenseSchur) {
  Eigen::Matrix<double, 30, 30> a = Eigen::Matrix<double, 30, 30>::Random();
  const Eigen::Matrix<double, 30, 30> h = a * a.transpose() + Eigen::Matrix<double, 30, 30>::Identity();
  const Matrix15d expected = h.bottomRightCorner<15, 15>() -
                             h.bottomLeftCorner<15, 15>() * h.topLeftCorner<15, 15>().inverse() *
                                 h.topRightCorner<15, 15>();
  EXPECT_LT((marginalize_first(h) - expected).norm(), 1e-9 * expected.norm());
  Eigen::Matrix<double, 30, 30> bad = Eigen::Matrix<double, 30, 30>::Identity();
  bad.bottomRightCorner<15, 15>() *= -1.0;
  EXPECT_THROW(marginalize_first(bad), NumericalFailure);
}
