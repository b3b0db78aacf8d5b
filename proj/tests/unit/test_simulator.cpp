#include <gtest/gtest.h>

#include "vislam/simulator.hpp"

using namespace vislam;

namespace {

SimConfig light(std::uint64_t seed = 1) {
  SimConfig cfg;
  cfg.seed = seed;
  cfg.landmark_count = 300;
  return cfg;
}

}  // namespace

TEST(Simulator, SampleCounts) {
  SimConfig cfg = light();
  cfg.landmark_count = 0;
  const auto d = generate(trajectory_preset("hover", 60.0), cfg);
  EXPECT_EQ(d.imu.size(), 12000u);
  EXPECT_EQ(d.frames.size(), 1200u);
  EXPECT_EQ(d.ground_truth.size(), d.imu.size());
  EXPECT_EQ(d.imu[200].timestamp, 1.0);
  EXPECT_EQ(sample_time(3, 200), 0.015);
}

TEST(Simulator, SameSeedIsIdentical) {
  const auto model = trajectory_preset("excited", 3.0);
  const auto a = generate(model, light(7));
  const auto b = generate(model, light(7));
  const auto c = generate(model, light(8));
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t k = 0; k < a.imu.size(); ++k) {
    ASSERT_EQ(a.imu[k].accel, b.imu[k].accel);
    ASSERT_EQ(a.imu[k].omega, b.imu[k].omega);
  }
  EXPECT_EQ(a.frames[10].observations.front().keypoint, b.frames[10].observations.front().keypoint);
  EXPECT_NE(a.imu[5].accel, c.imu[5].accel);
}

TEST(Simulator, ImuNoiseMatchesDensity) {
  SimConfig cfg = light();
  cfg.landmark_count = 0;
  const auto d = generate(trajectory_preset("hover", 50.0), cfg);
  double sg = 0.0;
  double sa = 0.0;
  for (const auto& m : d.imu) {
    sg += m.omega.squaredNorm();
    sa += (m.accel - Eigen::Vector3d(0, 0, 9.81)).squaredNorm();
  }
  const double n = 3.0 * static_cast<double>(d.imu.size());
  const double dt = 1.0 / cfg.imu_rate;
  EXPECT_NEAR(std::sqrt(sg / n), cfg.noise.gyro_noise_density / std::sqrt(dt),
              0.02 * cfg.noise.gyro_noise_density / std::sqrt(dt));
  EXPECT_NEAR(std::sqrt(sa / n), cfg.noise.accel_noise_density / std::sqrt(dt),
              0.02 * cfg.noise.accel_noise_density / std::sqrt(dt));
}

TEST(Simulator, ObservationsProjectTrueLandmarks) {
  const auto d = generate(trajectory_preset("excited", 2.0), light());
  const RigidPosed T_BC = d.T_CB.inverse();
  std::size_t count = 0;
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    const NavState& s = d.state_at_frame(f);
    EXPECT_EQ(s.timestamp, d.frames[f].timestamp);
    const RigidPosed T_CW = (RigidPosed(s.R_WB, s.p_WB) * T_BC).inverse();
    for (const Observation& o : d.frames[f].observations) {
      const Eigen::Vector3d X_C = T_CW * d.landmarks[o.landmark_id].X_W;
      EXPECT_GE(X_C.z(), 0.3);
      EXPECT_LE((project(d.camera, X_C) - o.keypoint).cwiseAbs().maxCoeff(), 3.0 * d.pixel_sigma);
      ++count;
    }
  }
  EXPECT_GT(count, 100u * d.frames.size() / 10);
}

TEST(Simulator, VisualPosesAreScaledAndAnchored) {
  SimConfig cfg = light();
  cfg.visual_scale = 2.5;
  const auto d = generate(trajectory_preset("excited", 3.0), cfg);
  EXPECT_TRUE(d.visual_poses.front().R_WC.isIdentity(1e-12));
  EXPECT_LT(d.visual_poses.front().p_WC.norm(), 1e-12);
  const RigidPosed T_BC = d.T_CB.inverse();
  const NavState& s0 = d.state_at_frame(0);
  const NavState& s1 = d.state_at_frame(40);
  const RigidPosed T_WC0 = RigidPosed(s0.R_WB, s0.p_WB) * T_BC;
  const RigidPosed T_WC1 = RigidPosed(s1.R_WB, s1.p_WB) * T_BC;
  const Eigen::Vector3d metric = (T_WC0.inverse() * T_WC1).translation;
  EXPECT_LT((d.visual_poses[40].p_WC * 2.5 - metric).norm(), 1e-12);
}

TEST(Simulator, LoopOracleOnRevisits) {
  SimConfig cfg = light();
  cfg.landmark_count = 800;
  const auto d = generate(trajectory_preset("loops", 45.0), cfg);
  ASSERT_FALSE(d.loop_edges.empty());
  for (const auto& e : d.loop_edges) {
    EXPECT_GE(e.t_query - e.t_match, cfg.loop_min_gap);
    EXPECT_GE(e.landmark_ids.size(), 15u);
    const NavState& q = d.ground_truth[static_cast<std::size_t>(std::llround(e.t_query * 200))];
    const NavState& m = d.ground_truth[static_cast<std::size_t>(std::llround(e.t_match * 200))];
    EXPECT_LT((q.p_WB - m.p_WB).norm(), cfg.loop_max_distance);
    for (std::size_t k = 0; k < e.landmark_ids.size(); ++k) {
      const Eigen::Vector3d a = q.R_WB * e.points_query_B[k] + q.p_WB;
      const Eigen::Vector3d b = m.R_WB * e.points_match_B[k] + m.p_WB;
      EXPECT_LT((a - b).norm(), 1e-9);
    }
  }
}

TEST(Simulator, ReplayOrdersImuFirst) {
  const auto d = generate(trajectory_preset("hover", 1.0), light());
  const auto events = replay(d.imu, d.frames);
  ASSERT_EQ(events.size(), d.imu.size() + d.frames.size());
  EXPECT_EQ(events[0].kind, SensorEventKind::kImu);
  EXPECT_EQ(events[1].kind, SensorEventKind::kCamera);
  for (std::size_t k = 1; k < events.size(); ++k) EXPECT_LE(events[k - 1].timestamp, events[k].timestamp);
}

TEST(Simulator, RejectsInvalidConfigs) {
  SimConfig cfg = light();
  cfg.cam_rate = 30;
  EXPECT_THROW(generate(trajectory_preset("hover", 1.0), cfg), InvalidArgument);
  cfg = light();
  cfg.pixel_sigma = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  TrajectoryModel wild = trajectory_preset("loops", 5.0);
  wild.radius = 10.0;
  wild.angular_rate = 3.0;
  EXPECT_THROW(generate(wild, light()), InvalidArgument);
  EXPECT_THROW(trajectory_preset("spiral", 1.0), InvalidArgument);
}
