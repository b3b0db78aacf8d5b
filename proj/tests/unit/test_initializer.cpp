#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/initializer.hpp"
#include "vislam/simulator.hpp"

using namespace vislam;

namespace {

struct Scenario {
  SimulatedDataset data;
  Eigen::Vector3d gravity_V;  // gravity in the visual frame
};

Scenario make(const char* preset, double duration, const ImuBias& bias, double visual_scale) {
  SimConfig cfg;
  cfg.imu_noise = false;
  cfg.landmark_count = 0;
  cfg.pixel_sigma = 0.0;
  cfg.bias = bias;
  cfg.visual_scale = visual_scale;
  Scenario s{generate(trajectory_preset(preset, duration), cfg), {}};
  const NavState& s0 = s.data.ground_truth.front();
  const Eigen::Matrix3d R_WC0 = s0.R_WB * cfg.T_CB.inverse().rotation;
  s.gravity_V = R_WC0.transpose() * s.data.gravity_W;
  return s;
}

InitializationInput input_for(const Scenario& s, std::size_t keyframes, const ImuBias& lin = {}) {
  const auto kfs = oracle::every_nth(s.data.visual_poses, 5, 0.25 * (keyframes - 1));
  return make_initialization_input(kfs, s.data.imu, s.data.T_CB, s.data.noise, lin);
}

const ImuBias kBias{Eigen::Vector3d(0.01, -0.02, 0.015), Eigen::Vector3d(0.1, -0.05, 0.08)};

}  // namespace

TEST(Initializer, GravityAlignmentRotation) {
  const Eigen::Vector3d down(0, 0, -1);
  EXPECT_TRUE(gravity_alignment_rotation(down).isIdentity(1e-15));
  const Eigen::Vector3d dir = Eigen::Vector3d(0.3, -0.4, -0.8).normalized();
  EXPECT_LT((gravity_alignment_rotation(dir * 9.81) * down - dir).norm(), 1e-14);
  EXPECT_LT((gravity_alignment_rotation(-down) * down + down).norm(), 1e-14);
}

TEST(Initializer, SvdSolveAndRankLoss) {
  LinearSystem sys{Eigen::MatrixXd(3, 2), Eigen::VectorXd(3)};
  sys.A << 1, 0, 0, 2, 1, 1;
  const Eigen::Vector2d x(0.5, -1.5);
  sys.b = sys.A * x;
  const SvdSolution sol = solve_svd(sys, 1e-12);
  EXPECT_LT((sol.x - x).norm(), 1e-14);
  EXPECT_GT(sol.condition_number, 1.0);
  sys.A.col(1) = 2.0 * sys.A.col(0);
  EXPECT_THROW(solve_svd(sys, 1e-12), DegenerateMotion);
  EXPECT_TRUE(std::isinf(condition_number(Eigen::MatrixXd::Zero(3, 2))));
}

TEST(Initializer, GyroBiasFromNoiseFreeRotations) {
  const Scenario s = make("excited", 15.0, kBias, 1.0);
  const Eigen::Vector3d bg = estimate_gyro_bias(input_for(s, 40));
  EXPECT_LT((bg - kBias.gyro).norm(), 1e-4);
}

TEST(Initializer, TripletSystemsMatchExpandedVelocitySystems) {
  const ImuBias gyro_only{kBias.gyro, Eigen::Vector3d::Zero()};
  const Scenario s2 = make("excited", 5.0, gyro_only, 2.5);
  const Scenario s3 = make("excited", 5.0, kBias, 2.5);
  for (std::size_t n : {4u, 6u, 8u}) {
    const InitializationInput in2 = input_for(s2, n, gyro_only);
    const Eigen::VectorXd tri2 = solve_svd(build_scale_gravity_system(in2), 1e-14).x;
    const Eigen::VectorXd full2 = oracle::expanded_scale_gravity(in2);
    EXPECT_LT((tri2 - full2.head<4>()).norm(), 1e-8) << n;
    EXPECT_NEAR(tri2(0), 2.5, 1e-8);
    EXPECT_LT((tri2.segment<3>(1) - s2.gravity_V).norm(), 1e-7);

    const InitializationInput in3 = input_for(s3, n, gyro_only);
    const Eigen::Matrix3d R_WI = gravity_alignment_rotation(s3.gravity_V);
    const Eigen::VectorXd tri3 = solve_svd(build_accel_bias_system(in3, R_WI), 1e-14).x;
    const Eigen::VectorXd full3 = oracle::expanded_accel_bias(in3, R_WI);
    EXPECT_LT((tri3 - full3.head<6>()).norm(), 1e-8) << n;
    EXPECT_LT((tri3.segment<3>(3) - kBias.accel).norm(), 1e-7);
  }
}

TEST(Initializer, FullInitializationNoiseFree) {
  const Scenario s = make("excited", 15.0, kBias, 3.0);
  const InitializationResult r = run_full_initialization(input_for(s, 60));
  EXPECT_NEAR(r.scale, 3.0, 3e-3);
  EXPECT_LT((r.gyro_bias - kBias.gyro).norm(), 1e-4);
  EXPECT_LT((r.accel_bias - kBias.accel).norm(), 1e-2);
  EXPECT_LT((r.gravity_W - s.gravity_V).norm(), 1e-2);
  EXPECT_NEAR(r.gravity_W.norm(), 9.81, 1e-12);
  ASSERT_EQ(r.velocities.size(), 60u);
  const Eigen::Matrix3d R_VW = (s.data.ground_truth.front().R_WB * s.data.T_CB.inverse().rotation).transpose();
  EXPECT_LT((r.velocities[10] - R_VW * s.data.ground_truth[500].v_WB).norm(), 1e-2);
  EXPECT_FALSE(r.ill_conditioned);
}

TEST(Initializer, MinimumWindowNeverCrashes) {
  const Scenario s = make("excited", 5.0, kBias, 1.0);
  EXPECT_NO_THROW(run_full_initialization(input_for(s, 4)));
  EXPECT_THROW(run_full_initialization(input_for(s, 3)), InsufficientData);
}

TEST(Initializer, ConstantVelocityIsFlagged) {
  const Scenario s = make("constant_velocity", 15.0, {}, 1.0);
  bool flagged = false;
  try {
    flagged = run_full_initialization(input_for(s, 40)).ill_conditioned;
  } catch (const DegenerateMotion&) {
    flagged = true;
  }
  EXPECT_TRUE(flagged);
}

TEST(Initializer, ValidateRejectsMismatch) {
  const Scenario s = make("excited", 5.0, {}, 1.0);
  InitializationInput in = input_for(s, 6);
  in.preintegrations.pop_back();
  EXPECT_THROW(in.validate(), InvalidArgument);
  in = input_for(s, 6);
  in.preintegrations[1].dt_total += 0.1;
  EXPECT_THROW(in.validate(), InvalidArgument);
}

TEST(Initializer, BiasReinitialization) {
  const Scenario s = make("excited", 10.0, kBias, 1.0);
  const InitializationInput in = input_for(s, 20);
  const ImuBias b = reinitialize_biases(in.keyframes, in.preintegrations, in.T_CB, 1.0, s.gravity_V);
  EXPECT_LT((b.gyro - kBias.gyro).norm(), 1e-4);
  EXPECT_LT((b.accel - kBias.accel).norm(), 1e-2);
  EXPECT_THROW(reinitialize_biases(std::span(in.keyframes).first(10),
                                   std::span(in.preintegrations).first(9), in.T_CB, 1.0,
                                   s.gravity_V),
               InvalidArgument);
}

TEST(Initializer, ResultRecordRoundTrip) {
  InitializationResult r;
  r.scale = 1.0 / 3.0;
  r.gravity_W = Eigen::Vector3d(0.1, -0.2, -9.8);
  r.gyro_bias = Eigen::Vector3d(1e-3, 2e-3, -3e-3);
  r.accel_bias = Eigen::Vector3d(0.1, 0.2, 0.3);
  r.condition_number_stage2 = 123.456;
  r.condition_number_stage3 = 7890.123;
  r.ill_conditioned = true;
  r.velocities = {Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(M_PI, 0, -1)};
  std::stringstream ss;
  write_result_record(ss, r);
  const InitializationResult q = read_result_record(ss);
  EXPECT_EQ(q.scale, r.scale);
  EXPECT_EQ(q.gravity_W, r.gravity_W);
  EXPECT_EQ(q.accel_bias, r.accel_bias);
  EXPECT_EQ(q.velocities[1], r.velocities[1]);
  EXPECT_TRUE(q.ill_conditioned);
  std::stringstream bad("scale abc\n");
  EXPECT_THROW(read_result_record(bad), ParseError);
}
