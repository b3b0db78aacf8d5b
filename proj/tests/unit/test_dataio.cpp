#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "vislam/dataio.hpp"
#include "vislam/errors.hpp"

using namespace vislam;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = VISLAM_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "vislam_dataio" / info->name();
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t parse_error_line(const fs::path& p, auto reader) {
  try {
    reader(p);
  } catch (const ParseError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no ParseError for " << p;
  return 0;
}

}  // namespace

TEST(DataIo, ImuGoldenWrite) {
  ImuStream s;
  s.origin_ns = 1403636579758555392LL;
  s.samples.push_back({0.0, {0.001, -0.002, 0.5}, {9.81, 0.1, -0.25}});
  s.samples.push_back({0.005, {0.1, 0.2, 0.1 + 0.2}, {-1e-7, 0.0, 12345.678}});
  const fs::path out = scratch("imu.csv");
  write_imu_csv(out, s);
  EXPECT_EQ(slurp(out), slurp(kFixtures / "imu_golden.csv"));
}

TEST(DataIo, ImuReadExact) {
  const ImuStream s = read_imu_csv(kFixtures / "imu_golden.csv");
  ASSERT_EQ(s.samples.size(), 2u);
  EXPECT_EQ(s.origin_ns, 1403636579758555392LL);
  EXPECT_EQ(s.samples[1].timestamp, 0.005);
  EXPECT_EQ(s.samples[1].omega.z(), 0.1 + 0.2);
  EXPECT_EQ(s.samples[1].accel.x(), -1e-7);
}

TEST(DataIo, EurocImuWithCrlf) {
  const ImuStream s = read_imu_csv(kFixtures / "euroc_imu_sample.csv");
  ASSERT_EQ(s.samples.size(), 2u);
  EXPECT_NEAR(s.samples[1].timestamp, 5.000192e-3, 1e-15);
  EXPECT_EQ(s.samples[0].accel.z(), -2.4026292499999999);
  EXPECT_EQ(s.samples[1].omega.y(), 0.14032447186034408);
}

TEST(DataIo, ImuRoundTripIsExact) {
  ImuStream s;
  s.origin_ns = 1000;
  for (int k = 0; k < 200; ++k) {
    const double t = sample_time(k, 200);
    s.samples.push_back({t, Eigen::Vector3d::Random(), 10.0 * Eigen::Vector3d::Random()});
  }
  const fs::path p = scratch("imu.csv");
  write_imu_csv(p, s);
  const ImuStream r = read_imu_csv(p);
  ASSERT_EQ(r.samples.size(), s.samples.size());
  for (std::size_t k = 0; k < s.samples.size(); ++k) {
    EXPECT_EQ(r.samples[k].timestamp, s.samples[k].timestamp);
    EXPECT_EQ(r.samples[k].omega, s.samples[k].omega);
    EXPECT_EQ(r.samples[k].accel, s.samples[k].accel);
  }
}

TEST(DataIo, EurocGroundTruth) {
  const GroundTruthTrack gt = read_groundtruth_csv(kFixtures / "euroc_groundtruth_sample.csv");
  ASSERT_EQ(gt.records.size(), 2u);
  EXPECT_TRUE(gt.has_orientation && gt.has_velocity && gt.has_bias);
  EXPECT_EQ(gt.records[0].p, Eigen::Vector3d(4.688319, -1.786938, 0.783338));
  EXPECT_EQ(gt.records[1].v.z(), 0.804599);
  EXPECT_EQ(gt.records[0].bias.accel.x(), -0.025266);
  EXPECT_NEAR(gt.records[1].timestamp, 0.00499968, 1e-15);
  EXPECT_TRUE(is_rotation(gt.records[0].R, 1e-12));
  const Eigen::Quaterniond q(gt.records[0].R);
  const Eigen::Vector4d expect = Eigen::Vector4d(0.534108, -0.153029, -0.827383, -0.082152).normalized();
  EXPECT_NEAR(std::abs(Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()).dot(expect)), 1.0, 1e-12);
}

TEST(DataIo, GroundTruthRewrite) {
  const GroundTruthTrack gt = read_groundtruth_csv(kFixtures / "euroc_groundtruth_sample.csv");
  const fs::path a = scratch("a.csv");
  write_groundtruth_csv(a, gt);
  const GroundTruthTrack r = read_groundtruth_csv(a);
  EXPECT_EQ(r.origin_ns, gt.origin_ns);
  // everything but the orientation is bit-exact; the quaternion goes through a
  // rotation matrix and comes back within a few ulp
  for (std::size_t k = 0; k < gt.records.size(); ++k) {
    EXPECT_EQ(r.records[k].timestamp, gt.records[k].timestamp);
    EXPECT_EQ(r.records[k].p, gt.records[k].p);
    EXPECT_EQ(r.records[k].v, gt.records[k].v);
    EXPECT_EQ(r.records[k].bias.gyro, gt.records[k].bias.gyro);
    EXPECT_LT((r.records[k].R - gt.records[k].R).norm(), 1e-14);
  }
}

TEST(DataIo, GroundTruthArity) {
  const fs::path p = scratch("gt.csv");
  put(p, "1000,1,2,3\n2000,4,5,6\n");
  const GroundTruthTrack pos = read_groundtruth_csv(p);
  EXPECT_FALSE(pos.has_orientation);
  EXPECT_EQ(pos.records[1].p, Eigen::Vector3d(4, 5, 6));
  put(p, "1000,1,2,3,1,0,0,0\n2000,4,5,6\n");
  EXPECT_EQ(parse_error_line(p, [](const fs::path& x) { read_groundtruth_csv(x); }), 2u);
  put(p, "1000,1,2,3,1,0\n");
  EXPECT_EQ(parse_error_line(p, [](const fs::path& x) { read_groundtruth_csv(x); }), 1u);
}

TEST(DataIo, ParseErrorsCarryLineNumbers) {
  auto imu = [](const fs::path& x) { read_imu_csv(x); };
  const fs::path p = scratch("bad.csv");
  put(p, "#header\n1000,0,0,0,0,0,9.8\n2000,0,nan,0,0,0,9.8\n");
  EXPECT_EQ(parse_error_line(p, imu), 3u);
  put(p, "1000,0,0,0,0,0,9.8\n\n1000,0,0,0,0,0,9.8\n");
  EXPECT_EQ(parse_error_line(p, imu), 3u);
  put(p, "1000,0,0,0,0,0,9.8\n900,0,0,0,0,0,9.8\n");
  EXPECT_EQ(parse_error_line(p, imu), 2u);
  put(p, "1000,0,0,0,0,0\n");
  EXPECT_EQ(parse_error_line(p, imu), 1u);
  put(p, "1000,0,0,0,0,0,9.8x\n");
  EXPECT_EQ(parse_error_line(p, imu), 1u);
  put(p, "1000,0,0,0,0,0,inf\n");
  EXPECT_EQ(parse_error_line(p, imu), 1u);
  EXPECT_THROW(read_imu_csv(scratch("missing.csv")), IoError);
}

TEST(DataIo, QuaternionTolerance) {
  const fs::path p = scratch("gt.csv");
  // 1e-4 off unit length is renormalized, 1e-2 is rejected
  put(p, "1000,0,0,0,1.0001,0,0,0\n");
  EXPECT_TRUE(is_rotation(read_groundtruth_csv(p).records[0].R, 1e-12));
  put(p, "1000,0,0,0,1,0,0,0\n2000,0,0,0,0.99,0,0,0\n");
  EXPECT_EQ(parse_error_line(p, [](const fs::path& x) { read_groundtruth_csv(x); }), 2u);
  put(p, "0 0 0 0 0 0 0 1.1\n");
  EXPECT_EQ(parse_error_line(p, [](const fs::path& x) { read_trajectory_tum(x); }), 1u);
}

TEST(DataIo, TumIdentityLine) {
  EXPECT_EQ(format_tum_line({0.0, RigidPosed()}), "0.000000000 0 0 0 0 0 0 1");
}

TEST(DataIo, TumGolden) {
  std::vector<StampedPose> poses;
  poses.push_back({0.0, RigidPosed()});
  poses.push_back({1.5, RigidPosed(exp_so3(Eigen::Vector3d(M_PI, 0, 0)), Eigen::Vector3d(1, -2.5, 0.125))});
  // exp_so3 at pi is not exactly diag(1,-1,-1); snap it so the golden text is exact
  poses[1].pose.rotation = Eigen::Vector3d(1, -1, -1).asDiagonal();
  const fs::path p = scratch("traj.tum");
  write_trajectory_tum(poses, p);
  EXPECT_EQ(slurp(p), slurp(kFixtures / "trajectory_golden.tum"));
}

TEST(DataIo, TumRoundTrip) {
  std::vector<StampedPose> poses;
  for (int k = 0; k < 50; ++k) {
    const Eigen::Vector3d w = Eigen::Vector3d::Random() * 3.0;
    const Eigen::Vector3d t = Eigen::Vector3d::Random() * 100.0;
    poses.push_back({0.05 * k, RigidPosed(exp_so3(w), t)});
  }
  const fs::path a = scratch("a.tum");
  write_trajectory_tum(poses, a);
  const auto r = read_trajectory_tum(a);
  ASSERT_EQ(r.size(), poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    EXPECT_NEAR(r[k].timestamp, poses[k].timestamp, 5e-10);
    EXPECT_EQ(r[k].pose.translation, poses[k].pose.translation);
    EXPECT_LT((r[k].pose.rotation - poses[k].pose.rotation).norm(), 1e-14);
  }
}

TEST(DataIo, NegativeZeroIsFolded) {
  RigidPosed T;
  T.translation = Eigen::Vector3d(-0.0, 0.0, -0.0);
  EXPECT_EQ(format_tum_line({0.0, T}), "0.000000000 0 0 0 0 0 0 1");
}

TEST(DataIo, CalibrationRoundTrip) {
  CalibrationConfig c;
  c.T_CB = default_T_CB();
  c.camera.fu = 458.654;
  c.pixel_sigma = 0.75;
  c.noise.accel_walk = 3e-3;
  const fs::path p = scratch("calib.txt");
  write_calibration(p, c);
  const CalibrationConfig r = read_calibration(p);
  EXPECT_EQ(r.T_CB.rotation, c.T_CB.rotation);
  EXPECT_EQ(r.T_CB.translation, c.T_CB.translation);
  EXPECT_EQ(r.camera.fu, 458.654);
  EXPECT_EQ(r.camera.width, c.camera.width);
  EXPECT_EQ(r.pixel_sigma, 0.75);
  EXPECT_EQ(r.noise.accel_walk, 3e-3);
  EXPECT_EQ(r.noise.gravity_magnitude, c.noise.gravity_magnitude);
}

TEST(DataIo, CalibrationErrors) {
  CalibrationConfig c;
  const fs::path p = scratch("calib.txt");
  write_calibration(p, c);
  std::string text = slurp(p);
  // drop the optional key: default sigma
  put(p, text.substr(0, text.find("pixel_sigma")));
  EXPECT_EQ(read_calibration(p).pixel_sigma, 1.0);
  put(p, text.substr(0, text.find("fv ")) + text.substr(text.find("cu ")));
  EXPECT_THROW(read_calibration(p), ParseError);
  std::string bad = text;
  bad.replace(bad.find("fu "), 3, "fu -");
  put(p, bad);
  EXPECT_THROW(read_calibration(p), ParseError);
  bad = text;
  bad.replace(bad.find("t_cb_translation"), 16, "t_cb_translation 1");
  put(p, bad);
  EXPECT_THROW(read_calibration(p), ParseError);
}

TEST(DataIo, TimeOffset) {
  const ImuStream s = read_imu_csv(kFixtures / "imu_golden.csv");
  const auto shifted = apply_time_offset(s.samples, -0.25);
  EXPECT_EQ(shifted[1].timestamp, 0.005 - 0.25);
  EXPECT_EQ(shifted[1].accel, s.samples[1].accel);
  const GroundTruthTrack gt = read_groundtruth_csv(kFixtures / "euroc_groundtruth_sample.csv");
  EXPECT_EQ(apply_time_offset(gt, 2.0).records[0].timestamp, 2.0);
}

TEST(DataIo, DatasetRoundTrip) {
  SimConfig cfg;
  cfg.landmark_count = 200;
  cfg.seed = 3;
  const SimulatedDataset d = generate(trajectory_preset("excited", 2.0), cfg);
  const fs::path root = scratch("ds");
  fs::remove_all(root);
  write_dataset(root, d);
  const Dataset r = read_dataset(root);

  ASSERT_EQ(r.imu.samples.size(), d.imu.size());
  for (std::size_t k = 0; k < d.imu.size(); ++k) {
    ASSERT_EQ(r.imu.samples[k].timestamp, d.imu[k].timestamp);
    ASSERT_EQ(r.imu.samples[k].accel, d.imu[k].accel);
  }
  ASSERT_EQ(r.frames.size(), d.frames.size());
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    ASSERT_EQ(r.frames[f].timestamp, d.frames[f].timestamp);
    ASSERT_EQ(r.frames[f].observations.size(), d.frames[f].observations.size());
    for (std::size_t k = 0; k < d.frames[f].observations.size(); ++k) {
      EXPECT_EQ(r.frames[f].observations[k].landmark_id, d.frames[f].observations[k].landmark_id);
      EXPECT_EQ(r.frames[f].observations[k].keypoint, d.frames[f].observations[k].keypoint);
    }
  }
  EXPECT_EQ(r.frames[0].observations[0].info, Eigen::Matrix2d::Identity() / (d.pixel_sigma * d.pixel_sigma));
  ASSERT_EQ(r.visual_poses.size(), d.visual_poses.size());
  EXPECT_EQ(r.visual_poses[7].p_WC, d.visual_poses[7].p_WC);
  EXPECT_LT((r.visual_poses[7].R_WC - d.visual_poses[7].R_WC).norm(), 1e-14);
  ASSERT_EQ(r.landmarks.size(), d.landmarks.size());
  EXPECT_EQ(r.landmarks[42].X_W, d.landmarks[42].X_W);
  ASSERT_EQ(r.ground_truth.records.size(), d.ground_truth.size());
  EXPECT_EQ(r.ground_truth.records[99].p, d.ground_truth[99].p_WB);
  EXPECT_EQ(r.ground_truth.records[99].bias.gyro, d.ground_truth[99].bias.gyro);
  EXPECT_EQ(r.calibration.T_CB.translation, d.T_CB.translation);
}

TEST(DataIo, DatasetLoopOracleRoundTrip) {
  SimConfig cfg;
  cfg.landmark_count = 800;
  const SimulatedDataset d = generate(trajectory_preset("loops", 45.0), cfg);
  ASSERT_FALSE(d.loop_edges.empty());
  const fs::path root = scratch("ds");
  fs::remove_all(root);
  write_dataset(root, d);
  const Dataset r = read_dataset(root);
  ASSERT_EQ(r.loop_edges.size(), d.loop_edges.size());
  for (std::size_t k = 0; k < d.loop_edges.size(); ++k) {
    EXPECT_EQ(r.loop_edges[k].t_query, d.loop_edges[k].t_query);
    EXPECT_EQ(r.loop_edges[k].t_match, d.loop_edges[k].t_match);
    EXPECT_EQ(r.loop_edges[k].landmark_ids, d.loop_edges[k].landmark_ids);
    EXPECT_EQ(r.loop_edges[k].points_query_B, d.loop_edges[k].points_query_B);
  }
}

TEST(DataIo, ObservationWithoutFrameIsRejected) {
  SimConfig cfg;
  cfg.landmark_count = 50;
  const SimulatedDataset d = generate(trajectory_preset("hover", 0.5), cfg);
  const fs::path root = scratch("ds");
  fs::remove_all(root);
  write_dataset(root, d);
  std::ofstream(root / "mav0" / "cam0" / "observations.csv", std::ios::app) << "17,1,2,3\n";
  EXPECT_THROW(read_dataset(root), ParseError);
}
