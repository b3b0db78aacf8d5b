#pragma once

// Deterministic visual-inertial ground truth. Rotation and velocity follow a
// closed-form trajectory; the IMU samples are synthesized so that one
// zero-order-hold step reproduces the next ground-truth sample exactly, and
// the ground-truth position is the matching discrete integral of velocity.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/imu_types.hpp"
#include "vislam/initializer.hpp"
#include "vislam/manifold.hpp"
#include "vislam/nav_state.hpp"

namespace vislam {

enum class TrajectoryKind { kCircle, kLissajous, kWaypointSpline, kHover };
enum class AttitudeMode { kYawFollow, kFixed };

struct TrajectoryModel {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  double duration = 60.0;  // s
  Eigen::Vector3d center = Eigen::Vector3d(0.0, 0.0, 1.5);

  // circle
  double radius = 2.0;         // m
  double angular_rate = 0.5;   // rad/s
  double vertical_amplitude = 0.0;  // m
  double vertical_rate = 0.0;       // rad/s

  // lissajous: center + amplitude .* sin(frequency * t + phase)
  Eigen::Vector3d amplitude = Eigen::Vector3d(2.0, 1.5, 0.5);
  Eigen::Vector3d frequency = Eigen::Vector3d(0.4, 0.6, 0.8);  // rad/s
  Eigen::Vector3d phase = Eigen::Vector3d(0.0, 0.0, 0.0);

  // waypoint spline: minimum-jerk segments, at rest at every waypoint
  std::vector<Eigen::Vector3d> waypoints;
  double segment_duration = 4.0;  // s

  // added to every kind
  Eigen::Vector3d linear_velocity = Eigen::Vector3d::Zero();  // m/s

  AttitudeMode attitude = AttitudeMode::kYawFollow;
  double yaw0 = 0.0;             // rad, fixed mode and low-speed fallback
  double yaw_rate = 0.0;         // rad/s, fixed mode
  double yaw_amplitude = 0.0;    // rad, fixed mode oscillation
  double yaw_oscillation_rate = 0.0;
  double tilt_amplitude = 0.0;   // rad, roll/pitch wobble
  double tilt_rate = 0.0;        // rad/s

  struct Kinematics {
    Eigen::Vector3d p;
    Eigen::Vector3d v;
    Eigen::Vector3d a;
  };
  Kinematics kinematics(double t) const;
  /// Body attitude at t given the velocity there.
  Eigen::Matrix3d attitude_at(double t, const Eigen::Vector3d& velocity) const;
};

/// Named trajectories: "excited" (3-axis lissajous with yaw and tilt
/// oscillation), "loops" (circle revisited every 20 s), "hover" and
/// "constant_velocity" (no rotation, no acceleration). Throws InvalidArgument
/// for other names.
TrajectoryModel trajectory_preset(std::string_view name, double duration);

/// Forward-looking camera on the body x axis with a small lever arm.
RigidPosed default_T_CB();

struct SimConfig {
  int imu_rate = 200;  // Hz
  int cam_rate = 20;   // Hz
  ImuNoiseModel noise;
  bool imu_noise = true;
  ImuBias bias;
  bool bias_random_walk = false;

  int landmark_count = 1500;
  double shell_inner_margin = 2.0;  // m beyond the trajectory bounding box
  double shell_outer_margin = 6.0;
  double min_depth = 0.3;
  double max_depth = 30.0;
  double pixel_sigma = 1.0;  // px; 0 disables keypoint noise

  double visual_scale = 1.0;  // p_visual = p_metric / visual_scale
  double visual_rotation_sigma = 0.0;  // rad
  double visual_position_sigma = 0.0;  // m, before scaling

  PinholeCamera camera;
  RigidPosed T_CB = default_T_CB();

  // loop oracle
  double loop_min_gap = 10.0;          // s
  double loop_max_distance = 1.0;      // m
  double loop_max_angle = 0.5235987755982988;  // rad (30 deg)
  int loop_min_shared = 15;
  double loop_query_interval = 1.0;    // s between oracle queries

  std::uint64_t seed = 1;

  /// Throws InvalidArgument on inconsistent settings.
  void validate() const;
};

struct CameraFrame {
  double timestamp = 0.0;
  std::vector<Observation> observations;
};

/// Exact 3D-3D matches between a query keyframe and an earlier one at the
/// same place, each point expressed in that keyframe's body frame.
struct LoopOracleEdge {
  double t_query = 0.0;
  double t_match = 0.0;
  std::vector<int> landmark_ids;
  std::vector<Eigen::Vector3d> points_query_B;
  std::vector<Eigen::Vector3d> points_match_B;
};

struct SimulatedDataset {
  std::vector<NavState> ground_truth;  // one per IMU sample, true biases included
  std::vector<ImuMeasurement> imu;
  std::vector<CameraFrame> frames;
  std::vector<KeyframeVisualPose> visual_poses;  // one per camera frame
  std::vector<Landmark> landmarks;
  std::vector<LoopOracleEdge> loop_edges;
  Eigen::Vector3d gravity_W = Eigen::Vector3d::Zero();
  PinholeCamera camera;
  RigidPosed T_CB;
  ImuNoiseModel noise;
  double pixel_sigma = 1.0;
  double visual_scale = 1.0;

  /// Ground-truth state at a camera frame (frames coincide with IMU samples).
  const NavState& state_at_frame(std::size_t frame) const;
};

/// Timestamp of sample k at `rate` Hz, computed from integer nanoseconds so
/// that the CSV round trip is exact.
double sample_time(std::int64_t k, int rate);

SimulatedDataset generate(const TrajectoryModel& model, const SimConfig& config);

enum class SensorEventKind { kImu, kCamera };

struct SensorEvent {
  SensorEventKind kind;
  double timestamp;
  std::size_t index;  // into the IMU or frame sequence
};

/// Merged time-ordered events; at equal timestamps the IMU sample comes first.
std::vector<SensorEvent> replay(std::span<const ImuMeasurement> imu,
                                std::span<const CameraFrame> frames);

}  // namespace vislam
