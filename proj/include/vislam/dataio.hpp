#pragma once

// EuRoC-style dataset I/O plus TUM trajectories and a key-value calibration
// file. Integer nanosecond timestamps exist only at the file boundary; in
// memory every time is seconds relative to a stream origin.
//
// Dataset layout (under a root directory):
//   mav0/imu0/data.csv                        #timestamp [ns],w x,y,z,a x,y,z
//   mav0/state_groundtruth_estimate0/data.csv p, q(w,x,y,z), v, b_w, b_a
//   mav0/cam0/data.csv                        #timestamp [ns],filename
//   mav0/cam0/observations.csv                #timestamp [ns],landmark_id,u,v
//   mav0/cam0/keyframes.csv                   visual poses: p, q(w,x,y,z) of R_WC
//   mav0/landmarks.csv                        #landmark_id,x,y,z
//   mav0/loop_oracle.csv                      matched 3D points of revisits
//   calibration.txt                           key-value calibration

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/imu_types.hpp"
#include "vislam/initializer.hpp"
#include "vislam/manifold.hpp"
#include "vislam/simulator.hpp"

namespace vislam {

struct ImuStream {
  std::int64_t origin_ns = 0;  // absolute time of t = 0
  std::vector<ImuMeasurement> samples;

  double absolute_seconds(std::size_t k) const;
};

/// `origin_ns` defaults to the first timestamp in the file.
ImuStream read_imu_csv(const std::filesystem::path& path,
                       std::optional<std::int64_t> origin_ns = std::nullopt);
void write_imu_csv(const std::filesystem::path& path, const ImuStream& stream);

struct GroundTruthRecord {
  double timestamp = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  ImuBias bias;
};

/// Pose ground truth has 17 columns (EuRoC estimate) or 8 (pose only);
/// position-only tracks (4 columns) cannot support orientation metrics.
struct GroundTruthTrack {
  std::int64_t origin_ns = 0;
  bool has_orientation = false;
  bool has_velocity = false;
  bool has_bias = false;
  std::vector<GroundTruthRecord> records;
};

GroundTruthTrack read_groundtruth_csv(const std::filesystem::path& path,
                                      std::optional<std::int64_t> origin_ns = std::nullopt);
/// Writes every column the track declares.
void write_groundtruth_csv(const std::filesystem::path& path, const GroundTruthTrack& track);

std::vector<ImuMeasurement> apply_time_offset(std::span<const ImuMeasurement> stream,
                                              double offset);
GroundTruthTrack apply_time_offset(const GroundTruthTrack& track, double offset);

struct StampedPose {
  double timestamp = 0.0;
  RigidPosed pose;
};

/// "timestamp tx ty tz qx qy qz qw", timestamp with 9 decimals, qw >= 0.
void write_trajectory_tum(std::span<const StampedPose> poses, const std::filesystem::path& path);
std::vector<StampedPose> read_trajectory_tum(const std::filesystem::path& path);
std::string format_tum_line(const StampedPose& pose);

struct CalibrationConfig {
  RigidPosed T_CB;
  PinholeCamera camera;
  ImuNoiseModel noise;
  double pixel_sigma = 1.0;

  void validate() const;
};

CalibrationConfig read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const CalibrationConfig& calib);

struct Dataset {
  CalibrationConfig calibration;
  ImuStream imu;
  GroundTruthTrack ground_truth;           // empty when the file is absent
  std::vector<CameraFrame> frames;         // empty without cam0
  std::vector<KeyframeVisualPose> visual_poses;
  std::vector<Landmark> landmarks;
  std::vector<LoopOracleEdge> loop_edges;
};

/// Every time in the dataset is expressed relative to the first IMU sample.
/// `calibration` replaces root/calibration.txt when given.
Dataset read_dataset(const std::filesystem::path& root,
                     const std::optional<std::filesystem::path>& calibration = std::nullopt);
/// Simulated output in the layout above, timestamps offset by `origin_ns`.
void write_dataset(const std::filesystem::path& root, const SimulatedDataset& data,
                   std::int64_t origin_ns = 1'403'636'579'758'555'392LL);

/// The in-memory equivalent of write_dataset followed by read_dataset, minus
/// the text round trip.
Dataset make_dataset(const SimulatedDataset& data,
                     std::int64_t origin_ns = 1'403'636'579'758'555'392LL);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace vislam
