#pragma once

// Visual-inertial initialization from a monocular keyframe trajectory:
//   1. gyroscope bias from relative keyframe rotations,
//   2. scale and gravity with the accelerometer bias neglected,
//   3. accelerometer bias with scale and gravity-direction refinement under
//      the known gravity magnitude,
//   4. keyframe velocities.
// Stages 2 and 3 eliminate velocities by chaining the position relations of
// three consecutive keyframes, so each system has 3(N-2) rows.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vislam/manifold.hpp"
#include "vislam/preintegration.hpp"

namespace vislam {

/// Camera pose from the monocular tracker, in its own (arbitrary scale) frame.
struct KeyframeVisualPose {
  int id = 0;
  double timestamp = 0.0;
  Eigen::Matrix3d R_WC = Eigen::Matrix3d::Identity();
  Eigen::Vector3d p_WC = Eigen::Vector3d::Zero();
};

struct InitializationInput {
  std::vector<KeyframeVisualPose> keyframes;
  std::vector<PreintegratedImu> preintegrations;  // one per consecutive keyframe pair
  RigidPosed T_CB;
  double gravity_magnitude = 9.81;

  /// Throws InvalidArgument on size mismatch, non-increasing timestamps, or a
  /// preintegration whose span differs from its keyframe gap by more than 1e-3 s.
  void validate() const;
};

/// Preintegrates `imu` between consecutive keyframes at `bias`.
InitializationInput make_initialization_input(std::span<const KeyframeVisualPose> keyframes,
                                              std::span<const ImuMeasurement> imu,
                                              const RigidPosed& T_CB, const ImuNoiseModel& noise,
                                              const ImuBias& bias = {});

struct InitializerOptions {
  double condition_threshold = 25000.0;
  int gyro_max_iterations = 20;
  double gyro_step_tolerance = 1e-10;
  double degenerate_ratio = 1e-12;  // sigma_min / sigma_max below this is rank loss
};

/// Per-triplet blocks of the velocity-free systems (keyframes i, i+1, i+2).
/// Stage 2: lambda * s + beta * g = gamma.
/// Stage 3: lambda * s + phi * dtheta_xy + zeta * b_a = psi.
struct TripletSystemBlocks {
  Eigen::Vector3d lambda = Eigen::Vector3d::Zero();
  Eigen::Matrix3d beta = Eigen::Matrix3d::Zero();
  Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 3, 2> phi = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::Matrix3d zeta = Eigen::Matrix3d::Zero();
  Eigen::Vector3d psi = Eigen::Vector3d::Zero();
};

struct LinearSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

struct SvdSolution {
  Eigen::VectorXd x;
  double condition_number = 0.0;
};

struct ScaleGravityEstimate {
  double scale = 0.0;
  Eigen::Vector3d gravity_W = Eigen::Vector3d::Zero();
  double condition_number = 0.0;
  bool ill_conditioned = false;
};

struct AccelBiasEstimate {
  double scale = 0.0;
  Eigen::Vector3d gravity_W = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
  Eigen::Vector2d delta_theta_xy = Eigen::Vector2d::Zero();
  Eigen::Matrix3d R_WI = Eigen::Matrix3d::Identity();  // refined, includes delta_theta
  double condition_number = 0.0;
  bool ill_conditioned = false;
};

struct InitializationResult {
  double scale = 0.0;
  Eigen::Vector3d gravity_W = Eigen::Vector3d::Zero();
  Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> velocities;  // body velocity in W, one per keyframe
  double condition_number_stage2 = 0.0;
  double condition_number_stage3 = 0.0;
  bool ill_conditioned = false;  // either condition number above the threshold
  Eigen::Matrix3d R_WI = Eigen::Matrix3d::Identity();
};

/// Rotation taking the inertial gravity direction [0, 0, -1] onto `gravity_dir`.
Eigen::Matrix3d gravity_alignment_rotation(const Eigen::Vector3d& gravity_dir);

/// sigma_max / sigma_min of A; infinity on exact rank loss.
double condition_number(const Eigen::MatrixXd& A);

/// Least squares through a thin SVD; throws DegenerateMotion on rank loss.
SvdSolution solve_svd(const LinearSystem& system, double degenerate_ratio);

/// Gauss-Newton on the sum of squared rotation residuals, seeded at zero.
Eigen::Vector3d estimate_gyro_bias(const InitializationInput& input,
                                   const InitializerOptions& options = {});

/// Input whose preintegrations are re-linearized (first order) at gyro bias
/// `gyro_bias` and zero accelerometer bias.
InitializationInput with_gyro_bias(const InitializationInput& input,
                                   const Eigen::Vector3d& gyro_bias);

TripletSystemBlocks triplet_blocks(const InitializationInput& input, std::size_t first,
                                   const Eigen::Matrix3d& R_WI);

LinearSystem build_scale_gravity_system(const InitializationInput& input);
LinearSystem build_accel_bias_system(const InitializationInput& input,
                                     const Eigen::Matrix3d& R_WI);

ScaleGravityEstimate solve_scale_gravity(const InitializationInput& input,
                                         const InitializerOptions& options = {});

AccelBiasEstimate refine_with_accel_bias(const InitializationInput& input,
                                         const Eigen::Vector3d& g_approx,
                                         const InitializerOptions& options = {});

/// Velocities of every keyframe from the position relation of each
/// consecutive pair (forward pass); the last keyframe uses the velocity relation.
std::vector<Eigen::Vector3d> estimate_velocities(const InitializationInput& input, double scale,
                                                 const Eigen::Vector3d& gravity_W,
                                                 const Eigen::Vector3d& accel_bias);

InitializationResult run_full_initialization(const InitializationInput& input,
                                             const InitializerOptions& options = {});

struct BiasReinitOptions {
  std::size_t frame_count = 20;
  InitializerOptions solver;
};

/// Gyro bias from the rotation residuals and accelerometer bias from the
/// triplet relation with scale and gravity substituted as knowns.
ImuBias reinitialize_biases(std::span<const KeyframeVisualPose> frames,
                            std::span<const PreintegratedImu> preintegrations,
                            const RigidPosed& T_CB, double scale,
                            const Eigen::Vector3d& gravity_W,
                            const BiasReinitOptions& options = {});

/// Flat "key value..." record, one field per line:
///   scale, gravity_w (3), gyro_bias (3), accel_bias (3),
///   condition_number_stage2, condition_number_stage3, ill_conditioned,
///   keyframes, velocity_<k> (3) for each keyframe.
void write_result_record(std::ostream& os, const InitializationResult& result);
InitializationResult read_result_record(std::istream& is);

}  // namespace vislam
