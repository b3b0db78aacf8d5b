#pragma once

#include <span>

#include <Eigen/Core>

#include "vislam/imu_types.hpp"
#include "vislam/manifold.hpp"
#include "vislam/nav_state.hpp"

namespace vislam {

/// Relative motion between two keyframes compounded from raw IMU samples,
/// together with first-order bias Jacobians and the 9x9 covariance of
/// [dR, dv, dp]. Values are immutable snapshots: integration returns a copy.
struct PreintegratedImu {
  Eigen::Matrix3d delta_R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d delta_v = Eigen::Vector3d::Zero();
  Eigen::Vector3d delta_p = Eigen::Vector3d::Zero();
  Eigen::Matrix3d J_g_dR = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d J_g_dv = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d J_a_dv = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d J_g_dp = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d J_a_dp = Eigen::Matrix3d::Zero();
  Matrix9d covariance = Matrix9d::Zero();
  double dt_total = 0.0;
  ImuBias bias_lin;

  PreintegratedImu() = default;
  explicit PreintegratedImu(const ImuBias& linearization_bias) : bias_lin(linearization_bias) {}
};

/// One zero-order-hold step of length dt. Position is advanced before
/// velocity, and velocity before rotation.
PreintegratedImu integrate_measurement(const PreintegratedImu& state, const ImuMeasurement& m,
                                       double dt, const ImuNoiseModel& noise);

struct CorrectedDeltas {
  Eigen::Matrix3d delta_R;
  Eigen::Vector3d delta_v;
  Eigen::Vector3d delta_p;
};

/// Deltas re-expressed for a new bias through the stored Jacobians.
CorrectedDeltas correct_bias_first_order(const PreintegratedImu& pre, const ImuBias& new_bias);

/// State at the end of the preintegrated span. The state's own bias is applied
/// through the Jacobians and carried over unchanged.
NavState predict(const NavState& state_i, const PreintegratedImu& pre,
                 const Eigen::Vector3d& gravity);

/// Diagonal covariance of the bias random walk over the span, ordering [bg, ba].
Matrix6d bias_walk_covariance(const PreintegratedImu& pre, const ImuNoiseModel& noise);

/// Integrates every sample overlapping [t_begin, t_end]. Each sample is held
/// until the next one; the last sample is held until t_end.
PreintegratedImu preintegrate(std::span<const ImuMeasurement> stream, double t_begin, double t_end,
                              const ImuBias& bias, const ImuNoiseModel& noise);

}  // namespace vislam
