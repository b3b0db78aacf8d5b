#pragma once

#include <Eigen/Core>

#include "vislam/imu_types.hpp"
#include "vislam/manifold.hpp"

namespace vislam {

/// Body state in the world frame. Error-state ordering everywhere in the
/// library is [dphi, dv, dp, dbg, dba] with R <- R Exp(dphi) and additive
/// world-frame velocity and position.
struct NavState {
  Eigen::Matrix3d R_WB = Eigen::Matrix3d::Identity();
  Eigen::Vector3d p_WB = Eigen::Vector3d::Zero();
  Eigen::Vector3d v_WB = Eigen::Vector3d::Zero();
  ImuBias bias;
  double timestamp = 0.0;
};

namespace state_index {
inline constexpr int kRot = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kBiasGyro = 9;
inline constexpr int kBiasAccel = 12;
inline constexpr int kDim = 15;
}  // namespace state_index

inline NavState retract(const NavState& x, const Vector15d& d) {
  using namespace state_index;
  NavState out = x;
  out.R_WB = x.R_WB * exp_so3(d.segment<3>(kRot));
  out.v_WB += d.segment<3>(kVel);
  out.p_WB += d.segment<3>(kPos);
  out.bias.gyro += d.segment<3>(kBiasGyro);
  out.bias.accel += d.segment<3>(kBiasAccel);
  return out;
}

/// x (-) reference, the inverse of retract.
inline Vector15d local_difference(const NavState& x, const NavState& reference) {
  using namespace state_index;
  Vector15d d;
  d.segment<3>(kRot) = log_so3(reference.R_WB.transpose() * x.R_WB);
  d.segment<3>(kVel) = x.v_WB - reference.v_WB;
  d.segment<3>(kPos) = x.p_WB - reference.p_WB;
  d.segment<3>(kBiasGyro) = x.bias.gyro - reference.bias.gyro;
  d.segment<3>(kBiasAccel) = x.bias.accel - reference.bias.accel;
  return d;
}

}  // namespace vislam
