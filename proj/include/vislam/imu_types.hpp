#pragma once

#include <Eigen/Core>

#include "vislam/manifold.hpp"

namespace vislam {

struct ImuMeasurement {
  double timestamp = 0.0;                          // s
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();  // rad/s, body frame
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // m/s^2, specific force
};

struct ImuBias {
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();

  Vector6d stacked() const {
    Vector6d out;
    out << gyro, accel;
    return out;
  }
  static ImuBias from_stacked(const Vector6d& v) { return {v.head<3>(), v.tail<3>()}; }
};

/// Continuous-time noise densities. Discrete per-sample variance is density^2 / dt.
struct ImuNoiseModel {
  double gyro_noise_density = 1.6968e-4;  // rad/s/sqrt(Hz)
  double accel_noise_density = 2.0e-3;    // m/s^2/sqrt(Hz)
  double gyro_walk = 1.9393e-5;           // rad/s^2/sqrt(Hz)
  double accel_walk = 3.0e-3;             // m/s^3/sqrt(Hz)
  double gravity_magnitude = 9.81;        // m/s^2

  /// Throws InvalidArgument unless every field is strictly positive and finite.
  void validate() const;
};

}  // namespace vislam
