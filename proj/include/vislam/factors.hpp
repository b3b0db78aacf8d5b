#pragma once

// Residual terms shared by tracking, bundle adjustment and the batch oracles.
// All Jacobians are with respect to the error state [dphi, dv, dp, dbg, dba]
// (see nav_state.hpp) and, for reprojection, the world landmark position.

#include <cmath>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "vislam/camera.hpp"
#include "vislam/imu_types.hpp"
#include "vislam/manifold.hpp"
#include "vislam/nav_state.hpp"
#include "vislam/preintegration.hpp"

namespace vislam {

// Huber thresholds on the whitened residual norm: square roots of the 95%
// chi-square quantiles for the residual dimension.
inline const double kHuberReprojection = std::sqrt(5.991);
inline const double kHuberImu = std::sqrt(16.919);
inline const double kHuberBias = std::sqrt(12.592);
inline const double kHuberPrior = std::sqrt(24.996);

/// Huber loss of a squared whitened norm `chi2`.
inline double huber_cost(double chi2, double delta) {
  if (chi2 <= delta * delta) return chi2;
  return 2.0 * delta * std::sqrt(chi2) - delta * delta;
}

/// d huber_cost / d chi2, the IRLS weight.
inline double huber_weight(double chi2, double delta) {
  if (chi2 <= delta * delta) return 1.0;
  return delta / std::sqrt(chi2);
}

using Matrix2x15d = Eigen::Matrix<double, 2, 15>;
using Matrix9x15d = Eigen::Matrix<double, 9, 15>;
using Matrix6x15d = Eigen::Matrix<double, 6, 15>;

struct ReprojectionTerm {
  Eigen::Vector2d residual;  // observed - predicted, px
  Matrix2x15d J_state;
  Eigen::Matrix<double, 2, 3> J_landmark;
  double chi2 = 0.0;    // whitened by the observation information
  double weight = 1.0;  // Huber IRLS weight
};

/// Returns nullopt when the landmark is at or behind the camera.
std::optional<ReprojectionTerm> reprojection_residual(const NavState& state,
                                                      const Eigen::Vector3d& X_W,
                                                      const Observation& obs,
                                                      const PinholeCamera& camera,
                                                      const RigidPosed& T_CB);

struct ImuTerm {
  Vector9d residual;  // [e_R, e_v, e_p]
  Matrix9x15d J_i;
  Matrix9x15d J_j;
  Matrix9d information;
  Vector6d bias_residual;  // b_j - b_i
  Matrix6x15d J_bias_i;
  Matrix6x15d J_bias_j;
  Matrix6d bias_information;
};

/// Inertial residual between states i and j. The bias of state j drives the
/// first-order correction of the preintegrated deltas.
ImuTerm imu_residual(const NavState& state_i, const NavState& state_j,
                     const PreintegratedImu& pre, const Eigen::Vector3d& gravity,
                     const ImuNoiseModel& noise);

/// Gaussian on one state, expressed as a mean and information in the error state.
struct MarginalPrior {
  NavState mean;
  Matrix15d information = Matrix15d::Zero();
};

struct PriorTerm {
  Vector15d residual;  // state (-) mean
  Matrix15d J;
  double chi2 = 0.0;
};

PriorTerm prior_residual(const NavState& state, const MarginalPrior& prior);

/// Inverse of a symmetric PSD covariance with eigenvalues clamped from below.
template <int N>
Eigen::Matrix<double, N, N> information_from_covariance(
    const Eigen::Matrix<double, N, N>& covariance, double min_eigenvalue = 1e-16) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> eig(covariance);
  const Eigen::Matrix<double, N, 1> inv =
      eig.eigenvalues().cwiseMax(min_eigenvalue).cwiseInverse();
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace vislam
