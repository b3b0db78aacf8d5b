#include "vislam/factors.hpp"

#include <Eigen/Eigenvalues>

namespace vislam {

using namespace state_index;

std::optional<ReprojectionTerm> reprojection_residual(const NavState& state,
                                                      const Eigen::Vector3d& X_W,
                                                      const Observation& obs,
                                                      const PinholeCamera& camera,
                                                      const RigidPosed& T_CB) {
  const Eigen::Matrix3d R_BW = state.R_WB.transpose();
  const Eigen::Vector3d X_B = R_BW * (X_W - state.p_WB);
  const Eigen::Vector3d X_C = T_CB.rotation * X_B + T_CB.translation;
  if (!(X_C.z() > kMinDepth)) return std::nullopt;

  ReprojectionTerm t;
  t.residual = obs.keypoint - project(camera, X_C);
  const Eigen::Matrix<double, 2, 3> J_proj = -project_jacobian(camera, X_C);
  t.J_state.setZero();
  t.J_state.block<2, 3>(0, kRot) = J_proj * T_CB.rotation * hat(X_B);
  t.J_state.block<2, 3>(0, kPos) = -J_proj * T_CB.rotation * R_BW;
  t.J_landmark = J_proj * T_CB.rotation * R_BW;
  t.chi2 = t.residual.dot(obs.info * t.residual);
  t.weight = huber_weight(t.chi2, kHuberReprojection);
  return t;
}

ImuTerm imu_residual(const NavState& state_i, const NavState& state_j,
                     const PreintegratedImu& pre, const Eigen::Vector3d& gravity,
                     const ImuNoiseModel& noise) {
  const double dt = pre.dt_total;
  const Eigen::Vector3d dbg = state_j.bias.gyro - pre.bias_lin.gyro;
  const Eigen::Vector3d dba = state_j.bias.accel - pre.bias_lin.accel;
  const Eigen::Vector3d rot_correction = pre.J_g_dR * dbg;
  const Eigen::Matrix3d dR = pre.delta_R * exp_so3(rot_correction);
  const Eigen::Vector3d dv = pre.delta_v + pre.J_g_dv * dbg + pre.J_a_dv * dba;
  const Eigen::Vector3d dp = pre.delta_p + pre.J_g_dp * dbg + pre.J_a_dp * dba;

  const Eigen::Matrix3d R_iT = state_i.R_WB.transpose();
  const Eigen::Vector3d vel_term = state_j.v_WB - state_i.v_WB - gravity * dt;
  const Eigen::Vector3d pos_term =
      state_j.p_WB - state_i.p_WB - state_i.v_WB * dt - 0.5 * gravity * dt * dt;

  ImuTerm t;
  const Eigen::Vector3d e_R = log_so3(dR.transpose() * R_iT * state_j.R_WB);
  t.residual.segment<3>(0) = e_R;
  t.residual.segment<3>(3) = R_iT * vel_term - dv;
  t.residual.segment<3>(6) = R_iT * pos_term - dp;

  const Eigen::Matrix3d jr_inv = right_jacobian_inv_so3(e_R);
  t.J_i.setZero();
  t.J_j.setZero();
  t.J_i.block<3, 3>(0, kRot) = -jr_inv * state_j.R_WB.transpose() * state_i.R_WB;
  t.J_j.block<3, 3>(0, kRot) = jr_inv;
  t.J_j.block<3, 3>(0, kBiasGyro) =
      -jr_inv * exp_so3(e_R).transpose() * right_jacobian_so3(rot_correction) * pre.J_g_dR;

  t.J_i.block<3, 3>(3, kRot) = hat(R_iT * vel_term);
  t.J_i.block<3, 3>(3, kVel) = -R_iT;
  t.J_j.block<3, 3>(3, kVel) = R_iT;
  t.J_j.block<3, 3>(3, kBiasGyro) = -pre.J_g_dv;
  t.J_j.block<3, 3>(3, kBiasAccel) = -pre.J_a_dv;

  t.J_i.block<3, 3>(6, kRot) = hat(R_iT * pos_term);
  t.J_i.block<3, 3>(6, kVel) = -R_iT * dt;
  t.J_i.block<3, 3>(6, kPos) = -R_iT;
  t.J_j.block<3, 3>(6, kPos) = R_iT;
  t.J_j.block<3, 3>(6, kBiasGyro) = -pre.J_g_dp;
  t.J_j.block<3, 3>(6, kBiasAccel) = -pre.J_a_dp;

  t.information = information_from_covariance<9>(pre.covariance);

  t.bias_residual = state_j.bias.stacked() - state_i.bias.stacked();
  t.J_bias_i.setZero();
  t.J_bias_j.setZero();
  t.J_bias_i.block<6, 6>(0, kBiasGyro) = -Matrix6d::Identity();
  t.J_bias_j.block<6, 6>(0, kBiasGyro) = Matrix6d::Identity();
  t.bias_information = bias_walk_covariance(pre, noise).inverse();
  return t;
}

PriorTerm prior_residual(const NavState& state, const MarginalPrior& prior) {
  PriorTerm t;
  t.residual = local_difference(state, prior.mean);
  t.J.setIdentity();
  t.J.block<3, 3>(kRot, kRot) = right_jacobian_inv_so3(t.residual.segment<3>(kRot));
  t.chi2 = t.residual.dot(prior.information * t.residual);
  return t;
}

}  // namespace vislam
