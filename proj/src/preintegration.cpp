#include "vislam/preintegration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vislam/errors.hpp"

namespace vislam {

namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void ImuNoiseModel::validate() const {
  if (!positive_finite(gyro_noise_density) || !positive_finite(accel_noise_density) ||
      !positive_finite(gyro_walk) || !positive_finite(accel_walk) ||
      !positive_finite(gravity_magnitude)) {
    throw InvalidArgument("ImuNoiseModel: all densities and G must be strictly positive");
  }
}

PreintegratedImu integrate_measurement(const PreintegratedImu& state, const ImuMeasurement& m,
                                       double dt, const ImuNoiseModel& noise) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw InvalidArgument("integrate_measurement: dt must be positive, got " + std::to_string(dt));
  }
  if (!m.omega.allFinite() || !m.accel.allFinite() || !std::isfinite(m.timestamp)) {
    throw InvalidArgument("integrate_measurement: non-finite measurement");
  }

  PreintegratedImu out = state;
  const Eigen::Vector3d acc = m.accel - state.bias_lin.accel;
  const Eigen::Vector3d rate = m.omega - state.bias_lin.gyro;
  const Eigen::Matrix3d& dR = state.delta_R;
  const Eigen::Matrix3d dR_acc_hat = dR * hat(acc);
  const double dt2 = dt * dt;

  out.delta_p = state.delta_p + state.delta_v * dt + 0.5 * dR * acc * dt2;
  out.delta_v = state.delta_v + dR * acc * dt;

  out.J_a_dp = state.J_a_dp + state.J_a_dv * dt - 0.5 * dR * dt2;
  out.J_g_dp = state.J_g_dp + state.J_g_dv * dt - 0.5 * dR_acc_hat * state.J_g_dR * dt2;
  out.J_a_dv = state.J_a_dv - dR * dt;
  out.J_g_dv = state.J_g_dv - dR_acc_hat * state.J_g_dR * dt;

  const Eigen::Vector3d step = rate * dt;
  const Eigen::Matrix3d dR_inc = exp_so3(step);
  const Eigen::Matrix3d jr = right_jacobian_so3(step);

  Matrix9d a = Matrix9d::Identity();
  a.block<3, 3>(0, 0) = dR_inc.transpose();
  a.block<3, 3>(3, 0) = -dR_acc_hat * dt;
  a.block<3, 3>(6, 0) = -0.5 * dR_acc_hat * dt2;
  a.block<3, 3>(6, 3) = Eigen::Matrix3d::Identity() * dt;

  Eigen::Matrix<double, 9, 6> b = Eigen::Matrix<double, 9, 6>::Zero();
  b.block<3, 3>(0, 0) = jr * dt;
  b.block<3, 3>(3, 3) = dR * dt;
  b.block<3, 3>(6, 3) = 0.5 * dR * dt2;

  Vector6d q;
  q.head<3>().setConstant(noise.gyro_noise_density * noise.gyro_noise_density / dt);
  q.tail<3>().setConstant(noise.accel_noise_density * noise.accel_noise_density / dt);

  out.covariance = a * state.covariance * a.transpose() + b * q.asDiagonal() * b.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();

  out.J_g_dR = dR_inc.transpose() * state.J_g_dR - jr * dt;
  out.delta_R = normalize_rotation(dR * dR_inc);
  out.dt_total = state.dt_total + dt;
  return out;
}

CorrectedDeltas correct_bias_first_order(const PreintegratedImu& pre, const ImuBias& new_bias) {
  const Eigen::Vector3d dbg = new_bias.gyro - pre.bias_lin.gyro;
  const Eigen::Vector3d dba = new_bias.accel - pre.bias_lin.accel;
  return {pre.delta_R * exp_so3(pre.J_g_dR * dbg),
          pre.delta_v + pre.J_g_dv * dbg + pre.J_a_dv * dba,
          pre.delta_p + pre.J_g_dp * dbg + pre.J_a_dp * dba};
}

NavState predict(const NavState& state_i, const PreintegratedImu& pre,
                 const Eigen::Vector3d& gravity) {
  const CorrectedDeltas d = correct_bias_first_order(pre, state_i.bias);
  const double dt = pre.dt_total;
  NavState out = state_i;
  out.R_WB = normalize_rotation(state_i.R_WB * d.delta_R);
  out.v_WB = state_i.v_WB + gravity * dt + state_i.R_WB * d.delta_v;
  out.p_WB = state_i.p_WB + state_i.v_WB * dt + 0.5 * gravity * dt * dt + state_i.R_WB * d.delta_p;
  out.timestamp = state_i.timestamp + dt;
  return out;
}

Matrix6d bias_walk_covariance(const PreintegratedImu& pre, const ImuNoiseModel& noise) {
  Vector6d d;
  d.head<3>().setConstant(noise.gyro_walk * noise.gyro_walk * pre.dt_total);
  d.tail<3>().setConstant(noise.accel_walk * noise.accel_walk * pre.dt_total);
  return d.asDiagonal();
}

PreintegratedImu preintegrate(std::span<const ImuMeasurement> stream, double t_begin, double t_end,
                              const ImuBias& bias, const ImuNoiseModel& noise) {
  if (!(t_end > t_begin)) {
    throw InvalidArgument("preintegrate: empty time span");
  }
  constexpr double kTimeEps = 1e-9;
  if (stream.empty() || t_begin < stream.front().timestamp - kTimeEps ||
      t_begin >= stream.back().timestamp + kTimeEps) {
    throw InsufficientData("preintegrate: span does not start inside the IMU stream");
  }
  PreintegratedImu pre(bias);
  // First sample whose hold interval reaches past t_begin.
  auto it = std::upper_bound(stream.begin(), stream.end(), t_begin + kTimeEps,
                             [](double t, const ImuMeasurement& m) { return t < m.timestamp; });
  if (it != stream.begin()) --it;
  for (; it != stream.end(); ++it) {
    if (it->timestamp >= t_end - kTimeEps) break;
    const auto next = std::next(it);
    const double hold_end = next == stream.end() ? t_end : std::min(next->timestamp, t_end);
    const double start = std::max(it->timestamp, t_begin);
    const double dt = hold_end - start;
    if (dt > kTimeEps) pre = integrate_measurement(pre, *it, dt, noise);
  }
  if (pre.dt_total <= 0.0) {
    throw InsufficientData("preintegrate: no IMU samples inside the requested span");
  }
  return pre;
}

}  // namespace vislam
