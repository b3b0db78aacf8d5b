#include "vislam/initializer.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "vislam/errors.hpp"

namespace vislam {

namespace {

const Eigen::Vector3d kGravityDirInertial(0.0, 0.0, -1.0);

Eigen::Matrix3d body_rotation(const KeyframeVisualPose& kf, const RigidPosed& T_CB) {
  return kf.R_WC * T_CB.rotation;
}

void require_keyframes(const InitializationInput& input, std::size_t minimum) {
  if (input.keyframes.size() < minimum) {
    throw InsufficientData("initialization needs at least " + std::to_string(minimum) +
                           " keyframes, got " + std::to_string(input.keyframes.size()));
  }
}

}  // namespace

void InitializationInput::validate() const {
  if (preintegrations.size() + 1 != keyframes.size()) {
    throw InvalidArgument("InitializationInput: need exactly one preintegration per keyframe pair");
  }
  if (!(gravity_magnitude > 0.0)) {
    throw InvalidArgument("InitializationInput: gravity magnitude must be positive");
  }
  for (std::size_t i = 0; i + 1 < keyframes.size(); ++i) {
    const double gap = keyframes[i + 1].timestamp - keyframes[i].timestamp;
    if (!(gap > 0.0)) {
      throw InvalidArgument("InitializationInput: keyframe timestamps must increase");
    }
    if (std::abs(preintegrations[i].dt_total - gap) > 1e-3) {
      throw InvalidArgument("InitializationInput: preintegration " + std::to_string(i) +
                            " does not span its keyframe gap");
    }
  }
}

InitializationInput make_initialization_input(std::span<const KeyframeVisualPose> keyframes,
                                              std::span<const ImuMeasurement> imu,
                                              const RigidPosed& T_CB, const ImuNoiseModel& noise,
                                              const ImuBias& bias) {
  InitializationInput input;
  input.keyframes.assign(keyframes.begin(), keyframes.end());
  input.T_CB = T_CB;
  input.gravity_magnitude = noise.gravity_magnitude;
  for (std::size_t i = 0; i + 1 < keyframes.size(); ++i) {
    input.preintegrations.push_back(
        preintegrate(imu, keyframes[i].timestamp, keyframes[i + 1].timestamp, bias, noise));
  }
  return input;
}

Eigen::Matrix3d gravity_alignment_rotation(const Eigen::Vector3d& gravity_dir) {
  const Eigen::Vector3d dir = gravity_dir.normalized();
  const Eigen::Vector3d cross = kGravityDirInertial.cross(dir);
  const double n = cross.norm();
  const double c = kGravityDirInertial.dot(dir);
  if (n < 1e-8) {
    if (c > 0.0) return Eigen::Matrix3d::Identity();
    return exp_so3(Eigen::Vector3d(std::numbers::pi, 0.0, 0.0));
  }
  return exp_so3(Eigen::Vector3d(cross / n * std::atan2(n, c)));
}

double condition_number(const Eigen::MatrixXd& A) {
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues();
  const double s_min = sv(sv.size() - 1);
  if (!(s_min > 0.0)) return std::numeric_limits<double>::infinity();
  return sv(0) / s_min;
}

SvdSolution solve_svd(const LinearSystem& system, double degenerate_ratio) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(system.A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double s_max = sv(0);
  const double s_min = sv(sv.size() - 1);
  if (!(s_max > 0.0) || s_min <= degenerate_ratio * s_max) {
    throw DegenerateMotion("linear system is rank deficient (sigma_min/sigma_max = " +
                           std::to_string(s_max > 0.0 ? s_min / s_max : 0.0) + ")");
  }
  SvdSolution out;
  out.x = svd.matrixV() *
          (sv.cwiseInverse().asDiagonal() * (svd.matrixU().transpose() * system.b));
  out.condition_number = s_max / s_min;
  return out;
}

Eigen::Vector3d estimate_gyro_bias(const InitializationInput& input,
                                   const InitializerOptions& options) {
  require_keyframes(input, 2);
  if (input.preintegrations.size() + 1 != input.keyframes.size()) {
    throw InvalidArgument("estimate_gyro_bias: preintegration count mismatch");
  }
  Eigen::Vector3d bg = Eigen::Vector3d::Zero();
  for (int iter = 0; iter < options.gyro_max_iterations; ++iter) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i + 1 < input.keyframes.size(); ++i) {
      const PreintegratedImu& pre = input.preintegrations[i];
      const Eigen::Matrix3d R_i = body_rotation(input.keyframes[i], input.T_CB);
      const Eigen::Matrix3d R_j = body_rotation(input.keyframes[i + 1], input.T_CB);
      const Eigen::Vector3d correction = pre.J_g_dR * (bg - pre.bias_lin.gyro);
      const Eigen::Matrix3d predicted = pre.delta_R * exp_so3(correction);
      const Eigen::Vector3d r = log_so3(predicted.transpose() * R_i.transpose() * R_j);
      const Eigen::Matrix3d jac = -right_jacobian_inv_so3(r) * exp_so3(r).transpose() *
                                  right_jacobian_so3(correction) * pre.J_g_dR;
      h += jac.transpose() * jac;
      g += jac.transpose() * r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(h);
    const double e_max = eig.eigenvalues().maxCoeff();
    if (!(e_max > 0.0) || eig.eigenvalues().minCoeff() <= options.degenerate_ratio * e_max) {
      throw DegenerateMotion("estimate_gyro_bias: singular normal equations");
    }
    const Eigen::Vector3d step = -h.ldlt().solve(g);
    bg += step;
    if (step.norm() < options.gyro_step_tolerance) break;
  }
  return bg;
}

InitializationInput with_gyro_bias(const InitializationInput& input,
                                   const Eigen::Vector3d& gyro_bias) {
  InitializationInput out = input;
  const ImuBias target{gyro_bias, Eigen::Vector3d::Zero()};
  for (PreintegratedImu& pre : out.preintegrations) {
    const CorrectedDeltas d = correct_bias_first_order(pre, target);
    pre.delta_R = d.delta_R;
    pre.delta_v = d.delta_v;
    pre.delta_p = d.delta_p;
    pre.bias_lin = target;
  }
  return out;
}

TripletSystemBlocks triplet_blocks(const InitializationInput& input, std::size_t first,
                                   const Eigen::Matrix3d& R_WI) {
  if (first + 2 >= input.keyframes.size()) {
    throw InvalidArgument("triplet_blocks: triplet index out of range");
  }
  const KeyframeVisualPose& k1 = input.keyframes[first];
  const KeyframeVisualPose& k2 = input.keyframes[first + 1];
  const KeyframeVisualPose& k3 = input.keyframes[first + 2];
  const PreintegratedImu& pre12 = input.preintegrations[first];
  const PreintegratedImu& pre23 = input.preintegrations[first + 1];
  const Eigen::Vector3d& p_CB = input.T_CB.translation;
  const Eigen::Matrix3d Rb1 = body_rotation(k1, input.T_CB);
  const Eigen::Matrix3d Rb2 = body_rotation(k2, input.T_CB);
  const double dt12 = pre12.dt_total;
  const double dt23 = pre23.dt_total;
  const double c = dt12 * dt12 * dt23 + dt23 * dt23 * dt12;
  const double G = input.gravity_magnitude;

  TripletSystemBlocks blk;
  blk.lambda = (k2.p_WC - k1.p_WC) * dt23 - (k3.p_WC - k2.p_WC) * dt12;
  blk.beta = 0.5 * c * Eigen::Matrix3d::Identity();
  blk.gamma = (k1.R_WC - k2.R_WC) * p_CB * dt23 - (k2.R_WC - k3.R_WC) * p_CB * dt12 +
              Rb1 * pre12.delta_p * dt23 - Rb1 * pre12.delta_v * dt12 * dt23 -
              Rb2 * pre23.delta_p * dt12;
  const Eigen::Matrix3d gravity_skew = R_WI * hat(kGravityDirInertial) * G;
  blk.phi = (-0.5 * c * gravity_skew).leftCols<2>();
  blk.zeta = Rb2 * pre23.J_a_dp * dt12 + Rb1 * pre12.J_a_dv * dt12 * dt23 -
             Rb1 * pre12.J_a_dp * dt23;
  blk.psi = blk.gamma - 0.5 * c * R_WI * kGravityDirInertial * G;
  return blk;
}

LinearSystem build_scale_gravity_system(const InitializationInput& input) {
  require_keyframes(input, 4);
  const auto rows = static_cast<Eigen::Index>(3 * (input.keyframes.size() - 2));
  LinearSystem sys{Eigen::MatrixXd::Zero(rows, 4), Eigen::VectorXd::Zero(rows)};
  for (std::size_t i = 0; i + 2 < input.keyframes.size(); ++i) {
    const TripletSystemBlocks blk = triplet_blocks(input, i, Eigen::Matrix3d::Identity());
    const auto r = static_cast<Eigen::Index>(3 * i);
    sys.A.block<3, 1>(r, 0) = blk.lambda;
    sys.A.block<3, 3>(r, 1) = blk.beta;
    sys.b.segment<3>(r) = blk.gamma;
  }
  return sys;
}

LinearSystem build_accel_bias_system(const InitializationInput& input,
                                     const Eigen::Matrix3d& R_WI) {
  require_keyframes(input, 4);
  const auto rows = static_cast<Eigen::Index>(3 * (input.keyframes.size() - 2));
  LinearSystem sys{Eigen::MatrixXd::Zero(rows, 6), Eigen::VectorXd::Zero(rows)};
  for (std::size_t i = 0; i + 2 < input.keyframes.size(); ++i) {
    const TripletSystemBlocks blk = triplet_blocks(input, i, R_WI);
    const auto r = static_cast<Eigen::Index>(3 * i);
    sys.A.block<3, 1>(r, 0) = blk.lambda;
    sys.A.block<3, 2>(r, 1) = blk.phi;
    sys.A.block<3, 3>(r, 3) = blk.zeta;
    sys.b.segment<3>(r) = blk.psi;
  }
  return sys;
}

namespace {

// Preintegrations evaluated at their own gyro bias and zero accelerometer
// bias, which is what the triplet blocks assume.
InitializationInput zero_accel_bias(const InitializationInput& input) {
  InitializationInput out = input;
  for (PreintegratedImu& pre : out.preintegrations) {
    if (pre.bias_lin.accel.isZero(0.0)) continue;
    const ImuBias target{pre.bias_lin.gyro, Eigen::Vector3d::Zero()};
    const CorrectedDeltas d = correct_bias_first_order(pre, target);
    pre.delta_v = d.delta_v;
    pre.delta_p = d.delta_p;
    pre.bias_lin = target;
  }
  return out;
}

}  // namespace

ScaleGravityEstimate solve_scale_gravity(const InitializationInput& input,
                                         const InitializerOptions& options) {
  require_keyframes(input, 4);
  const LinearSystem sys = build_scale_gravity_system(zero_accel_bias(input));
  const SvdSolution sol = solve_svd(sys, options.degenerate_ratio);
  ScaleGravityEstimate out;
  out.scale = sol.x(0);
  out.gravity_W = sol.x.segment<3>(1);
  out.condition_number = sol.condition_number;
  out.ill_conditioned = sol.condition_number > options.condition_threshold;
  return out;
}

AccelBiasEstimate refine_with_accel_bias(const InitializationInput& input,
                                         const Eigen::Vector3d& g_approx,
                                         const InitializerOptions& options) {
  require_keyframes(input, 4);
  if (!(g_approx.norm() > 0.0)) {
    throw InvalidArgument("refine_with_accel_bias: gravity estimate has zero norm");
  }
  const Eigen::Matrix3d R_WI = gravity_alignment_rotation(g_approx);
  const LinearSystem sys = build_accel_bias_system(zero_accel_bias(input), R_WI);
  const SvdSolution sol = solve_svd(sys, options.degenerate_ratio);

  AccelBiasEstimate out;
  out.scale = sol.x(0);
  out.delta_theta_xy = sol.x.segment<2>(1);
  out.accel_bias = sol.x.segment<3>(3);
  out.R_WI = R_WI * exp_so3(Eigen::Vector3d(out.delta_theta_xy.x(), out.delta_theta_xy.y(), 0.0));
  out.gravity_W = out.R_WI * kGravityDirInertial * input.gravity_magnitude;
  out.condition_number = sol.condition_number;
  out.ill_conditioned = sol.condition_number > options.condition_threshold;
  return out;
}

std::vector<Eigen::Vector3d> estimate_velocities(const InitializationInput& input, double scale,
                                                 const Eigen::Vector3d& gravity_W,
                                                 const Eigen::Vector3d& accel_bias) {
  require_keyframes(input, 2);
  const InitializationInput in = zero_accel_bias(input);
  const Eigen::Vector3d& p_CB = in.T_CB.translation;
  const std::size_t n = in.keyframes.size();
  std::vector<Eigen::Vector3d> v(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const KeyframeVisualPose& a = in.keyframes[i];
    const KeyframeVisualPose& b = in.keyframes[i + 1];
    const PreintegratedImu& pre = in.preintegrations[i];
    const double dt = pre.dt_total;
    const Eigen::Vector3d dp = pre.delta_p + pre.J_a_dp * accel_bias;
    v[i] = (scale * (b.p_WC - a.p_WC) - 0.5 * gravity_W * dt * dt -
            body_rotation(a, in.T_CB) * dp - (a.R_WC - b.R_WC) * p_CB) /
           dt;
  }
  const PreintegratedImu& last = in.preintegrations[n - 2];
  v[n - 1] = v[n - 2] + gravity_W * last.dt_total +
             body_rotation(in.keyframes[n - 2], in.T_CB) *
                 (last.delta_v + last.J_a_dv * accel_bias);
  return v;
}

InitializationResult run_full_initialization(const InitializationInput& input,
                                             const InitializerOptions& options) {
  input.validate();
  require_keyframes(input, 4);

  InitializationResult out;
  out.gyro_bias = estimate_gyro_bias(input, options);
  const InitializationInput corrected = with_gyro_bias(input, out.gyro_bias);
  const ScaleGravityEstimate sg = solve_scale_gravity(corrected, options);
  const AccelBiasEstimate ab = refine_with_accel_bias(corrected, sg.gravity_W, options);

  out.scale = ab.scale;
  out.gravity_W = ab.gravity_W;
  out.accel_bias = ab.accel_bias;
  out.R_WI = ab.R_WI;
  out.condition_number_stage2 = sg.condition_number;
  out.condition_number_stage3 = ab.condition_number;
  out.ill_conditioned = sg.ill_conditioned || ab.ill_conditioned;
  out.velocities = estimate_velocities(corrected, ab.scale, ab.gravity_W, ab.accel_bias);
  return out;
}

ImuBias reinitialize_biases(std::span<const KeyframeVisualPose> frames,
                            std::span<const PreintegratedImu> preintegrations,
                            const RigidPosed& T_CB, double scale,
                            const Eigen::Vector3d& gravity_W,
                            const BiasReinitOptions& options) {
  if (frames.size() != options.frame_count) {
    throw InvalidArgument("reinitialize_biases: expected " + std::to_string(options.frame_count) +
                          " frames, got " + std::to_string(frames.size()));
  }
  InitializationInput input;
  input.keyframes.assign(frames.begin(), frames.end());
  input.preintegrations.assign(preintegrations.begin(), preintegrations.end());
  input.T_CB = T_CB;
  input.gravity_magnitude = gravity_W.norm();
  input.validate();
  require_keyframes(input, 4);

  ImuBias out;
  out.gyro = estimate_gyro_bias(input, options.solver);
  const InitializationInput corrected = with_gyro_bias(input, out.gyro);

  const auto rows = static_cast<Eigen::Index>(3 * (frames.size() - 2));
  LinearSystem sys{Eigen::MatrixXd::Zero(rows, 3), Eigen::VectorXd::Zero(rows)};
  for (std::size_t i = 0; i + 2 < frames.size(); ++i) {
    const TripletSystemBlocks blk = triplet_blocks(corrected, i, Eigen::Matrix3d::Identity());
    const auto r = static_cast<Eigen::Index>(3 * i);
    sys.A.block<3, 3>(r, 0) = blk.zeta;
    sys.b.segment<3>(r) = blk.gamma - blk.lambda * scale - blk.beta * gravity_W;
  }
  out.accel = solve_svd(sys, options.solver.degenerate_ratio).x;
  return out;
}

namespace {

void write_vec(std::ostream& os, const char* key, const Eigen::Vector3d& v) {
  os << key << ' ' << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
}

}  // namespace

void write_result_record(std::ostream& os, const InitializationResult& r) {
  const auto old_precision = os.precision(17);
  os << "scale " << r.scale << '\n';
  write_vec(os, "gravity_w", r.gravity_W);
  write_vec(os, "gyro_bias", r.gyro_bias);
  write_vec(os, "accel_bias", r.accel_bias);
  os << "condition_number_stage2 " << r.condition_number_stage2 << '\n';
  os << "condition_number_stage3 " << r.condition_number_stage3 << '\n';
  os << "ill_conditioned " << (r.ill_conditioned ? 1 : 0) << '\n';
  os << "keyframes " << r.velocities.size() << '\n';
  for (std::size_t k = 0; k < r.velocities.size(); ++k) {
    write_vec(os, ("velocity_" + std::to_string(k)).c_str(), r.velocities[k]);
  }
  os.precision(old_precision);
}

InitializationResult read_result_record(std::istream& is) {
  std::map<std::string, std::vector<double>> fields;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::vector<double> values;
    double x = 0.0;
    while (ls >> x) values.push_back(x);
    if (!ls.eof()) throw ParseError("<record>", line_no, "non-numeric value for " + key);
    fields[key] = std::move(values);
  }
  auto get = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    auto it = fields.find(key);
    if (it == fields.end() || it->second.size() != n) {
      throw ParseError("<record>", 0, "missing or malformed field " + key);
    }
    return it->second;
  };
  auto vec3 = [&](const std::string& key) {
    const auto& v = get(key, 3);
    return Eigen::Vector3d(v[0], v[1], v[2]);
  };
  InitializationResult r;
  r.scale = get("scale", 1)[0];
  r.gravity_W = vec3("gravity_w");
  r.gyro_bias = vec3("gyro_bias");
  r.accel_bias = vec3("accel_bias");
  r.condition_number_stage2 = get("condition_number_stage2", 1)[0];
  r.condition_number_stage3 = get("condition_number_stage3", 1)[0];
  r.ill_conditioned = get("ill_conditioned", 1)[0] != 0.0;
  const auto n = static_cast<std::size_t>(get("keyframes", 1)[0]);
  for (std::size_t k = 0; k < n; ++k) r.velocities.push_back(vec3("velocity_" + std::to_string(k)));
  r.R_WI = gravity_alignment_rotation(r.gravity_W);
  return r;
}

}  // namespace vislam
