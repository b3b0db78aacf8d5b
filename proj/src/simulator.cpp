#include "vislam/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vislam/errors.hpp"

namespace vislam {

namespace {

constexpr std::int64_t kNanosPerSecond = 1'000'000'000;

Eigen::Matrix3d rot_x(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
}
Eigen::Matrix3d rot_y(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
}
Eigen::Matrix3d rot_z(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// Independent deterministic streams derived from one seed.
std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Eigen::Vector3d gaussian3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

double truncated_gaussian(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  double x = n(rng);
  while (std::abs(x) > 3.0) x = n(rng);
  return sigma * x;
}

}  // namespace

TrajectoryModel::Kinematics TrajectoryModel::kinematics(double t) const {
  Kinematics k{center, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
  switch (kind) {
    case TrajectoryKind::kCircle: {
      const double th = angular_rate * t;
      const double w2 = angular_rate * angular_rate;
      k.p += radius * Eigen::Vector3d(std::cos(th), std::sin(th), 0.0);
      k.v = radius * angular_rate * Eigen::Vector3d(-std::sin(th), std::cos(th), 0.0);
      k.a = -radius * w2 * Eigen::Vector3d(std::cos(th), std::sin(th), 0.0);
      const double z = vertical_rate * t;
      k.p.z() += vertical_amplitude * std::sin(z);
      k.v.z() += vertical_amplitude * vertical_rate * std::cos(z);
      k.a.z() -= vertical_amplitude * vertical_rate * vertical_rate * std::sin(z);
      break;
    }
    case TrajectoryKind::kLissajous:
      for (int i = 0; i < 3; ++i) {
        const double arg = frequency(i) * t + phase(i);
        k.p(i) += amplitude(i) * std::sin(arg);
        k.v(i) = amplitude(i) * frequency(i) * std::cos(arg);
        k.a(i) = -amplitude(i) * frequency(i) * frequency(i) * std::sin(arg);
      }
      break;
    case TrajectoryKind::kWaypointSpline: {
      if (waypoints.size() < 2) throw InvalidArgument("waypoint spline needs at least 2 waypoints");
      const auto segments = static_cast<double>(waypoints.size() - 1);
      const double u = std::clamp(t / segment_duration, 0.0, segments);
      const auto s = std::min(static_cast<std::size_t>(u), waypoints.size() - 2);
      const double tau = u - static_cast<double>(s);
      const double T = segment_duration;
      const double tau2 = tau * tau;
      const double pos = tau2 * tau * (10.0 - 15.0 * tau + 6.0 * tau2);
      const double vel = 30.0 * tau2 * (1.0 - 2.0 * tau + tau2) / T;
      const double acc = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * tau2) / (T * T);
      const Eigen::Vector3d d = waypoints[s + 1] - waypoints[s];
      k.p = waypoints[s] + pos * d;
      k.v = vel * d;
      k.a = acc * d;
      break;
    }
    case TrajectoryKind::kHover:
      break;
  }
  k.p += linear_velocity * t;
  k.v += linear_velocity;
  return k;
}

Eigen::Matrix3d TrajectoryModel::attitude_at(double t, const Eigen::Vector3d& velocity) const {
  double yaw = yaw0;
  if (attitude == AttitudeMode::kYawFollow) {
    if (velocity.head<2>().norm() > 1e-6) yaw = std::atan2(velocity.y(), velocity.x());
  } else {
    yaw += yaw_rate * t + yaw_amplitude * std::sin(yaw_oscillation_rate * t);
  }
  const double roll = tilt_amplitude * std::sin(tilt_rate * t);
  const double pitch = tilt_amplitude * std::sin(1.3 * tilt_rate * t + 0.5);
  return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
}

TrajectoryModel trajectory_preset(std::string_view name, double duration) {
  TrajectoryModel m;
  m.duration = duration;
  if (name == "excited") {
    m.kind = TrajectoryKind::kLissajous;
    m.amplitude = Eigen::Vector3d(2.0, 1.5, 0.6);
    m.frequency = Eigen::Vector3d(0.9, 0.7, 1.1);
    m.phase = Eigen::Vector3d(0.0, 0.5, 1.0);
    m.attitude = AttitudeMode::kFixed;
    m.yaw_amplitude = 0.8;
    m.yaw_oscillation_rate = 0.6;
    m.tilt_amplitude = 0.15;
    m.tilt_rate = 0.9;
  } else if (name == "loops") {
    m.kind = TrajectoryKind::kCircle;
    m.radius = 3.0;
    m.angular_rate = 2.0 * M_PI / 20.0;
    // harmonics of the loop rate: every lap retraces the same positions
    m.vertical_amplitude = 1.0;
    m.vertical_rate = 3.0 * m.angular_rate;
    m.tilt_amplitude = 0.2;
    m.tilt_rate = 4.0 * m.angular_rate;
  } else if (name == "hover") {
    m.kind = TrajectoryKind::kHover;
    m.attitude = AttitudeMode::kFixed;
  } else if (name == "constant_velocity") {
    m.kind = TrajectoryKind::kHover;
    m.attitude = AttitudeMode::kFixed;
    m.linear_velocity = Eigen::Vector3d(0.5, 0.2, 0.05);
  } else {
    throw InvalidArgument("unknown trajectory preset '" + std::string(name) + "'");
  }
  return m;
}

RigidPosed default_T_CB() {
  Eigen::Matrix3d R_BC;
  R_BC << 0.0, 0.0, 1.0,
          -1.0, 0.0, 0.0,
          0.0, -1.0, 0.0;
  const RigidPosed T_BC(R_BC, Eigen::Vector3d(0.05, -0.02, 0.01));
  return T_BC.inverse();
}

void SimConfig::validate() const {
  if (imu_rate <= 0 || cam_rate <= 0 || imu_rate % cam_rate != 0) {
    throw InvalidArgument("SimConfig: imu_rate must be a positive multiple of cam_rate");
  }
  if (kNanosPerSecond % imu_rate != 0 || kNanosPerSecond % cam_rate != 0) {
    throw InvalidArgument("SimConfig: rates must divide one second in nanoseconds");
  }
  if (!(visual_scale > 0.0)) throw InvalidArgument("SimConfig: visual_scale must be positive");
  if (pixel_sigma < 0.0 || visual_rotation_sigma < 0.0 || visual_position_sigma < 0.0) {
    throw InvalidArgument("SimConfig: noise levels must be non-negative");
  }
  if (landmark_count < 0 || !(shell_outer_margin > shell_inner_margin) ||
      shell_inner_margin < 0.0) {
    throw InvalidArgument("SimConfig: landmark shell must have outer margin > inner margin >= 0");
  }
  if (!(camera.fu > 0.0) || !(camera.fv > 0.0)) {
    throw InvalidArgument("SimConfig: focal lengths must be positive");
  }
  noise.validate();
}

double sample_time(std::int64_t k, int rate) {
  return static_cast<double>(k * (kNanosPerSecond / rate)) / static_cast<double>(kNanosPerSecond);
}

const NavState& SimulatedDataset::state_at_frame(std::size_t frame) const {
  const std::size_t per_frame = imu.size() / std::max<std::size_t>(frames.size(), 1);
  // Frames sit on IMU samples; find the one with the same timestamp.
  std::size_t k = std::min(frame * per_frame, ground_truth.size() - 1);
  const double t = frames.at(frame).timestamp;
  while (k > 0 && ground_truth[k].timestamp > t) --k;
  while (k + 1 < ground_truth.size() && ground_truth[k].timestamp < t) ++k;
  return ground_truth[k];
}

SimulatedDataset generate(const TrajectoryModel& model, const SimConfig& config) {
  config.validate();
  if (!(model.duration > 0.0)) throw InvalidArgument("TrajectoryModel: duration must be positive");

  SimulatedDataset out;
  out.gravity_W = Eigen::Vector3d(0.0, 0.0, -config.noise.gravity_magnitude);
  out.camera = config.camera;
  out.T_CB = config.T_CB;
  out.noise = config.noise;
  out.pixel_sigma = config.pixel_sigma;
  out.visual_scale = config.visual_scale;

  const int rate = config.imu_rate;
  const auto samples = static_cast<std::int64_t>(std::llround(model.duration * rate));
  const double dt_nominal = 1.0 / rate;

  // Closed-form rotation and velocity at every sample plus one.
  std::vector<Eigen::Matrix3d> R(samples + 1);
  std::vector<Eigen::Vector3d> V(samples + 1);
  std::vector<double> T(samples + 1);
  for (std::int64_t k = 0; k <= samples; ++k) {
    T[k] = sample_time(k, rate);
    const auto kin = model.kinematics(T[k]);
    V[k] = kin.v;
    R[k] = model.attitude_at(T[k], kin.v);
  }

  std::mt19937_64 imu_rng = make_engine(config.seed, 1);
  std::mt19937_64 lm_rng = make_engine(config.seed, 2);
  std::mt19937_64 px_rng = make_engine(config.seed, 3);
  std::mt19937_64 vis_rng = make_engine(config.seed, 4);

  out.ground_truth.reserve(samples);
  out.imu.reserve(samples);
  ImuBias bias = config.bias;
  Eigen::Vector3d p = model.kinematics(0.0).p;
  const double G4 = 4.0 * config.noise.gravity_magnitude;
  for (std::int64_t k = 0; k < samples; ++k) {
    const double dt = T[k + 1] - T[k];
    NavState s;
    s.timestamp = T[k];
    s.R_WB = R[k];
    s.v_WB = V[k];
    s.p_WB = p;
    s.bias = bias;
    out.ground_truth.push_back(s);

    const Eigen::Vector3d acc_W = (V[k + 1] - V[k]) / dt;
    const Eigen::Vector3d specific = acc_W - out.gravity_W;
    if (specific.norm() >= G4) {
      throw InvalidArgument("generate: specific force exceeds 4 g at t=" + std::to_string(T[k]));
    }
    ImuMeasurement m;
    m.timestamp = T[k];
    m.omega = log_so3(R[k].transpose() * R[k + 1]) / dt + bias.gyro;
    m.accel = R[k].transpose() * specific + bias.accel;
    if (config.imu_noise) {
      m.omega += config.noise.gyro_noise_density / std::sqrt(dt_nominal) * gaussian3(imu_rng);
      m.accel += config.noise.accel_noise_density / std::sqrt(dt_nominal) * gaussian3(imu_rng);
    }
    out.imu.push_back(m);

    p += V[k] * dt + 0.5 * (V[k + 1] - V[k]) * dt;
    if (config.bias_random_walk) {
      bias.gyro += config.noise.gyro_walk * std::sqrt(dt) * gaussian3(imu_rng);
      bias.accel += config.noise.accel_walk * std::sqrt(dt) * gaussian3(imu_rng);
    }
  }

  // Landmarks uniformly in a box shell around the trajectory.
  Eigen::Vector3d lo = out.ground_truth.front().p_WB;
  Eigen::Vector3d hi = lo;
  for (const NavState& s : out.ground_truth) {
    lo = lo.cwiseMin(s.p_WB);
    hi = hi.cwiseMax(s.p_WB);
  }
  const Eigen::Vector3d inner_lo = lo.array() - config.shell_inner_margin;
  const Eigen::Vector3d inner_hi = hi.array() + config.shell_inner_margin;
  const Eigen::Vector3d outer_lo = lo.array() - config.shell_outer_margin;
  const Eigen::Vector3d outer_hi = hi.array() + config.shell_outer_margin;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(out.landmarks.size()) < config.landmark_count) {
    Eigen::Vector3d x;
    for (int i = 0; i < 3; ++i) x(i) = outer_lo(i) + unit(lm_rng) * (outer_hi(i) - outer_lo(i));
    const bool inside = (x.array() > inner_lo.array()).all() && (x.array() < inner_hi.array()).all();
    if (inside) continue;
    out.landmarks.push_back({static_cast<int>(out.landmarks.size()), x});
  }

  // Camera frames on every (imu_rate / cam_rate)-th sample.
  const std::int64_t stride = rate / config.cam_rate;
  const RigidPosed T_BC = config.T_CB.inverse();
  const double info_scale =
      config.pixel_sigma > 0.0 ? 1.0 / (config.pixel_sigma * config.pixel_sigma) : 1.0;
  const Eigen::Matrix2d info = info_scale * Eigen::Matrix2d::Identity();
  std::vector<std::vector<int>> visible;
  std::vector<std::size_t> frame_sample;
  for (std::int64_t k = 0; k < samples; k += stride) {
    const NavState& s = out.ground_truth[k];
    const RigidPosed T_WC = RigidPosed(s.R_WB, s.p_WB) * T_BC;
    const RigidPosed T_CW = T_WC.inverse();
    CameraFrame frame;
    frame.timestamp = s.timestamp;
    std::vector<int> ids;
    for (const Landmark& lm : out.landmarks) {
      const Eigen::Vector3d X_C = T_CW * lm.X_W;
      if (X_C.z() < config.min_depth || X_C.z() > config.max_depth) continue;
      const Eigen::Vector2d uv = project(config.camera, X_C);
      if (!config.camera.in_image(uv)) continue;
      Observation obs;
      obs.landmark_id = lm.id;
      obs.keypoint = uv;
      if (config.pixel_sigma > 0.0) {
        const double du = truncated_gaussian(px_rng, config.pixel_sigma);
        const double dv = truncated_gaussian(px_rng, config.pixel_sigma);
        obs.keypoint += Eigen::Vector2d(du, dv);
      }
      obs.info = info;
      frame.observations.push_back(obs);
      ids.push_back(lm.id);
    }
    out.frames.push_back(std::move(frame));
    visible.push_back(std::move(ids));
    frame_sample.push_back(static_cast<std::size_t>(k));
  }

  // Monocular poses: anchored at the first camera, metric positions divided
  // by the visual scale.
  const NavState& s0 = out.ground_truth.front();
  const RigidPosed T_VW = (RigidPosed(s0.R_WB, s0.p_WB) * T_BC).inverse();
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    const NavState& s = out.ground_truth[frame_sample[f]];
    const RigidPosed T_VC = T_VW * RigidPosed(s.R_WB, s.p_WB) * T_BC;
    KeyframeVisualPose vp;
    vp.id = static_cast<int>(f);
    vp.timestamp = s.timestamp;
    vp.R_WC = T_VC.rotation;
    vp.p_WC = T_VC.translation;
    if (config.visual_rotation_sigma > 0.0) {
      const Eigen::Vector3d dphi = config.visual_rotation_sigma * gaussian3(vis_rng);
      vp.R_WC = vp.R_WC * exp_so3(dphi);
    }
    if (config.visual_position_sigma > 0.0) {
      const Eigen::Vector3d dp = config.visual_position_sigma * gaussian3(vis_rng);
      vp.p_WC += dp;
    }
    vp.p_WC /= config.visual_scale;
    out.visual_poses.push_back(vp);
  }

  // Loop oracle: revisits of an earlier place with enough shared landmarks.
  const auto query_stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.loop_query_interval * config.cam_rate)));
  for (std::size_t q = 0; q < out.frames.size(); q += query_stride) {
    const NavState& sq = out.ground_truth[frame_sample[q]];
    double best = config.loop_max_distance;
    std::size_t best_m = out.frames.size();
    for (std::size_t m = 0; m < q; ++m) {
      const NavState& sm = out.ground_truth[frame_sample[m]];
      if (sq.timestamp - sm.timestamp < config.loop_min_gap) break;
      const double d = (sq.p_WB - sm.p_WB).norm();
      if (d >= best) continue;
      if (log_so3(sm.R_WB.transpose() * sq.R_WB).norm() >= config.loop_max_angle) continue;
      best = d;
      best_m = m;
    }
    if (best_m == out.frames.size()) continue;
    std::vector<int> shared;
    std::set_intersection(visible[q].begin(), visible[q].end(), visible[best_m].begin(),
                          visible[best_m].end(), std::back_inserter(shared));
    if (static_cast<int>(shared.size()) < config.loop_min_shared) continue;
    const NavState& sm = out.ground_truth[frame_sample[best_m]];
    LoopOracleEdge edge;
    edge.t_query = sq.timestamp;
    edge.t_match = sm.timestamp;
    for (int id : shared) {
      const Eigen::Vector3d& X = out.landmarks[id].X_W;
      edge.landmark_ids.push_back(id);
      edge.points_query_B.push_back(sq.R_WB.transpose() * (X - sq.p_WB));
      edge.points_match_B.push_back(sm.R_WB.transpose() * (X - sm.p_WB));
    }
    out.loop_edges.push_back(std::move(edge));
  }
  return out;
}

std::vector<SensorEvent> replay(std::span<const ImuMeasurement> imu,
                                std::span<const CameraFrame> frames) {
  std::vector<SensorEvent> events;
  events.reserve(imu.size() + frames.size());
  std::size_t i = 0;
  std::size_t c = 0;
  while (i < imu.size() || c < frames.size()) {
    const bool take_imu =
        c >= frames.size() || (i < imu.size() && imu[i].timestamp <= frames[c].timestamp);
    if (take_imu) {
      events.push_back({SensorEventKind::kImu, imu[i].timestamp, i});
      ++i;
    } else {
      events.push_back({SensorEventKind::kCamera, frames[c].timestamp, c});
      ++c;
    }
  }
  return events;
}

}  // namespace vislam
