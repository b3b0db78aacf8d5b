#include "vislam/dataio.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/Geometry>

#include "vislam/errors.hpp"

namespace vislam {

namespace fs = std::filesystem;

namespace {

constexpr double kNanos = 1e9;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t k = 0;
  while (k < line.size()) {
    while (k < line.size() && std::isspace(static_cast<unsigned char>(line[k]))) ++k;
    const std::size_t start = k;
    while (k < line.size() && !std::isspace(static_cast<unsigned char>(line[k]))) ++k;
    if (k > start) out.push_back(line.substr(start, k - start));
  }
  return out;
}

class LineReader {
 public:
  explicit LineReader(const fs::path& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  // Next non-empty, non-comment line; false at end of file.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      const std::string_view t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string(), line_no_, what);
  }

  std::int64_t to_int(std::string_view s) const {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("invalid integer '" + std::string(s) + "'");
    return v;
  }

  double to_double(std::string_view s) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("invalid number '" + std::string(s) + "'");
    if (!std::isfinite(v)) fail("non-finite value");
    return v;
  }

  Eigen::Vector3d vec3(const std::vector<std::string_view>& f, std::size_t at) const {
    return {to_double(f[at]), to_double(f[at + 1]), to_double(f[at + 2])};
  }

  Eigen::Matrix3d quaternion_wxyz(const std::vector<std::string_view>& f, std::size_t at) const {
    Eigen::Quaterniond q(to_double(f[at]), to_double(f[at + 1]), to_double(f[at + 2]),
                         to_double(f[at + 3]));
    if (std::abs(q.norm() - 1.0) > 1e-3) fail("quaternion is not unit length");
    return q.normalized().toRotationMatrix();
  }

 private:
  fs::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

double relative_seconds(std::int64_t ns, std::int64_t origin) {
  return static_cast<double>(ns - origin) / kNanos;
}

std::int64_t absolute_ns(double t, std::int64_t origin) {
  return origin + static_cast<std::int64_t>(std::llround(t * kNanos));
}

Eigen::Vector4d quaternion_wxyz(const Eigen::Matrix3d& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return {q.w(), q.x(), q.y(), q.z()};
}

void write_fields(std::ostream& os, std::int64_t ns, std::initializer_list<double> values) {
  os << ns;
  for (double v : values) os << ',' << format_double(v);
  os << '\n';
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw IoError("format_double: conversion failed");
  return std::string(buf, ptr);
}

double ImuStream::absolute_seconds(std::size_t k) const {
  return static_cast<double>(origin_ns) / kNanos + samples.at(k).timestamp;
}

ImuStream read_imu_csv(const fs::path& path, std::optional<std::int64_t> origin_ns) {
  LineReader reader(path);
  ImuStream stream;
  std::string line;
  std::optional<std::int64_t> last;
  while (reader.next(line)) {
    const auto f = split(line, ',');
    if (f.size() != 7) reader.fail("expected 7 fields, got " + std::to_string(f.size()));
    const std::int64_t ns = reader.to_int(f[0]);
    if (last && ns <= *last) reader.fail("timestamps must increase");
    if (!origin_ns) origin_ns = ns;
    last = ns;
    ImuMeasurement m;
    m.timestamp = relative_seconds(ns, *origin_ns);
    m.omega = reader.vec3(f, 1);
    m.accel = reader.vec3(f, 4);
    stream.samples.push_back(m);
  }
  stream.origin_ns = origin_ns.value_or(0);
  return stream;
}

void write_imu_csv(const fs::path& path, const ImuStream& stream) {
  std::ofstream out = open_out(path);
  out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
  for (const ImuMeasurement& m : stream.samples) {
    write_fields(out, absolute_ns(m.timestamp, stream.origin_ns),
                 {m.omega.x(), m.omega.y(), m.omega.z(), m.accel.x(), m.accel.y(), m.accel.z()});
  }
}

GroundTruthTrack read_groundtruth_csv(const fs::path& path, std::optional<std::int64_t> origin_ns) {
  LineReader reader(path);
  GroundTruthTrack track;
  std::string line;
  std::optional<std::int64_t> last;
  std::optional<std::size_t> arity;
  while (reader.next(line)) {
    const auto f = split(line, ',');
    if (f.size() != 4 && f.size() != 8 && f.size() != 17) {
      reader.fail("expected 4, 8 or 17 fields, got " + std::to_string(f.size()));
    }
    if (arity && *arity != f.size()) reader.fail("inconsistent column count");
    arity = f.size();
    const std::int64_t ns = reader.to_int(f[0]);
    if (last && ns <= *last) reader.fail("timestamps must increase");
    if (!origin_ns) origin_ns = ns;
    last = ns;
    GroundTruthRecord r;
    r.timestamp = relative_seconds(ns, *origin_ns);
    r.p = reader.vec3(f, 1);
    if (f.size() >= 8) r.R = reader.quaternion_wxyz(f, 4);
    if (f.size() == 17) {
      r.v = reader.vec3(f, 8);
      r.bias.gyro = reader.vec3(f, 11);
      r.bias.accel = reader.vec3(f, 14);
    }
    track.records.push_back(r);
  }
  track.origin_ns = origin_ns.value_or(0);
  track.has_orientation = arity.value_or(0) >= 8;
  track.has_velocity = arity.value_or(0) == 17;
  track.has_bias = track.has_velocity;
  return track;
}

void write_groundtruth_csv(const fs::path& path, const GroundTruthTrack& track) {
  std::ofstream out = open_out(path);
  const bool full = track.has_orientation && track.has_velocity && track.has_bias;
  out << "#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m]";
  if (track.has_orientation) out << ", q_RS_w [], q_RS_x [], q_RS_y [], q_RS_z []";
  if (full) {
    out << ", v_RS_R_x [m s^-1], v_RS_R_y [m s^-1], v_RS_R_z [m s^-1]"
           ", b_w_RS_S_x [rad s^-1], b_w_RS_S_y [rad s^-1], b_w_RS_S_z [rad s^-1]"
           ", b_a_RS_S_x [m s^-2], b_a_RS_S_y [m s^-2], b_a_RS_S_z [m s^-2]";
  }
  out << '\n';
  for (const GroundTruthRecord& r : track.records) {
    out << absolute_ns(r.timestamp, track.origin_ns);
    for (int i = 0; i < 3; ++i) out << ',' << format_double(r.p(i));
    if (track.has_orientation) {
      const Eigen::Vector4d q = quaternion_wxyz(r.R);
      for (int i = 0; i < 4; ++i) out << ',' << format_double(q(i));
    }
    if (full) {
      for (int i = 0; i < 3; ++i) out << ',' << format_double(r.v(i));
      for (int i = 0; i < 3; ++i) out << ',' << format_double(r.bias.gyro(i));
      for (int i = 0; i < 3; ++i) out << ',' << format_double(r.bias.accel(i));
    }
    out << '\n';
  }
}

std::vector<ImuMeasurement> apply_time_offset(std::span<const ImuMeasurement> stream,
                                              double offset) {
  std::vector<ImuMeasurement> out(stream.begin(), stream.end());
  for (ImuMeasurement& m : out) m.timestamp += offset;
  return out;
}

GroundTruthTrack apply_time_offset(const GroundTruthTrack& track, double offset) {
  GroundTruthTrack out = track;
  for (GroundTruthRecord& r : out.records) r.timestamp += offset;
  return out;
}

std::string format_tum_line(const StampedPose& pose) {
  char stamp[64];
  std::snprintf(stamp, sizeof(stamp), "%.9f", pose.timestamp);
  const Eigen::Vector4d q = quaternion_wxyz(pose.pose.rotation);
  const Eigen::Vector3d& t = pose.pose.translation;
  std::string line = stamp;
  for (double v : {t.x(), t.y(), t.z(), q(1), q(2), q(3), q(0)}) {
    line += ' ';
    line += format_double(v + 0.0);  // +0.0 folds -0 into 0
  }
  return line;
}

void write_trajectory_tum(std::span<const StampedPose> poses, const fs::path& path) {
  std::ofstream out = open_out(path);
  for (const StampedPose& p : poses) out << format_tum_line(p) << '\n';
}

std::vector<StampedPose> read_trajectory_tum(const fs::path& path) {
  LineReader reader(path);
  std::vector<StampedPose> out;
  std::string line;
  while (reader.next(line)) {
    const auto f = split_ws(line);
    if (f.size() != 8) reader.fail("expected 8 fields, got " + std::to_string(f.size()));
    StampedPose p;
    p.timestamp = reader.to_double(f[0]);
    p.pose.translation = reader.vec3(f, 1);
    Eigen::Quaterniond q(reader.to_double(f[7]), reader.to_double(f[4]), reader.to_double(f[5]),
                         reader.to_double(f[6]));
    if (std::abs(q.norm() - 1.0) > 1e-3) reader.fail("quaternion is not unit length");
    p.pose.rotation = q.normalized().toRotationMatrix();
    out.push_back(p);
  }
  return out;
}

void CalibrationConfig::validate() const {
  if (!is_rotation(T_CB.rotation, 1e-6)) throw InvalidArgument("calibration: T_CB rotation invalid");
  if (!(camera.fu > 0.0) || !(camera.fv > 0.0) || camera.width <= 0 || camera.height <= 0) {
    throw InvalidArgument("calibration: intrinsics must be positive");
  }
  if (!(pixel_sigma > 0.0)) throw InvalidArgument("calibration: pixel_sigma must be positive");
  noise.validate();
}

CalibrationConfig read_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> fields;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_ws(line);
    if (f.empty() || f.front().front() == '#') continue;
    std::vector<double> values;
    for (std::size_t k = 1; k < f.size(); ++k) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f[k].data(), f[k].data() + f[k].size(), v);
      if (ec != std::errc() || ptr != f[k].data() + f[k].size() || !std::isfinite(v)) {
        throw ParseError(path.string(), line_no, "invalid value for " + std::string(f[0]));
      }
      values.push_back(v);
    }
    fields[std::string(f[0])] = {std::move(values), line_no};
  }
  auto get = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError(path.string(), 0, "missing key " + key);
    if (it->second.first.size() != n) {
      throw ParseError(path.string(), it->second.second,
                       key + " expects " + std::to_string(n) + " values");
    }
    return it->second.first;
  };
  CalibrationConfig c;
  const auto& r = get("t_cb_rotation", 9);
  Eigen::Matrix3d R;
  R << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
  if (!is_rotation(R, 1e-6)) throw ParseError(path.string(), fields["t_cb_rotation"].second, "t_cb_rotation is not a rotation");
  c.T_CB.rotation = R;
  const auto& t = get("t_cb_translation", 3);
  c.T_CB.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  c.camera.fu = get("fu", 1)[0];
  c.camera.fv = get("fv", 1)[0];
  c.camera.cu = get("cu", 1)[0];
  c.camera.cv = get("cv", 1)[0];
  c.camera.width = static_cast<int>(get("image_width", 1)[0]);
  c.camera.height = static_cast<int>(get("image_height", 1)[0]);
  c.noise.gyro_noise_density = get("gyro_noise_density", 1)[0];
  c.noise.accel_noise_density = get("accel_noise_density", 1)[0];
  c.noise.gyro_walk = get("gyro_walk", 1)[0];
  c.noise.accel_walk = get("accel_walk", 1)[0];
  c.noise.gravity_magnitude = get("gravity", 1)[0];
  if (fields.count("pixel_sigma")) c.pixel_sigma = get("pixel_sigma", 1)[0];
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return c;
}

void write_calibration(const fs::path& path, const CalibrationConfig& c) {
  std::ofstream out = open_out(path);
  out << "# camera-from-body extrinsics, pinhole intrinsics [px], IMU noise densities\n";
  out << "t_cb_rotation";
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out << ' ' << format_double(c.T_CB.rotation(i, j));
  }
  out << "\nt_cb_translation";
  for (int i = 0; i < 3; ++i) out << ' ' << format_double(c.T_CB.translation(i));
  out << "\nfu " << format_double(c.camera.fu) << "\nfv " << format_double(c.camera.fv)
      << "\ncu " << format_double(c.camera.cu) << "\ncv " << format_double(c.camera.cv)
      << "\nimage_width " << c.camera.width << "\nimage_height " << c.camera.height
      << "\ngyro_noise_density " << format_double(c.noise.gyro_noise_density)
      << "\naccel_noise_density " << format_double(c.noise.accel_noise_density)
      << "\ngyro_walk " << format_double(c.noise.gyro_walk)
      << "\naccel_walk " << format_double(c.noise.accel_walk)
      << "\ngravity " << format_double(c.noise.gravity_magnitude)
      << "\npixel_sigma " << format_double(c.pixel_sigma) << '\n';
}

Dataset read_dataset(const fs::path& root, const std::optional<fs::path>& calibration) {
  Dataset d;
  const fs::path mav = root / "mav0";
  d.calibration = read_calibration(calibration.value_or(root / "calibration.txt"));
  d.imu = read_imu_csv(mav / "imu0" / "data.csv");
  const std::int64_t origin = d.imu.origin_ns;

  const fs::path gt = mav / "state_groundtruth_estimate0" / "data.csv";
  if (fs::exists(gt)) d.ground_truth = read_groundtruth_csv(gt, origin);

  const fs::path cam = mav / "cam0";
  const Eigen::Matrix2d info =
      Eigen::Matrix2d::Identity() / (d.calibration.pixel_sigma * d.calibration.pixel_sigma);
  if (fs::exists(cam / "data.csv")) {
    LineReader frames(cam / "data.csv");
    std::map<std::int64_t, std::size_t> index;
    std::string line;
    while (frames.next(line)) {
      const auto f = split(line, ',');
      if (f.size() != 2) frames.fail("expected 2 fields");
      const std::int64_t ns = frames.to_int(f[0]);
      if (!d.frames.empty() && ns <= absolute_ns(d.frames.back().timestamp, origin)) {
        frames.fail("timestamps must increase");
      }
      index[ns] = d.frames.size();
      d.frames.push_back({relative_seconds(ns, origin), {}});
    }
    if (fs::exists(cam / "observations.csv")) {
      LineReader obs(cam / "observations.csv");
      while (obs.next(line)) {
        const auto f = split(line, ',');
        if (f.size() != 4) obs.fail("expected 4 fields");
        auto it = index.find(obs.to_int(f[0]));
        if (it == index.end()) obs.fail("observation at a timestamp with no frame");
        Observation o;
        o.landmark_id = static_cast<int>(obs.to_int(f[1]));
        o.keypoint = Eigen::Vector2d(obs.to_double(f[2]), obs.to_double(f[3]));
        o.info = info;
        d.frames[it->second].observations.push_back(o);
      }
    }
  }
  if (fs::exists(cam / "keyframes.csv")) {
    LineReader kfs(cam / "keyframes.csv");
    std::string line;
    while (kfs.next(line)) {
      const auto f = split(line, ',');
      if (f.size() != 9) kfs.fail("expected 9 fields");
      KeyframeVisualPose vp;
      vp.timestamp = relative_seconds(kfs.to_int(f[0]), origin);
      vp.id = static_cast<int>(kfs.to_int(f[1]));
      vp.p_WC = kfs.vec3(f, 2);
      vp.R_WC = kfs.quaternion_wxyz(f, 5);
      d.visual_poses.push_back(vp);
    }
  }
  if (fs::exists(mav / "landmarks.csv")) {
    LineReader lms(mav / "landmarks.csv");
    std::string line;
    while (lms.next(line)) {
      const auto f = split(line, ',');
      if (f.size() != 4) lms.fail("expected 4 fields");
      d.landmarks.push_back({static_cast<int>(lms.to_int(f[0])), lms.vec3(f, 1)});
    }
  }
  if (fs::exists(mav / "loop_oracle.csv")) {
    LineReader loops(mav / "loop_oracle.csv");
    std::string line;
    while (loops.next(line)) {
      const auto f = split(line, ',');
      if (f.size() != 9) loops.fail("expected 9 fields");
      const double tq = relative_seconds(loops.to_int(f[0]), origin);
      const double tm = relative_seconds(loops.to_int(f[1]), origin);
      if (d.loop_edges.empty() || d.loop_edges.back().t_query != tq ||
          d.loop_edges.back().t_match != tm) {
        d.loop_edges.push_back({tq, tm, {}, {}, {}});
      }
      LoopOracleEdge& e = d.loop_edges.back();
      e.landmark_ids.push_back(static_cast<int>(loops.to_int(f[2])));
      e.points_query_B.push_back(loops.vec3(f, 3));
      e.points_match_B.push_back(loops.vec3(f, 6));
    }
  }
  return d;
}

void write_dataset(const fs::path& root, const SimulatedDataset& data, std::int64_t origin_ns) {
  const fs::path mav = root / "mav0";
  CalibrationConfig calib;
  calib.T_CB = data.T_CB;
  calib.camera = data.camera;
  calib.noise = data.noise;
  calib.pixel_sigma = data.pixel_sigma > 0.0 ? data.pixel_sigma : 1.0;
  write_calibration(root / "calibration.txt", calib);

  write_imu_csv(mav / "imu0" / "data.csv", ImuStream{origin_ns, data.imu});

  GroundTruthTrack gt;
  gt.origin_ns = origin_ns;
  gt.has_orientation = gt.has_velocity = gt.has_bias = true;
  for (const NavState& s : data.ground_truth) {
    gt.records.push_back({s.timestamp, s.p_WB, s.R_WB, s.v_WB, s.bias});
  }
  write_groundtruth_csv(mav / "state_groundtruth_estimate0" / "data.csv", gt);

  {
    std::ofstream frames = open_out(mav / "cam0" / "data.csv");
    std::ofstream obs = open_out(mav / "cam0" / "observations.csv");
    frames << "#timestamp [ns],filename\n";
    obs << "#timestamp [ns],landmark_id,u [px],v [px]\n";
    for (const CameraFrame& f : data.frames) {
      const std::int64_t ns = absolute_ns(f.timestamp, origin_ns);
      frames << ns << ',' << ns << ".png\n";
      for (const Observation& o : f.observations) {
        obs << ns << ',' << o.landmark_id << ',' << format_double(o.keypoint.x()) << ','
            << format_double(o.keypoint.y()) << '\n';
      }
    }
  }
  {
    std::ofstream kfs = open_out(mav / "cam0" / "keyframes.csv");
    kfs << "#timestamp [ns],id,p_x,p_y,p_z,q_w,q_x,q_y,q_z\n";
    for (const KeyframeVisualPose& vp : data.visual_poses) {
      const Eigen::Vector4d q = quaternion_wxyz(vp.R_WC);
      kfs << absolute_ns(vp.timestamp, origin_ns) << ',' << vp.id;
      for (int i = 0; i < 3; ++i) kfs << ',' << format_double(vp.p_WC(i));
      for (int i = 0; i < 4; ++i) kfs << ',' << format_double(q(i));
      kfs << '\n';
    }
  }
  {
    std::ofstream lms = open_out(mav / "landmarks.csv");
    lms << "#landmark_id,x [m],y [m],z [m]\n";
    for (const Landmark& l : data.landmarks) {
      lms << l.id;
      for (int i = 0; i < 3; ++i) lms << ',' << format_double(l.X_W(i));
      lms << '\n';
    }
  }
  {
    std::ofstream loops = open_out(mav / "loop_oracle.csv");
    loops << "#t_query [ns],t_match [ns],landmark_id,xq,yq,zq,xm,ym,zm\n";
    for (const LoopOracleEdge& e : data.loop_edges) {
      for (std::size_t k = 0; k < e.landmark_ids.size(); ++k) {
        loops << absolute_ns(e.t_query, origin_ns) << ',' << absolute_ns(e.t_match, origin_ns)
              << ',' << e.landmark_ids[k];
        for (int i = 0; i < 3; ++i) loops << ',' << format_double(e.points_query_B[k](i));
        for (int i = 0; i < 3; ++i) loops << ',' << format_double(e.points_match_B[k](i));
        loops << '\n';
      }
    }
  }
}

Dataset make_dataset(const SimulatedDataset& data, std::int64_t origin_ns) {
  Dataset d;
  d.calibration.T_CB = data.T_CB;
  d.calibration.camera = data.camera;
  d.calibration.noise = data.noise;
  d.calibration.pixel_sigma = data.pixel_sigma > 0.0 ? data.pixel_sigma : 1.0;
  d.imu = ImuStream{origin_ns, data.imu};
  d.ground_truth.origin_ns = origin_ns;
  d.ground_truth.has_orientation = d.ground_truth.has_velocity = d.ground_truth.has_bias = true;
  for (const NavState& s : data.ground_truth) {
    d.ground_truth.records.push_back({s.timestamp, s.p_WB, s.R_WB, s.v_WB, s.bias});
  }
  d.frames = data.frames;
  d.visual_poses = data.visual_poses;
  d.landmarks = data.landmarks;
  d.loop_edges = data.loop_edges;
  return d;
}

}  // namespace vislam
