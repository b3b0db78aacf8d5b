#include "vislam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <unordered_map>

#include <Eigen/SVD>

#include "vislam/errors.hpp"
#include "vislam/pose_graph.hpp"

namespace vislam {

RunMode parse_run_mode(std::string_view name) {
  if (name == "slam") return RunMode::kSlam;
  if (name == "odometry") return RunMode::kOdometry;
  if (name == "localization" || name == "localization-only") return RunMode::kLocalization;
  throw InvalidArgument("unknown mode '" + std::string(name) + "'");
}

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kSlam: return "slam";
    case RunMode::kOdometry: return "odometry";
    case RunMode::kLocalization: return "localization";
  }
  return "?";
}

void PipelineOptions::validate() const {
  if (!(init_window > 0.0)) throw InvalidArgument("init window must be positive");
  if (local_window < 2) throw InvalidArgument("local window must hold at least 2 keyframes");
  if (!(keyframe_interval > 0.0)) throw InvalidArgument("keyframe interval must be positive");
  if (!(min_parallax >= 0.0)) throw InvalidArgument("min parallax must be non-negative");
  if (!(loop_information > 0.0)) throw InvalidArgument("loop information must be positive");
}

std::optional<Eigen::Vector3d> triangulate(std::span<const RigidPosed> T_WC,
                                           std::span<const Eigen::Vector2d> keypoints,
                                           const PinholeCamera& camera) {
  if (T_WC.size() != keypoints.size() || T_WC.size() < 2) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(T_WC.size());
  Eigen::MatrixXd A(2 * n, 4);
  for (Eigen::Index k = 0; k < n; ++k) {
    const RigidPosed T_CW = T_WC[k].inverse();
    Eigen::Matrix<double, 3, 4> P;
    P << T_CW.rotation, T_CW.translation;
    const double x = (keypoints[k].x() - camera.cu) / camera.fu;
    const double y = (keypoints[k].y() - camera.cv) / camera.fv;
    A.row(2 * k) = x * P.row(2) - P.row(0);
    A.row(2 * k + 1) = y * P.row(2) - P.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12) return std::nullopt;
  Eigen::Vector3d X = h.head<3>() / h(3);

  // a few Gauss-Newton steps on the pixel error
  for (int it = 0; it < 5; ++it) {
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Matrix3d R_CW = T_WC[k].rotation.transpose();
      const Eigen::Vector3d Xc = R_CW * (X - T_WC[k].translation);
      if (Xc.z() <= kMinDepth) return std::nullopt;
      const double iz = 1.0 / Xc.z();
      Eigen::Matrix<double, 2, 3> J;
      J << camera.fu * iz, 0.0, -camera.fu * Xc.x() * iz * iz, 0.0, camera.fv * iz,
          -camera.fv * Xc.y() * iz * iz;
      J = J * R_CW;
      const Eigen::Vector2d r = keypoints[k] - project(camera, Xc);
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    const Eigen::Vector3d dx = H.ldlt().solve(g);
    if (!dx.allFinite()) return std::nullopt;
    X += dx;
    if (dx.norm() < 1e-10 * (1.0 + X.norm())) break;
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Vector3d Xc = T_WC[k].rotation.transpose() * (X - T_WC[k].translation);
    if (Xc.z() <= kMinDepth) return std::nullopt;
  }
  return X;
}

std::vector<KeyframeVisualPose> select_init_keyframes(std::span<const KeyframeVisualPose> poses,
                                                      double interval, double t_max) {
  std::vector<KeyframeVisualPose> out;
  for (const KeyframeVisualPose& p : poses) {
    if (p.timestamp > t_max + 1e-9) break;
    if (out.empty() || p.timestamp - out.back().timestamp >= interval - 1e-6) out.push_back(p);
  }
  return out;
}

std::vector<NavState> states_from_initialization(std::span<const KeyframeVisualPose> keyframes,
                                                 const InitializationResult& init,
                                                 const RigidPosed& T_CB) {
  if (init.velocities.size() != keyframes.size()) {
    throw InvalidArgument("states_from_initialization: one velocity per keyframe expected");
  }
  const Eigen::Matrix3d R_IV = init.R_WI.transpose();
  std::vector<NavState> out;
  for (std::size_t k = 0; k < keyframes.size(); ++k) {
    const KeyframeVisualPose& kf = keyframes[k];
    NavState s;
    s.timestamp = kf.timestamp;
    s.R_WB = R_IV * kf.R_WC * T_CB.rotation;
    s.p_WB = R_IV * (init.scale * kf.p_WC + kf.R_WC * T_CB.translation);
    s.v_WB = R_IV * init.velocities[k];
    s.bias.gyro = init.gyro_bias;
    s.bias.accel = init.accel_bias;
    out.push_back(s);
  }
  return out;
}

std::vector<StampedPose> ground_truth_poses(const GroundTruthTrack& track) {
  std::vector<StampedPose> out;
  out.reserve(track.records.size());
  for (const GroundTruthRecord& r : track.records) out.push_back({r.timestamp, RigidPosed(r.R, r.p)});
  return out;
}

namespace {

RigidPosed body_pose(const NavState& s) { return RigidPosed(s.R_WB, s.p_WB); }

std::int64_t time_key(double t) { return std::llround(t * 1e6); }

class Runner {
 public:
  Runner(const Dataset& data, const PipelineOptions& options)
      : data_(data),
        options_(options),
        imu_(std::make_shared<const std::vector<ImuMeasurement>>(data.imu.samples)),
        graph_(imu_, data.calibration.noise, options.local_window) {
    ctx_.camera = data.calibration.camera;
    ctx_.T_CB = data.calibration.T_CB;
    ctx_.noise = data.calibration.noise;
    ctx_.gravity = Eigen::Vector3d(0.0, 0.0, -data.calibration.noise.gravity_magnitude);
    for (std::size_t f = 0; f < data.frames.size(); ++f) frame_of_time_[time_key(data.frames[f].timestamp)] = f;
  }

  PipelineResult run() {
    initialize();
    track_all();
    finish();
    return std::move(result_);
  }

 private:
  struct FrameRecord {
    std::size_t frame = 0;
    RelativeFramePose pose;
  };

  const std::vector<Observation>* observations_at(double t) const {
    auto it = frame_of_time_.find(time_key(t));
    return it == frame_of_time_.end() ? nullptr : &data_.frames[it->second].observations;
  }

  void record_frame(std::size_t frame, double t, const RigidPosed& T_W_body, int ref_kf) {
    const RigidPosed T_ref = body_pose(graph_.keyframe(ref_kf).state);
    records_.push_back({frame, {t, ref_kf, T_ref.inverse() * T_W_body}});
    record_of_time_[time_key(t)] = records_.size() - 1;
  }

  int insert_keyframe(const NavState& state) {
    const std::vector<Observation>* obs = observations_at(state.timestamp);
    const int id = graph_.add_keyframe(state, obs ? *obs : std::vector<Observation>{});
    auto& index = obs_index_[id];
    const auto& kf_obs = graph_.keyframe(id).observations;
    for (std::size_t i = 0; i < kf_obs.size(); ++i) index[kf_obs[i].landmark_id] = static_cast<int>(i);
    ++result_.keyframes_inserted;
    return id;
  }

  // Links observations of `kf_id` to local-map points and triangulates ids
  // seen by enough unlinked keyframe observations in `candidates`.
  void associate_and_triangulate(int kf_id, const std::vector<int>& candidates) {
    Keyframe& kf = graph_.keyframe(kf_id);
    for (std::size_t i = 0; i < kf.observations.size(); ++i) {
      auto it = local_map_.find(kf.observations[i].landmark_id);
      if (it != local_map_.end() && graph_.has_point(it->second)) {
        graph_.add_observation(it->second, kf_id, static_cast<int>(i));
      }
    }
    for (std::size_t i = 0; i < graph_.keyframe(kf_id).observations.size(); ++i) {
      if (graph_.keyframe(kf_id).point_ids[i] >= 0) continue;
      const int lm = graph_.keyframe(kf_id).observations[i].landmark_id;
      std::vector<std::pair<int, int>> views;
      for (int other : candidates) {
        if (other == kf_id || !graph_.has_keyframe(other)) continue;
        const auto& idx = obs_index_[other];
        auto it = idx.find(lm);
        if (it == idx.end() || graph_.keyframe(other).point_ids[it->second] >= 0) continue;
        views.emplace_back(other, it->second);
      }
      views.emplace_back(kf_id, static_cast<int>(i));
      if (views.size() < 2) continue;
      try_add_point(lm, views);
    }
  }

  void try_add_point(int lm, const std::vector<std::pair<int, int>>& views) {
    std::vector<RigidPosed> poses;
    std::vector<Eigen::Vector2d> kps;
    for (const auto& [kf_id, idx] : views) {
      const Keyframe& kf = graph_.keyframe(kf_id);
      poses.push_back(body_pose(kf.state) * ctx_.T_CB.inverse());
      kps.push_back(kf.observations[idx].keypoint);
    }
    const auto X = triangulate(poses, kps, ctx_.camera);
    if (!X) return;
    double parallax = 0.0;
    for (std::size_t a = 0; a < poses.size(); ++a) {
      for (std::size_t b = a + 1; b < poses.size(); ++b) {
        const Eigen::Vector3d ra = (*X - poses[a].translation).normalized();
        const Eigen::Vector3d rb = (*X - poses[b].translation).normalized();
        parallax = std::max(parallax, std::acos(std::clamp(ra.dot(rb), -1.0, 1.0)));
      }
    }
    if (parallax < options_.min_parallax) return;
    for (const auto& [kf_id, idx] : views) {
      const Keyframe& kf = graph_.keyframe(kf_id);
      const auto t = reprojection_residual(kf.state, *X, kf.observations[idx], ctx_.camera, ctx_.T_CB);
      if (!t || t->chi2 > 9.0 * 2.0) return;
    }
    const int pid = graph_.add_point(lm, *X, views.front().first);
    for (const auto& [kf_id, idx] : views) graph_.add_observation(pid, kf_id, idx);
  }

  void refresh_local_map(int ref_kf) {
    std::set<int> kfs;
    for (int id : graph_.local_window_ids()) kfs.insert(id);
    kfs.insert(ref_kf);
    for (const auto& [other, w] : graph_.covisibility(ref_kf)) kfs.insert(other);
    local_map_.clear();
    for (int kf_id : kfs) {
      for (int pid : graph_.keyframe(kf_id).point_ids) {
        if (pid < 0) continue;
        const MapPoint& p = graph_.point(pid);
        auto [it, fresh] = local_map_.emplace(p.landmark_id, pid);
        if (!fresh && it->second != pid &&
            graph_.point(it->second).observers.size() < p.observers.size()) {
          it->second = pid;
        }
      }
    }
  }

  void initialize() {
    const auto kfs = select_init_keyframes(data_.visual_poses, options_.keyframe_interval,
                                           options_.init_window);
    if (kfs.size() < 4) throw InsufficientData("initialization needs at least 4 keyframes");
    const InitializationInput input = make_initialization_input(
        kfs, data_.imu.samples, ctx_.T_CB, ctx_.noise);
    result_.init = run_full_initialization(input, options_.initializer);
    const std::vector<NavState> states = states_from_initialization(kfs, result_.init, ctx_.T_CB);

    std::vector<int> ids;
    for (const NavState& s : states) ids.push_back(insert_keyframe(s));

    // every id seen by two or more initial keyframes becomes one point
    std::map<int, std::vector<std::pair<int, int>>> views_of;
    for (int id : ids) {
      for (const auto& [lm, idx] : obs_index_[id]) views_of[lm].emplace_back(id, idx);
    }
    for (const auto& [lm, views] : views_of) {
      if (views.size() >= 2) try_add_point(lm, views);
    }
    full_bundle_adjustment(graph_, ctx_, options_.final_ba);

    // frames inside the window: the visual pose relative to the preceding keyframe
    std::size_t next_kf = 0;
    for (std::size_t f = 0; f < data_.visual_poses.size(); ++f) {
      const KeyframeVisualPose& vp = data_.visual_poses[f];
      if (vp.timestamp > kfs.back().timestamp + 1e-9) break;
      while (next_kf + 1 < kfs.size() && kfs[next_kf + 1].timestamp <= vp.timestamp + 1e-9) ++next_kf;
      const KeyframeVisualPose& kv = kfs[next_kf];
      auto metric = [&](const KeyframeVisualPose& p) {
        return RigidPosed(p.R_WC, result_.init.scale * p.p_WC) * ctx_.T_CB;
      };
      const RigidPosed T_kf_frame = metric(kv).inverse() * metric(vp);
      auto it = frame_of_time_.find(time_key(vp.timestamp));
      const std::size_t frame = it == frame_of_time_.end() ? f : it->second;
      records_.push_back({frame, {vp.timestamp, ids[next_kf], T_kf_frame}});
      record_of_time_[time_key(vp.timestamp)] = records_.size() - 1;
    }
    t_init_end_ = kfs.back().timestamp;
    refresh_local_map(graph_.newest());
  }

  void track_all() {
    NavState prev = graph_.keyframe(graph_.newest()).state;
    MarginalPrior prior;
    bool link_to_keyframe = true;  // the map just changed
    int ref_kf = graph_.newest();

    for (std::size_t f = 0; f < data_.frames.size(); ++f) {
      const CameraFrame& frame = data_.frames[f];
      if (frame.timestamp <= t_init_end_ + 1e-9) continue;
      if (frame.timestamp > imu_->back().timestamp + 1e-9) break;

      std::vector<MapMatch> matches;
      for (const Observation& o : frame.observations) {
        auto it = local_map_.find(o.landmark_id);
        if (it == local_map_.end()) continue;
        matches.push_back({graph_.point(it->second).X_W, o});
      }

      TrackingResult tr;
      try {
        if (link_to_keyframe) {
          const NavState& kf = graph_.keyframe(graph_.newest()).state;
          const PreintegratedImu pre =
              preintegrate(*imu_, kf.timestamp, frame.timestamp, kf.bias, ctx_.noise);
          tr = optimize_frame_to_keyframe(kf, pre, matches, frame.timestamp, ctx_, options_.tracking);
        } else {
          const PreintegratedImu pre =
              preintegrate(*imu_, prev.timestamp, frame.timestamp, prev.bias, ctx_.noise);
          tr = optimize_frame_pair_with_prior(prev, prior, pre, matches, frame.timestamp, ctx_,
                                              options_.tracking);
        }
      } catch (const TrackingLost& e) {
        result_.lost_at = frame.timestamp;
        result_.lost_reason = e.what();
        return;
      }
      prev = tr.state;
      prior = tr.prior;
      link_to_keyframe = false;

      if (frozen_) {
        const int best = reference_for(frame.observations);
        if (best >= 0 && best != ref_kf) {
          ref_kf = best;
          refresh_local_map(ref_kf);
        }
        record_frame(f, frame.timestamp, body_pose(prev), ref_kf);
        continue;
      }

      const double since = frame.timestamp - graph_.keyframe(graph_.newest()).state.timestamp;
      if (since < options_.keyframe_interval - 1e-6) {
        record_frame(f, frame.timestamp, body_pose(prev), graph_.newest());
        continue;
      }

      const int kf_id = insert_keyframe(prev);
      associate_and_triangulate(kf_id, graph_.local_window_ids());
      record_frame(f, frame.timestamp, body_pose(prev), kf_id);
      local_bundle_adjustment(graph_, ctx_, options_.local_ba);
      cull();
      if (options_.mode != RunMode::kOdometry) close_loops(kf_id);
      ref_kf = graph_.newest();
      refresh_local_map(ref_kf);
      link_to_keyframe = true;
    }
  }

  // Keyframe observing most of the points this frame could be matched to.
  int reference_for(const std::vector<Observation>& obs) const {
    std::map<int, int> votes;
    for (const Observation& o : obs) {
      auto it = local_map_.find(o.landmark_id);
      if (it == local_map_.end()) continue;
      for (const auto& [kf_id, idx] : graph_.point(it->second).observers) ++votes[kf_id];
    }
    int best = -1;
    int most = 0;
    for (const auto& [kf_id, n] : votes) {
      if (n > most) {
        most = n;
        best = kf_id;
      }
    }
    return best;
  }

  void cull() {
    for (int id : graph_.local_window_ids()) {
      if (id == graph_.newest() || !keyframe_culling_check(graph_, id, options_.culling)) continue;
      const Keyframe& kf = graph_.keyframe(id);
      const int prev = kf.prev;
      const RigidPosed T_removed = body_pose(kf.state);
      const RigidPosed T_prev_removed = body_pose(graph_.keyframe(prev).state).inverse() * T_removed;
      for (FrameRecord& r : records_) {
        if (r.pose.reference_kf != id) continue;
        r.pose.reference_kf = prev;
        r.pose.T_ref_frame = T_prev_removed * r.pose.T_ref_frame;
      }
      graph_.remove_keyframe(id);
      obs_index_.erase(id);
      ++result_.keyframes_culled;
    }
  }

  void close_loops(int query_kf) {
    const double t = graph_.keyframe(query_kf).state.timestamp;
    for (const LoopOracleEdge& edge : data_.loop_edges) {
      if (std::abs(edge.t_query - t) > 1e-6) continue;
      auto rec = record_of_time_.find(time_key(edge.t_match));
      if (rec == record_of_time_.end()) continue;
      const FrameRecord& match = records_[rec->second];
      const int match_kf = match.pose.reference_kf;
      if (!graph_.has_keyframe(match_kf) || match_kf == query_kf) continue;
      const auto cov = graph_.covisibility(query_kf);
      if (cov.count(match_kf)) continue;  // already connected through the map

      // query body pose in the match body frame, from the matched points
      const RigidPosed T_mq = rigid_point_alignment(edge.points_query_B, edge.points_match_B);
      const RigidPosed T_ref_query = match.pose.T_ref_frame * T_mq;
      apply_loop(query_kf, match_kf, T_ref_query, edge);
      if (options_.mode == RunMode::kLocalization) frozen_ = true;
      return;
    }
  }

  void apply_loop(int query_kf, int match_kf, const RigidPosed& T_match_query,
                  const LoopOracleEdge& edge) {
    const std::vector<int> ids = graph_.keyframe_ids();
    std::map<int, int> index;
    std::vector<RigidPosed> poses;
    for (int id : ids) {
      index[id] = static_cast<int>(poses.size());
      poses.push_back(body_pose(graph_.keyframe(id).state));
    }
    std::vector<PoseEdge> edges;
    for (std::size_t k = 1; k < ids.size(); ++k) {
      edges.push_back({static_cast<int>(k - 1), static_cast<int>(k),
                       poses[k - 1].inverse() * poses[k], Matrix6d::Identity(), false});
    }
    edges.push_back({index.at(match_kf), index.at(query_kf), T_match_query,
                     options_.loop_information * Matrix6d::Identity(), true});
    const std::vector<RigidPosed> corrected =
        pose_graph_optimize(poses, edges, PoseGraphOptions{.anchor = 0});

    // points ride along with their reference keyframe
    for (const auto& [pid, p] : graph_.points()) {
      const int i = index.at(p.reference_kf);
      graph_.point(pid).X_W = corrected[i] * (poses[i].inverse() * p.X_W);
    }
    std::vector<NavState> states;
    std::vector<Eigen::Matrix3d> corrections;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      states.push_back(graph_.keyframe(ids[k]).state);
      corrections.push_back(corrected[k].rotation * poses[k].rotation.transpose());
    }
    const std::vector<NavState> rotated = correct_velocities_after_loop(states, corrections);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      NavState& s = graph_.keyframe(ids[k]).state;
      s = rotated[k];
      s.R_WB = corrected[k].rotation;
      s.p_WB = corrected[k].translation;
    }

    // fuse duplicates of the same landmark, keeping the oldest point
    std::map<int, std::vector<int>> by_landmark;
    for (const auto& [pid, p] : graph_.points()) by_landmark[p.landmark_id].push_back(pid);
    int fused = 0;
    for (const auto& [lm, pids] : by_landmark) {
      for (std::size_t k = 1; k < pids.size(); ++k) {
        graph_.merge_points(pids.front(), pids[k]);
        ++fused;
      }
    }

    const int qi = index.at(query_kf);
    LoopClosureEvent ev;
    ev.t_query = edge.t_query;
    ev.t_match = edge.t_match;
    ev.query_kf = query_kf;
    ev.match_kf = match_kf;
    ev.correction = (corrected[qi].translation - poses[qi].translation).norm();
    ev.fused_points = fused;
    full_bundle_adjustment(graph_, ctx_, options_.final_ba);
    result_.loops.push_back(ev);
  }

  std::vector<StampedPose> frame_trajectory() const {
    std::map<int, RigidPosed> kfs;
    for (const auto& [id, kf] : graph_.keyframes()) kfs[id] = body_pose(kf.state);
    std::vector<RelativeFramePose> rel;
    rel.reserve(records_.size());
    for (const FrameRecord& r : records_) rel.push_back(r.pose);
    return reconstruct_frame_trajectory(rel, kfs);
  }

  std::optional<double> ate() const {
    if (data_.ground_truth.records.empty() || !data_.ground_truth.has_orientation) return std::nullopt;
    const auto gt = ground_truth_poses(data_.ground_truth);
    const auto est = frame_trajectory();
    try {
      return evaluate(est, gt, {.max_dt = 1e-3, .fix_scale = false, .deltas = {}}).ate;
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  void finish() {
    if (options_.full_ba) {
      result_.frames_before_full_ba = frame_trajectory();
      result_.ate_before_full_ba = ate();
      result_.full_ba_report = full_bundle_adjustment(graph_, ctx_, options_.final_ba);
      result_.ate_after_full_ba = ate();
    }
    result_.frames = frame_trajectory();
    for (int id : graph_.keyframe_ids()) {
      const NavState& s = graph_.keyframe(id).state;
      result_.keyframes.push_back({s.timestamp, body_pose(s)});
    }
    result_.map_points = graph_.points().size();
  }

  const Dataset& data_;
  PipelineOptions options_;
  SensorContext ctx_;
  std::shared_ptr<const std::vector<ImuMeasurement>> imu_;
  KeyframeGraph graph_;
  PipelineResult result_;
  double t_init_end_ = 0.0;
  bool frozen_ = false;
  std::unordered_map<std::int64_t, std::size_t> frame_of_time_;
  std::unordered_map<std::int64_t, std::size_t> record_of_time_;
  std::map<int, std::unordered_map<int, int>> obs_index_;  // kf -> landmark id -> observation
  std::unordered_map<int, int> local_map_;                 // landmark id -> point
  std::vector<FrameRecord> records_;
};

}  // namespace

PipelineResult run_pipeline(const Dataset& data, const PipelineOptions& options) {
  options.validate();
  data.calibration.validate();
  if (data.imu.samples.size() < 2) throw InsufficientData("pipeline: IMU stream is empty");
  if (data.frames.empty()) throw InsufficientData("pipeline: no camera frames");
  if (data.visual_poses.empty()) throw InsufficientData("pipeline: no visual keyframe poses");
  Runner runner(data, options);
  return runner.run();
}

}  // namespace vislam
