#pragma once

// Sequential visual-inertial pipeline over a recorded dataset: initialization
// from the monocular keyframe poses, frame-rate tracking, keyframe insertion
// with local BA and culling, loop closing and an optional final full BA.
//
// There is no image front end. Observations carry the simulator's landmark
// ids, and tracking may only match ids whose map point belongs to the local
// map: the points of the newest keyframe, its covisible keyframes and the
// local window. An id seen again after its point left the local map gets a
// new point, so revisits accumulate duplicates until a loop closure fuses
// them. Loop candidates and their matched 3D points come from the dataset's
// loop oracle.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vislam/bundle_adjustment.hpp"
#include "vislam/camera.hpp"
#include "vislam/dataio.hpp"
#include "vislam/evaluation.hpp"
#include "vislam/initializer.hpp"
#include "vislam/keyframe_graph.hpp"
#include "vislam/tracking.hpp"

namespace vislam {

enum class RunMode { kSlam, kOdometry, kLocalization };

/// "slam", "odometry", "localization" (or "localization-only").
RunMode parse_run_mode(std::string_view name);
std::string_view to_string(RunMode mode);

struct PipelineOptions {
  RunMode mode = RunMode::kSlam;
  bool full_ba = false;
  double init_window = 15.0;        // s of keyframes fed to the initializer
  std::size_t local_window = 10;
  double keyframe_interval = 0.25;  // s
  double min_parallax = 0.02;       // rad between the widest pair of rays
  double loop_information = 100.0;  // loop edge weight relative to sequential edges
  TrackingOptions tracking;
  BundleAdjustmentOptions local_ba;
  BundleAdjustmentOptions final_ba{.solver = {.max_iterations = 100}};
  CullingOptions culling;
  InitializerOptions initializer;

  void validate() const;
};

struct LoopClosureEvent {
  double t_query = 0.0;
  double t_match = 0.0;
  int query_kf = -1;
  int match_kf = -1;
  double correction = 0.0;  // m moved by the query keyframe
  int fused_points = 0;
};

struct PipelineResult {
  InitializationResult init;
  std::vector<StampedPose> frames;     // body poses, relative seconds
  std::vector<StampedPose> keyframes;
  std::vector<LoopClosureEvent> loops;
  std::optional<double> lost_at;       // tracking lost at this frame time
  std::string lost_reason;
  int keyframes_inserted = 0;
  int keyframes_culled = 0;
  std::size_t map_points = 0;
  // frame-trajectory ATE against the dataset's ground truth, when present
  std::optional<double> ate_before_full_ba;
  std::optional<double> ate_after_full_ba;
  std::optional<BundleAdjustmentReport> full_ba_report;
  std::vector<StampedPose> frames_before_full_ba;  // only with full_ba
};

/// Linear triangulation from two or more views, refined by Gauss-Newton on
/// the reprojection error. Returns nullopt for a point behind any camera or
/// a degenerate view set.
std::optional<Eigen::Vector3d> triangulate(std::span<const RigidPosed> T_WC,
                                           std::span<const Eigen::Vector2d> keypoints,
                                           const PinholeCamera& camera);

/// Keyframes spaced by at least `interval` and no later than `t_max`.
std::vector<KeyframeVisualPose> select_init_keyframes(std::span<const KeyframeVisualPose> poses,
                                                      double interval, double t_max);

/// Body states in a gravity-aligned world (gravity along -z) from the visual
/// poses and an initialization result.
std::vector<NavState> states_from_initialization(std::span<const KeyframeVisualPose> keyframes,
                                                 const InitializationResult& init,
                                                 const RigidPosed& T_CB);

/// Body pose of every ground-truth record.
std::vector<StampedPose> ground_truth_poses(const GroundTruthTrack& track);

/// Runs the whole pipeline. Tracking loss ends the run early with `lost_at`
/// set; the trajectory up to that point is still returned. Throws
/// DegenerateMotion or InsufficientData when initialization is impossible.
PipelineResult run_pipeline(const Dataset& data, const PipelineOptions& options = {});

}  // namespace vislam
