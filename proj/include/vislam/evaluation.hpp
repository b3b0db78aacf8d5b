#pragma once

// Trajectory accuracy: timestamp association, similarity alignment, ATE and
// path-length relative pose error.

#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vislam/dataio.hpp"
#include "vislam/manifold.hpp"

namespace vislam {

struct MatchedPair {
  std::size_t est = 0;
  std::size_t gt = 0;
};

/// Nearest-timestamp matching within max_dt, each pose used at most once.
/// Candidate pairs are taken in order of increasing |dt|. Result is sorted by
/// estimate index. Throws InsufficientData when nothing matches.
std::vector<MatchedPair> associate(std::span<const StampedPose> est,
                                   std::span<const StampedPose> gt, double max_dt = 0.02);

struct AlignmentResult {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;
  double rmse = 0.0;  // after alignment

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
  RigidPosed apply(const RigidPosed& T) const {
    return RigidPosed(rotation * T.rotation, apply(T.translation));
  }
  double scale_error_percent() const { return std::abs(1.0 - scale) * 100.0; }
};

/// Least-squares gt ~= s R est + t (s = 1 with fix_scale). Throws
/// DegenerateMotion for fewer than 3 pairs or collinear/coincident points.
AlignmentResult align_similarity(std::span<const Eigen::Vector3d> est,
                                 std::span<const Eigen::Vector3d> gt, bool fix_scale = false);

double ate_rmse(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt,
                const AlignmentResult& alignment);

struct PosePair {
  double timestamp = 0.0;
  RigidPosed est;
  RigidPosed gt;
};

std::vector<PosePair> matched_poses(std::span<const StampedPose> est,
                                    std::span<const StampedPose> gt,
                                    std::span<const MatchedPair> matches);

struct RpeBin {
  double delta = 0.0;  // m of ground-truth path
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
};

struct RpeCurve {
  std::vector<RpeBin> bins;  // increasing delta, empty bins omitted

  const RpeBin* find(double delta) const;
};

inline const std::vector<double>& default_rpe_deltas() {
  static const std::vector<double> d{5.0, 10.0, 15.0, 20.0, 25.0, 30.0};
  return d;
}

/// KITTI-style segments: from every start pose, the first pose whose
/// ground-truth path length from the start reaches delta. The per-segment error
/// is the translation norm of (gt_i^-1 gt_j)^-1 (est_i^-1 est_j), in meters.
RpeCurve relative_pose_error(std::span<const PosePair> pairs,
                             std::span<const double> deltas = default_rpe_deltas());

struct EvaluationOptions {
  double max_dt = 0.02;
  bool fix_scale = false;
  std::vector<double> deltas = default_rpe_deltas();
};

struct EvaluationReport {
  std::size_t matched = 0;
  AlignmentResult alignment;
  double ate = 0.0;
  RpeCurve rpe;  // on the aligned estimate
};

EvaluationReport evaluate(std::span<const StampedPose> est, std::span<const StampedPose> gt,
                          const EvaluationOptions& options = {});

/// Frame pose stored relative to its reference keyframe.
struct RelativeFramePose {
  double timestamp = 0.0;
  int reference_kf = -1;
  RigidPosed T_ref_frame;
};

/// Frames whose reference keyframe is absent from `keyframes` are skipped.
std::vector<StampedPose> reconstruct_frame_trajectory(
    std::span<const RelativeFramePose> frames, const std::map<int, RigidPosed>& keyframes);

/// metric,delta_m,value rows preceded by a comment line naming the RPE convention.
void write_metrics_csv(const std::filesystem::path& path, const EvaluationReport& report);
/// delta,median,p5,p95 rows for plotting.
void write_rpe_plot_data(const std::filesystem::path& path, const RpeCurve& curve);

}  // namespace vislam
