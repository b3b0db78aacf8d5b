#pragma once

// Keyframes, map points and their observation links. Keyframes form a
// doubly linked chain in time; each one owns the preintegration from its
// predecessor, recomputed from the shared raw IMU stream whenever the chain
// changes.

#include <map>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/imu_types.hpp"
#include "vislam/nav_state.hpp"
#include "vislam/preintegration.hpp"

namespace vislam {

struct Keyframe {
  int id = -1;
  NavState state;
  std::vector<Observation> observations;  // landmark_id is the data-association id
  std::vector<int> point_ids;             // map point per observation, -1 when none
  PreintegratedImu pre_from_prev;         // meaningful only when prev >= 0
  int prev = -1;
  int next = -1;
};

struct MapPoint {
  int id = -1;
  int landmark_id = -1;  // data-association id shared by duplicates
  Eigen::Vector3d X_W = Eigen::Vector3d::Zero();
  int reference_kf = -1;          // first observer; the point moves with it
  std::map<int, int> observers;   // keyframe id -> observation index
};

class KeyframeGraph {
 public:
  KeyframeGraph(std::shared_ptr<const std::vector<ImuMeasurement>> imu, const ImuNoiseModel& noise,
                std::size_t local_window = 10);

  /// Appends a keyframe after the newest one and preintegrates the span.
  int add_keyframe(const NavState& state, std::vector<Observation> observations);
  int add_point(int landmark_id, const Eigen::Vector3d& X_W, int reference_kf);
  void add_observation(int point_id, int kf_id, int obs_index);
  void remove_observation(int point_id, int kf_id);

  /// Unlinks the keyframe, relinks its neighbours and preintegrates the merged span.
  void remove_keyframe(int kf_id);
  void remove_point(int point_id);
  /// Moves every observation of `drop` onto `keep` and deletes `drop`.
  void merge_points(int keep, int drop);

  /// Re-preintegrates the span ending at `kf_id` at that keyframe's bias.
  void repreintegrate(int kf_id);

  /// Shared-point count with every other keyframe (zero counts omitted).
  std::map<int, int> covisibility(int kf_id) const;
  int covisibility_weight(int a, int b) const;

  /// Ids of the newest `local_window()` keyframes, oldest first.
  std::vector<int> local_window_ids() const;
  std::vector<int> keyframe_ids() const;  // oldest first

  Keyframe& keyframe(int id);
  const Keyframe& keyframe(int id) const;
  MapPoint& point(int id);
  const MapPoint& point(int id) const;
  bool has_keyframe(int id) const { return keyframes_.count(id) > 0; }
  bool has_point(int id) const { return points_.count(id) > 0; }

  const std::map<int, Keyframe>& keyframes() const { return keyframes_; }
  const std::map<int, MapPoint>& points() const { return points_; }
  std::size_t local_window() const { return local_window_; }
  void set_local_window(std::size_t n) { local_window_ = n; }
  int newest() const { return newest_; }
  int oldest() const { return oldest_; }
  const ImuNoiseModel& noise() const { return noise_; }
  std::span<const ImuMeasurement> imu() const { return *imu_; }

 private:
  PreintegratedImu integrate_between(double t0, double t1, const ImuBias& bias) const;

  std::shared_ptr<const std::vector<ImuMeasurement>> imu_;
  ImuNoiseModel noise_;
  std::size_t local_window_;
  std::map<int, Keyframe> keyframes_;
  std::map<int, MapPoint> points_;
  int next_kf_id_ = 0;
  int next_point_id_ = 0;
  int newest_ = -1;
  int oldest_ = -1;
};

struct CullingOptions {
  double redundancy_ratio = 0.9;  // fraction of points seen elsewhere
  int min_other_observers = 3;
  double max_local_gap = 0.5;     // s, inside the local window
  double max_global_gap = 3.0;    // s, anywhere
};

/// True when `kf_id` may be discarded: it is redundant and removing it keeps
/// every consecutive gap within the limits. The first and newest keyframes
/// are always kept.
bool keyframe_culling_check(const KeyframeGraph& graph, int kf_id,
                            const CullingOptions& options = {});

/// Applies keyframe_culling_check to every keyframe of the local window
/// (except the newest), removing as it goes. Returns the removed ids.
std::vector<int> cull_local_keyframes(KeyframeGraph& graph, const CullingOptions& options = {});

}  // namespace vislam
