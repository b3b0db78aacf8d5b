#include "vislam/keyframe_graph.hpp"

#include <algorithm>

#include "vislam/errors.hpp"

namespace vislam {

KeyframeGraph::KeyframeGraph(std::shared_ptr<const std::vector<ImuMeasurement>> imu,
                             const ImuNoiseModel& noise, std::size_t local_window)
    : imu_(std::move(imu)), noise_(noise), local_window_(local_window) {
  if (!imu_) throw InvalidArgument("KeyframeGraph: IMU stream is required");
  if (local_window_ == 0) throw InvalidArgument("KeyframeGraph: local window must be positive");
}

PreintegratedImu KeyframeGraph::integrate_between(double t0, double t1,
                                                  const ImuBias& bias) const {
  return preintegrate(*imu_, t0, t1, bias, noise_);
}

int KeyframeGraph::add_keyframe(const NavState& state, std::vector<Observation> observations) {
  Keyframe kf;
  kf.id = next_kf_id_++;
  kf.state = state;
  kf.point_ids.assign(observations.size(), -1);
  kf.observations = std::move(observations);
  if (newest_ >= 0) {
    Keyframe& last = keyframes_.at(newest_);
    if (!(state.timestamp > last.state.timestamp)) {
      throw InvalidArgument("add_keyframe: timestamps must increase");
    }
    kf.prev = newest_;
    last.next = kf.id;
    kf.pre_from_prev = integrate_between(last.state.timestamp, state.timestamp, state.bias);
  } else {
    oldest_ = kf.id;
  }
  newest_ = kf.id;
  const int id = kf.id;
  keyframes_.emplace(id, std::move(kf));
  return id;
}

int KeyframeGraph::add_point(int landmark_id, const Eigen::Vector3d& X_W, int reference_kf) {
  MapPoint p;
  p.id = next_point_id_++;
  p.landmark_id = landmark_id;
  p.X_W = X_W;
  p.reference_kf = reference_kf;
  const int id = p.id;
  points_.emplace(id, std::move(p));
  return id;
}

void KeyframeGraph::add_observation(int point_id, int kf_id, int obs_index) {
  MapPoint& p = points_.at(point_id);
  Keyframe& kf = keyframes_.at(kf_id);
  if (obs_index < 0 || obs_index >= static_cast<int>(kf.observations.size())) {
    throw InvalidArgument("add_observation: observation index out of range");
  }
  kf.point_ids[obs_index] = point_id;
  p.observers[kf_id] = obs_index;
}

void KeyframeGraph::remove_observation(int point_id, int kf_id) {
  MapPoint& p = points_.at(point_id);
  auto it = p.observers.find(kf_id);
  if (it == p.observers.end()) return;
  keyframes_.at(kf_id).point_ids[it->second] = -1;
  p.observers.erase(it);
  if (p.observers.empty()) {
    points_.erase(point_id);
  } else if (p.reference_kf == kf_id) {
    p.reference_kf = p.observers.begin()->first;
  }
}

void KeyframeGraph::remove_keyframe(int kf_id) {
  Keyframe& kf = keyframes_.at(kf_id);
  for (int pid : std::vector<int>(kf.point_ids)) {
    if (pid >= 0 && points_.count(pid)) remove_observation(pid, kf_id);
  }
  const int prev = kf.prev;
  const int next = kf.next;
  if (prev >= 0) keyframes_.at(prev).next = next;
  if (next >= 0) keyframes_.at(next).prev = prev;
  if (oldest_ == kf_id) oldest_ = next;
  if (newest_ == kf_id) newest_ = prev;
  keyframes_.erase(kf_id);
  if (next >= 0 && prev >= 0) repreintegrate(next);
}

void KeyframeGraph::remove_point(int point_id) {
  auto it = points_.find(point_id);
  if (it == points_.end()) return;
  for (const auto& [kf_id, idx] : it->second.observers) keyframes_.at(kf_id).point_ids[idx] = -1;
  points_.erase(it);
}

void KeyframeGraph::merge_points(int keep, int drop) {
  if (keep == drop) return;
  MapPoint& k = points_.at(keep);
  const std::map<int, int> moved = points_.at(drop).observers;
  remove_point(drop);
  for (const auto& [kf_id, idx] : moved) {
    if (k.observers.count(kf_id)) continue;  // keyframe already sees `keep`
    add_observation(keep, kf_id, idx);
  }
}

void KeyframeGraph::repreintegrate(int kf_id) {
  Keyframe& kf = keyframes_.at(kf_id);
  if (kf.prev < 0) return;
  kf.pre_from_prev = integrate_between(keyframes_.at(kf.prev).state.timestamp,
                                       kf.state.timestamp, kf.state.bias);
}

std::map<int, int> KeyframeGraph::covisibility(int kf_id) const {
  std::map<int, int> out;
  for (int pid : keyframes_.at(kf_id).point_ids) {
    if (pid < 0) continue;
    for (const auto& [other, idx] : points_.at(pid).observers) {
      if (other != kf_id) ++out[other];
    }
  }
  return out;
}

int KeyframeGraph::covisibility_weight(int a, int b) const {
  const auto cov = covisibility(a);
  auto it = cov.find(b);
  return it == cov.end() ? 0 : it->second;
}

std::vector<int> KeyframeGraph::local_window_ids() const {
  std::vector<int> out;
  for (int id = newest_; id >= 0 && out.size() < local_window_; id = keyframes_.at(id).prev) {
    out.push_back(id);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<int> KeyframeGraph::keyframe_ids() const {
  std::vector<int> out;
  for (int id = oldest_; id >= 0; id = keyframes_.at(id).next) out.push_back(id);
  return out;
}

Keyframe& KeyframeGraph::keyframe(int id) { return keyframes_.at(id); }
const Keyframe& KeyframeGraph::keyframe(int id) const { return keyframes_.at(id); }
MapPoint& KeyframeGraph::point(int id) { return points_.at(id); }
const MapPoint& KeyframeGraph::point(int id) const { return points_.at(id); }

bool keyframe_culling_check(const KeyframeGraph& graph, int kf_id, const CullingOptions& options) {
  const Keyframe& kf = graph.keyframe(kf_id);
  if (kf.prev < 0 || kf.next < 0) return false;

  int total = 0;
  int redundant = 0;
  for (int pid : kf.point_ids) {
    if (pid < 0) continue;
    ++total;
    if (static_cast<int>(graph.point(pid).observers.size()) - 1 >= options.min_other_observers) {
      ++redundant;
    }
  }
  if (total == 0 || redundant < options.redundancy_ratio * total) return false;

  const double gap =
      graph.keyframe(kf.next).state.timestamp - graph.keyframe(kf.prev).state.timestamp;
  const auto local = graph.local_window_ids();
  const bool in_local = std::find(local.begin(), local.end(), kf_id) != local.end();
  return gap <= (in_local ? options.max_local_gap : options.max_global_gap);
}

std::vector<int> cull_local_keyframes(KeyframeGraph& graph, const CullingOptions& options) {
  std::vector<int> removed;
  for (int id : graph.local_window_ids()) {
    if (id == graph.newest()) continue;
    if (keyframe_culling_check(graph, id, options)) {
      graph.remove_keyframe(id);
      removed.push_back(id);
    }
  }
  return removed;
}

}  // namespace vislam
