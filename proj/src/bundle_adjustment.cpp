#include "vislam/bundle_adjustment.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "vislam/factors.hpp"

namespace vislam {

namespace {

// Bias drift past which a span is re-preintegrated instead of relying on the
// first-order correction.
constexpr double kRepreintegrateGyro = 5e-3;
constexpr double kRepreintegrateAccel = 5e-2;

struct ProblemLayout {
  std::map<int, int> state_of_kf;
  std::map<int, int> landmark_of_point;
};

void write_back(KeyframeGraph& graph, const ViProblem& problem, const ProblemLayout& layout,
                const std::set<int>& optimized) {
  for (const auto& [kf_id, idx] : layout.state_of_kf) {
    if (!optimized.count(kf_id)) continue;
    graph.keyframe(kf_id).state = problem.state(idx);
  }
  for (const auto& [pid, idx] : layout.landmark_of_point) graph.point(pid).X_W = problem.landmark(idx);
  for (int kf_id : optimized) {
    const Keyframe& kf = graph.keyframe(kf_id);
    if (kf.prev < 0) continue;
    const ImuBias& lin = kf.pre_from_prev.bias_lin;
    if ((kf.state.bias.gyro - lin.gyro).norm() > kRepreintegrateGyro ||
        (kf.state.bias.accel - lin.accel).norm() > kRepreintegrateAccel) {
      graph.repreintegrate(kf_id);
    }
  }
}

int remove_outliers(KeyframeGraph& graph, const std::set<int>& points, const SensorContext& ctx,
                    double outlier_chi2) {
  std::vector<std::pair<int, int>> bad;
  for (int pid : points) {
    const MapPoint& p = graph.point(pid);
    for (const auto& [kf_id, idx] : p.observers) {
      const Keyframe& kf = graph.keyframe(kf_id);
      const auto t =
          reprojection_residual(kf.state, p.X_W, kf.observations[idx], ctx.camera, ctx.T_CB);
      if (!t || t->chi2 > outlier_chi2) bad.emplace_back(pid, kf_id);
    }
  }
  for (const auto& [pid, kf_id] : bad) {
    if (graph.has_point(pid)) graph.remove_observation(pid, kf_id);
  }
  return static_cast<int>(bad.size());
}

BundleAdjustmentReport run(KeyframeGraph& graph, const SensorContext& ctx,
                           const BundleAdjustmentOptions& options,
                           const std::vector<int>& free_kfs, const std::set<int>& fixed_kfs,
                           int anchor_kf) {
  BundleAdjustmentReport report;
  report.local_keyframes = free_kfs;
  report.fixed_keyframes.assign(fixed_kfs.begin(), fixed_kfs.end());

  std::set<int> points;
  for (int kf_id : free_kfs) {
    for (int pid : graph.keyframe(kf_id).point_ids) {
      if (pid >= 0) points.insert(pid);
    }
  }

  ViProblem problem(ctx.camera, ctx.T_CB, ctx.gravity, ctx.noise);
  ProblemLayout layout;
  std::set<int> involved(free_kfs.begin(), free_kfs.end());
  involved.insert(fixed_kfs.begin(), fixed_kfs.end());
  for (int kf_id : involved) {
    StateMask mask = fixed_kfs.count(kf_id) ? all_fixed() : all_free();
    if (kf_id == anchor_kf) mask = pose_fixed();
    layout.state_of_kf[kf_id] = problem.add_state(graph.keyframe(kf_id).state, mask);
  }
  for (int kf_id : free_kfs) {
    const Keyframe& kf = graph.keyframe(kf_id);
    if (kf.prev >= 0 && layout.state_of_kf.count(kf.prev)) {
      problem.add_imu(layout.state_of_kf.at(kf.prev), layout.state_of_kf.at(kf_id),
                      kf.pre_from_prev);
    }
  }
  std::set<int> optimized_points;
  for (int pid : points) {
    const MapPoint& p = graph.point(pid);
    int observers = 0;
    for (const auto& [kf_id, idx] : p.observers) observers += involved.count(kf_id) ? 1 : 0;
    const bool fixed = observers < 2;
    const int l = problem.add_landmark(p.X_W, fixed);
    if (!fixed) {
      layout.landmark_of_point[pid] = l;
      optimized_points.insert(pid);
    }
    for (const auto& [kf_id, idx] : p.observers) {
      auto it = layout.state_of_kf.find(kf_id);
      if (it == layout.state_of_kf.end()) continue;
      problem.add_reprojection(it->second, l, graph.keyframe(kf_id).observations[idx]);
    }
  }

  report.solver = problem.solve(options.solver);
  write_back(graph, problem, layout, std::set<int>(free_kfs.begin(), free_kfs.end()));
  report.removed_observations = remove_outliers(graph, points, ctx, options.outlier_chi2);
  return report;
}

}  // namespace

BundleAdjustmentReport local_bundle_adjustment(KeyframeGraph& graph, const SensorContext& ctx,
                                               const BundleAdjustmentOptions& options) {
  const std::vector<int> local = graph.local_window_ids();
  if (local.empty()) return {};
  const std::set<int> local_set(local.begin(), local.end());

  std::set<int> fixed;
  for (int kf_id : local) {
    for (int pid : graph.keyframe(kf_id).point_ids) {
      if (pid < 0) continue;
      for (const auto& [other, idx] : graph.point(pid).observers) {
        if (!local_set.count(other)) fixed.insert(other);
      }
    }
  }
  const int before = graph.keyframe(local.front()).prev;
  if (before >= 0) fixed.insert(before);

  const int anchor = fixed.empty() ? local.front() : -1;
  return run(graph, ctx, options, local, fixed, anchor);
}

BundleAdjustmentReport full_bundle_adjustment(KeyframeGraph& graph, const SensorContext& ctx,
                                              const BundleAdjustmentOptions& options) {
  const std::vector<int> all = graph.keyframe_ids();
  if (all.empty()) return {};
  return run(graph, ctx, options, all, {}, all.front());
}

}  // namespace vislam
