#pragma once

#include <vector>

#include "vislam/keyframe_graph.hpp"
#include "vislam/tracking.hpp"
#include "vislam/vi_problem.hpp"

namespace vislam {

struct BundleAdjustmentOptions {
  SolverOptions solver;
  // Observations whose whitened squared error exceeds this after the solve
  // are unlinked from the map.
  double outlier_chi2 = 30.0;
};

struct BundleAdjustmentReport {
  SolverReport solver;
  std::vector<int> local_keyframes;
  std::vector<int> fixed_keyframes;
  int removed_observations = 0;
};

/// Optimizes the newest local_window() keyframes and every point they see.
/// Keyframes outside the window that see those points, plus the keyframe
/// just before the window, are held fixed; the latter keeps its inertial link.
BundleAdjustmentReport local_bundle_adjustment(KeyframeGraph& graph, const SensorContext& ctx,
                                               const BundleAdjustmentOptions& options = {});

/// Every keyframe state (velocities and biases included) and every point.
/// The first keyframe's pose anchors the gauge.
BundleAdjustmentReport full_bundle_adjustment(KeyframeGraph& graph, const SensorContext& ctx,
                                              const BundleAdjustmentOptions& options = {
                                                  .solver = {.max_iterations = 100}});

}  // namespace vislam
