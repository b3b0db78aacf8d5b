#pragma once

// Frame-rate tracking: the newest frame is optimized against fixed map points
// and linked by an inertial term either to the last keyframe (right after a
// map change) or to the previous frame carrying a marginalization prior.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/factors.hpp"
#include "vislam/nav_state.hpp"
#include "vislam/preintegration.hpp"
#include "vislam/vi_problem.hpp"

namespace vislam {

/// A map point held fixed during tracking together with its observation in
/// the frame being tracked.
struct MapMatch {
  Eigen::Vector3d X_W = Eigen::Vector3d::Zero();
  Observation obs;
};

struct SensorContext {
  PinholeCamera camera;
  RigidPosed T_CB;
  Eigen::Vector3d gravity = Eigen::Vector3d(0.0, 0.0, -9.81);
  ImuNoiseModel noise;
};

struct TrackingOptions {
  int min_observations = 6;  // fewer usable matches raises TrackingLost
  SolverOptions solver;      // max_iterations defaults to 10
};

struct TrackingResult {
  NavState state;
  MarginalPrior prior;  // Gaussian on `state` for the next pair optimization
  SolverReport report;
  int observations = 0;
};

/// Tracks frame j against the fixed last keyframe i. The returned prior is
/// the 15x15 information of frame j at the optimum.
TrackingResult optimize_frame_to_keyframe(const NavState& last_keyframe,
                                          const PreintegratedImu& pre_kf_to_frame,
                                          std::span<const MapMatch> matches,
                                          double frame_timestamp, const SensorContext& ctx,
                                          const TrackingOptions& options = {});

/// Joint optimization of the previous frame (with its prior) and the current
/// frame, followed by marginalization of the previous frame.
TrackingResult optimize_frame_pair_with_prior(const NavState& previous,
                                              const MarginalPrior& prior,
                                              const PreintegratedImu& pre_prev_to_curr,
                                              std::span<const MapMatch> matches,
                                              double frame_timestamp, const SensorContext& ctx,
                                              const TrackingOptions& options = {});

/// Schur complement of the first 15 states of a 30x30 information matrix.
/// Throws NumericalFailure if the result is not positive semi-definite.
Matrix15d marginalize_first(const Eigen::Matrix<double, 30, 30>& information);

/// Batch counterpart of the sliding estimator: frame 0 carries `prior`, every
/// consecutive pair an inertial term, and frames 1..K-1 their matches.
std::vector<NavState> optimize_frame_batch(const MarginalPrior& prior,
                                           std::span<const PreintegratedImu> pres,
                                           std::span<const std::vector<MapMatch>> matches,
                                           const SensorContext& ctx,
                                           const SolverOptions& solver = {.max_iterations = 50});

}  // namespace vislam
