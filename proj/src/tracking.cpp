#include "vislam/tracking.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "vislam/errors.hpp"

namespace vislam {

namespace {

void add_matches(ViProblem& problem, int state, std::span<const MapMatch> matches) {
  for (const MapMatch& m : matches) {
    problem.add_reprojection(state, problem.add_landmark(m.X_W, true), m.obs);
  }
}

void require_observations(const ViProblem& problem, int min_observations, double timestamp) {
  const int n = problem.usable_observations();
  if (n < min_observations) {
    throw TrackingLost(timestamp, "tracking lost: " + std::to_string(n) +
                                      " usable observations, need " +
                                      std::to_string(min_observations));
  }
}

}  // namespace

TrackingResult optimize_frame_to_keyframe(const NavState& last_keyframe,
                                          const PreintegratedImu& pre_kf_to_frame,
                                          std::span<const MapMatch> matches,
                                          double frame_timestamp, const SensorContext& ctx,
                                          const TrackingOptions& options) {
  NavState guess = predict(last_keyframe, pre_kf_to_frame, ctx.gravity);
  guess.timestamp = frame_timestamp;

  ViProblem problem(ctx.camera, ctx.T_CB, ctx.gravity, ctx.noise);
  const int kf = problem.add_state(last_keyframe, all_fixed());
  const int frame = problem.add_state(guess);
  problem.add_imu(kf, frame, pre_kf_to_frame);
  add_matches(problem, frame, matches);
  require_observations(problem, options.min_observations, frame_timestamp);

  TrackingResult out;
  out.report = problem.solve(options.solver);
  out.observations = problem.usable_observations();
  out.state = problem.state(frame);
  out.prior.mean = out.state;
  out.prior.information = problem.state_information().block<15, 15>(15, 15);
  return out;
}

TrackingResult optimize_frame_pair_with_prior(const NavState& previous,
                                              const MarginalPrior& prior,
                                              const PreintegratedImu& pre_prev_to_curr,
                                              std::span<const MapMatch> matches,
                                              double frame_timestamp, const SensorContext& ctx,
                                              const TrackingOptions& options) {
  NavState guess = predict(previous, pre_prev_to_curr, ctx.gravity);
  guess.timestamp = frame_timestamp;

  ViProblem problem(ctx.camera, ctx.T_CB, ctx.gravity, ctx.noise);
  const int prev = problem.add_state(previous);
  const int curr = problem.add_state(guess);
  problem.add_prior(prev, prior);
  problem.add_imu(prev, curr, pre_prev_to_curr);
  add_matches(problem, curr, matches);
  require_observations(problem, options.min_observations, frame_timestamp);

  TrackingResult out;
  out.report = problem.solve(options.solver);
  out.observations = problem.usable_observations();
  out.state = problem.state(curr);
  const Eigen::Matrix<double, 30, 30> joint = problem.state_information();
  out.prior.mean = out.state;
  out.prior.information = marginalize_first(joint);
  return out;
}

Matrix15d marginalize_first(const Eigen::Matrix<double, 30, 30>& information) {
  const Matrix15d H_mm = information.topLeftCorner<15, 15>();
  const Matrix15d H_mk = information.topRightCorner<15, 15>();
  const Matrix15d H_kk = information.bottomRightCorner<15, 15>();

  // Pseudo-inverse of the marginalized block so unconstrained directions
  // drop out instead of blowing up.
  Eigen::SelfAdjointEigenSolver<Matrix15d> eig(0.5 * (H_mm + H_mm.transpose()));
  const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
  Vector15d inv = Vector15d::Zero();
  for (int k = 0; k < 15; ++k) {
    const double ev = eig.eigenvalues()(k);
    if (ev > 1e-12 * max_ev) inv(k) = 1.0 / ev;
  }
  const Matrix15d H_mm_pinv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  Matrix15d prior = H_kk - H_mk.transpose() * H_mm_pinv * H_mk;
  prior = 0.5 * (prior + prior.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix15d> check(prior);
  const double scale = std::max(check.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  if (!prior.allFinite() || check.eigenvalues().minCoeff() < -1e-9 * scale) {
    throw NumericalFailure("marginalize_first: prior information is not positive semi-definite");
  }
  return prior;
}

std::vector<NavState> optimize_frame_batch(const MarginalPrior& prior,
                                           std::span<const PreintegratedImu> pres,
                                           std::span<const std::vector<MapMatch>> matches,
                                           const SensorContext& ctx,
                                           const SolverOptions& solver) {
  if (matches.size() != pres.size() + 1) {
    throw InvalidArgument("optimize_frame_batch: need one match set per frame");
  }
  ViProblem problem(ctx.camera, ctx.T_CB, ctx.gravity, ctx.noise);
  NavState x = prior.mean;
  problem.add_state(x);
  problem.add_prior(0, prior);
  for (std::size_t k = 0; k < pres.size(); ++k) {
    x = predict(x, pres[k], ctx.gravity);
    const int idx = problem.add_state(x);
    problem.add_imu(idx - 1, idx, pres[k]);
    add_matches(problem, idx, matches[k + 1]);
  }
  problem.solve(solver);
  std::vector<NavState> out;
  out.reserve(problem.num_states());
  for (std::size_t k = 0; k < problem.num_states(); ++k) out.push_back(problem.state(static_cast<int>(k)));
  return out;
}

}  // namespace vislam
