#include "vislam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "vislam/errors.hpp"

namespace vislam {

std::vector<MatchedPair> associate(std::span<const StampedPose> est,
                                   std::span<const StampedPose> gt, double max_dt) {
  if (!(max_dt >= 0.0)) throw InvalidArgument("associate: max_dt must be non-negative");
  std::vector<std::size_t> order(gt.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return gt[a].timestamp < gt[b].timestamp; });

  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    auto lo = std::lower_bound(order.begin(), order.end(), t - max_dt,
                               [&](std::size_t k, double v) { return gt[k].timestamp < v; });
    for (auto it = lo; it != order.end() && gt[*it].timestamp <= t + max_dt; ++it) {
      candidates.emplace_back(std::abs(gt[*it].timestamp - t), i, *it);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> used_est(est.size(), false);
  std::vector<bool> used_gt(gt.size(), false);
  std::vector<MatchedPair> out;
  for (const auto& [dt, i, j] : candidates) {
    if (used_est[i] || used_gt[j]) continue;
    used_est[i] = used_gt[j] = true;
    out.push_back({i, j});
  }
  if (out.empty()) throw InsufficientData("associate: no poses within max_dt");
  std::sort(out.begin(), out.end(), [](const MatchedPair& a, const MatchedPair& b) { return a.est < b.est; });
  return out;
}

AlignmentResult align_similarity(std::span<const Eigen::Vector3d> est,
                                 std::span<const Eigen::Vector3d> gt, bool fix_scale) {
  if (est.size() != gt.size()) throw InvalidArgument("align_similarity: size mismatch");
  if (est.size() < 3) throw DegenerateMotion("align_similarity: need at least 3 pairs");
  const auto n = static_cast<Eigen::Index>(est.size());
  Eigen::Matrix3Xd a(3, n);
  Eigen::Matrix3Xd b(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    a.col(k) = est[k];
    b.col(k) = gt[k];
  }
  for (const Eigen::Matrix3Xd* m : {&a, &b}) {
    const Eigen::Matrix3Xd c = m->colwise() - m->rowwise().mean();
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(c * c.transpose()).singularValues();
    if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
      throw DegenerateMotion("align_similarity: points are collinear or coincident");
    }
  }
  const Eigen::Matrix4d T = Eigen::umeyama(a, b, !fix_scale);
  AlignmentResult r;
  const Eigen::Matrix3d sR = T.topLeftCorner<3, 3>();
  r.scale = fix_scale ? 1.0 : std::cbrt(sR.determinant());
  r.rotation = sR / r.scale;
  r.translation = T.topRightCorner<3, 1>();
  r.rmse = ate_rmse(est, gt, r);
  return r;
}

double ate_rmse(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt,
                const AlignmentResult& alignment) {
  if (est.size() != gt.size()) throw InvalidArgument("ate_rmse: size mismatch");
  if (est.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    sum += (alignment.apply(est[k]) - gt[k]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(est.size()));
}

std::vector<PosePair> matched_poses(std::span<const StampedPose> est,
                                    std::span<const StampedPose> gt,
                                    std::span<const MatchedPair> matches) {
  std::vector<PosePair> out;
  out.reserve(matches.size());
  for (const MatchedPair& m : matches) {
    out.push_back({gt[m.gt].timestamp, est[m.est].pose, gt[m.gt].pose});
  }
  return out;
}

const RpeBin* RpeCurve::find(double delta) const {
  for (const RpeBin& b : bins) {
    if (std::abs(b.delta - delta) < 1e-9) return &b;
  }
  return nullptr;
}

namespace {

// Linear interpolation between closest ranks of a sorted sample.
double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

}  // namespace

RpeCurve relative_pose_error(std::span<const PosePair> pairs, std::span<const double> deltas) {
  std::vector<double> dist(pairs.size(), 0.0);
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    dist[k] = dist[k - 1] + (pairs[k].gt.translation - pairs[k - 1].gt.translation).norm();
  }
  RpeCurve curve;
  std::vector<double> sorted_deltas(deltas.begin(), deltas.end());
  std::sort(sorted_deltas.begin(), sorted_deltas.end());
  for (double delta : sorted_deltas) {
    std::vector<double> errors;
    std::size_t j = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      j = std::max(j, i);
      while (j < pairs.size() && dist[j] - dist[i] < delta) ++j;
      if (j == pairs.size()) break;
      const RigidPosed d_gt = pairs[i].gt.inverse() * pairs[j].gt;
      const RigidPosed d_est = pairs[i].est.inverse() * pairs[j].est;
      errors.push_back((d_gt.inverse() * d_est).translation.norm());
    }
    if (errors.empty()) continue;
    std::sort(errors.begin(), errors.end());
    RpeBin bin;
    bin.delta = delta;
    bin.count = errors.size();
    double sum = 0.0;
    for (double e : errors) sum += e;
    bin.mean = sum / static_cast<double>(errors.size());
    bin.median = percentile(errors, 0.5);
    bin.p5 = percentile(errors, 0.05);
    bin.p95 = percentile(errors, 0.95);
    curve.bins.push_back(bin);
  }
  return curve;
}

EvaluationReport evaluate(std::span<const StampedPose> est, std::span<const StampedPose> gt,
                          const EvaluationOptions& options) {
  const std::vector<MatchedPair> matches = associate(est, gt, options.max_dt);
  std::vector<Eigen::Vector3d> pe, pg;
  for (const MatchedPair& m : matches) {
    pe.push_back(est[m.est].pose.translation);
    pg.push_back(gt[m.gt].pose.translation);
  }
  EvaluationReport report;
  report.matched = matches.size();
  report.alignment = align_similarity(pe, pg, options.fix_scale);
  report.ate = report.alignment.rmse;
  std::vector<PosePair> pairs = matched_poses(est, gt, matches);
  for (PosePair& p : pairs) p.est = report.alignment.apply(p.est);
  report.rpe = relative_pose_error(pairs, options.deltas);
  return report;
}

std::vector<StampedPose> reconstruct_frame_trajectory(
    std::span<const RelativeFramePose> frames, const std::map<int, RigidPosed>& keyframes) {
  std::vector<StampedPose> out;
  out.reserve(frames.size());
  for (const RelativeFramePose& f : frames) {
    auto it = keyframes.find(f.reference_kf);
    if (it == keyframes.end()) continue;
    out.push_back({f.timestamp, it->second * f.T_ref_frame});
  }
  return out;
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const EvaluationReport& report) {
  std::ofstream out = open_report(path);
  out << "# RPE: KITTI-style ground-truth path-length segments, translation error in meters\n";
  out << "metric,delta_m,value\n";
  out << "matched,," << report.matched << '\n';
  out << "ate_rmse,," << format_double(report.ate) << '\n';
  out << "alignment_scale,," << format_double(report.alignment.scale) << '\n';
  out << "scale_error_percent,," << format_double(report.alignment.scale_error_percent()) << '\n';
  for (const RpeBin& b : report.rpe.bins) {
    const std::string d = format_double(b.delta);
    out << "rpe_count," << d << ',' << b.count << '\n';
    out << "rpe_mean," << d << ',' << format_double(b.mean) << '\n';
    out << "rpe_median," << d << ',' << format_double(b.median) << '\n';
    out << "rpe_p5," << d << ',' << format_double(b.p5) << '\n';
    out << "rpe_p95," << d << ',' << format_double(b.p95) << '\n';
  }
}

void write_rpe_plot_data(const std::filesystem::path& path, const RpeCurve& curve) {
  std::ofstream out = open_report(path);
  out << "delta,median,p5,p95\n";
  for (const RpeBin& b : curve.bins) {
    out << format_double(b.delta) << ',' << format_double(b.median) << ','
        << format_double(b.p5) << ',' << format_double(b.p95) << '\n';
  }
}

}  // namespace vislam
