#include "vislam/pose_graph.hpp"

#include <numeric>

#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "vislam/errors.hpp"

namespace vislam {

PoseEdgeTerm pose_edge_residual(const RigidPosed& T_i, const RigidPosed& T_j, const PoseEdge& e) {
  const Eigen::Matrix3d& R_i = T_i.rotation;
  const Eigen::Matrix3d& R_j = T_j.rotation;
  const Eigen::Matrix3d dRT = e.T_ij.rotation.transpose();
  const Eigen::Vector3d d_local = R_i.transpose() * (T_j.translation - T_i.translation);

  PoseEdgeTerm t;
  const Eigen::Vector3d e_R = log_so3(dRT * R_i.transpose() * R_j);
  t.residual.head<3>() = e_R;
  t.residual.tail<3>() = dRT * (d_local - e.T_ij.translation);

  const Eigen::Matrix3d jr_inv = right_jacobian_inv_so3(e_R);
  t.J_i.setZero();
  t.J_j.setZero();
  t.J_i.block<3, 3>(0, 0) = -jr_inv * R_j.transpose() * R_i;
  t.J_j.block<3, 3>(0, 0) = jr_inv;
  t.J_i.block<3, 3>(3, 0) = dRT * hat(d_local);
  t.J_i.block<3, 3>(3, 3) = -dRT * R_i.transpose();
  t.J_j.block<3, 3>(3, 3) = dRT * R_i.transpose();
  return t;
}

namespace {

void check_connected(std::size_t n, std::span<const PoseEdge> edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const PoseEdge& e : edges) {
    if (e.i < 0 || e.j < 0 || static_cast<std::size_t>(e.i) >= n ||
        static_cast<std::size_t>(e.j) >= n) {
      throw InvalidArgument("pose_graph_optimize: edge references an unknown pose");
    }
    parent[find(static_cast<std::size_t>(e.i))] = find(static_cast<std::size_t>(e.j));
  }
  for (std::size_t k = 1; k < n; ++k) {
    if (find(k) != find(0)) throw InvalidArgument("pose_graph_optimize: graph is disconnected");
  }
}

double total_cost(std::span<const RigidPosed> poses, std::span<const PoseEdge> edges) {
  double c = 0.0;
  for (const PoseEdge& e : edges) {
    const Vector6d r = pose_edge_residual(poses[e.i], poses[e.j], e).residual;
    c += r.dot(e.information * r);
  }
  return c;
}

}  // namespace

std::vector<RigidPosed> pose_graph_optimize(std::span<const RigidPosed> poses,
                                            std::span<const PoseEdge> edges,
                                            const PoseGraphOptions& options) {
  const std::size_t n = poses.size();
  if (n == 0) return {};
  if (options.anchor < 0 || static_cast<std::size_t>(options.anchor) >= n) {
    throw InvalidArgument("pose_graph_optimize: anchor out of range");
  }
  check_connected(n, edges);

  std::vector<RigidPosed> x(poses.begin(), poses.end());
  const auto dim = static_cast<Eigen::Index>(6 * n);
  double cost = total_cost(x, edges);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    auto add = [&](int a, int b, const Matrix6d& m) {
      for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 6; ++c) triplets.emplace_back(6 * a + r, 6 * b + c, m(r, c));
      }
    };
    for (const PoseEdge& e : edges) {
      const PoseEdgeTerm t = pose_edge_residual(x[e.i], x[e.j], e);
      const Matrix6d Wi = t.J_i.transpose() * e.information;
      const Matrix6d Wj = t.J_j.transpose() * e.information;
      add(e.i, e.i, Wi * t.J_i);
      add(e.j, e.j, Wj * t.J_j);
      add(e.i, e.j, Wi * t.J_j);
      add(e.j, e.i, Wj * t.J_i);
      g.segment<6>(6 * e.i) += Wi * t.residual;
      g.segment<6>(6 * e.j) += Wj * t.residual;
    }
    // Anchor: identity rows for the fixed pose.
    std::vector<Eigen::Triplet<double>> kept;
    kept.reserve(triplets.size());
    const int lo = 6 * options.anchor;
    for (const auto& tr : triplets) {
      const bool in_anchor = (tr.row() >= lo && tr.row() < lo + 6) || (tr.col() >= lo && tr.col() < lo + 6);
      if (!in_anchor) kept.push_back(tr);
    }
    for (int k = 0; k < 6; ++k) kept.emplace_back(lo + k, lo + k, 1.0);
    g.segment<6>(lo).setZero();

    Eigen::SparseMatrix<double> H(dim, dim);
    H.setFromTriplets(kept.begin(), kept.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
    if (ldlt.info() != Eigen::Success) {
      throw NumericalFailure("pose_graph_optimize: factorization failed");
    }
    const Eigen::VectorXd dx = ldlt.solve(-g);

    std::vector<RigidPosed> trial = x;
    double alpha = 1.0;
    double trial_cost = cost;
    for (int h = 0; h < 8; ++h) {
      for (std::size_t k = 0; k < n; ++k) {
        trial[k].rotation = x[k].rotation * exp_so3(Eigen::Vector3d(alpha * dx.segment<3>(6 * k)));
        trial[k].translation = x[k].translation + alpha * dx.segment<3>(6 * k + 3);
      }
      trial_cost = total_cost(trial, edges);
      if (trial_cost <= cost) break;
      alpha *= 0.5;
    }
    if (trial_cost > cost) break;
    x = trial;
    const double decrease = cost - trial_cost;
    cost = trial_cost;
    if (alpha * dx.norm() < options.step_tolerance || decrease <= 1e-15 * (1.0 + cost)) break;
  }
  return x;
}

std::vector<NavState> correct_velocities_after_loop(std::span<const NavState> states,
                                                    std::span<const Eigen::Matrix3d> corrections) {
  if (states.size() != corrections.size()) {
    throw InvalidArgument("correct_velocities_after_loop: one correction per state required");
  }
  std::vector<NavState> out(states.begin(), states.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k].v_WB = corrections[k] * out[k].v_WB;
  return out;
}

RigidPosed rigid_point_alignment(std::span<const Eigen::Vector3d> src,
                                 std::span<const Eigen::Vector3d> dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw DegenerateMotion("rigid_point_alignment: need at least 3 matched points");
  }
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd a(3, n);
  Eigen::Matrix3Xd b(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    a.col(k) = src[k];
    b.col(k) = dst[k];
  }
  const Eigen::Matrix3Xd centered = a.colwise() - a.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(centered * centered.transpose()).singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-10 * sv(0)) {
    throw DegenerateMotion("rigid_point_alignment: points are collinear or coincident");
  }
  const Eigen::Matrix4d T = Eigen::umeyama(a, b, false);
  return RigidPosed(T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>());
}

}  // namespace vislam
