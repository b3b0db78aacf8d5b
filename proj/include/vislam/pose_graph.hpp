#pragma once

// 6-DoF pose graph over keyframe poses (scale is not a variable: inertial
// sensing makes it observable). The residual of an edge (i, j) with
// measurement T_ij = (dR, dp) is
//   [ Log(dR^T R_i^T R_j) ; dR^T (R_i^T (p_j - p_i) - dp) ],
// the rotation and translation of T_ij^-1 T_i^-1 T_j.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "vislam/manifold.hpp"
#include "vislam/nav_state.hpp"

namespace vislam {

struct PoseEdge {
  int i = 0;
  int j = 0;
  RigidPosed T_ij;  // pose of j expressed in i
  Matrix6d information = Matrix6d::Identity();
  bool loop = false;
};

struct PoseGraphOptions {
  int anchor = 0;
  int max_iterations = 20;
  double step_tolerance = 1e-12;
};

/// Residual and Jacobians of one edge with respect to [dphi, dp] of each
/// endpoint (rotation perturbed on the right, position additively).
struct PoseEdgeTerm {
  Vector6d residual;
  Matrix6d J_i;
  Matrix6d J_j;
};
PoseEdgeTerm pose_edge_residual(const RigidPosed& T_i, const RigidPosed& T_j, const PoseEdge& e);

/// Throws InvalidArgument if the edges leave the graph disconnected or reference
/// unknown poses.
std::vector<RigidPosed> pose_graph_optimize(std::span<const RigidPosed> poses,
                                            std::span<const PoseEdge> edges,
                                            const PoseGraphOptions& options = {});

/// Rotates each velocity by the rotation correction R_new R_old^T of its
/// keyframe. Biases are left untouched.
std::vector<NavState> correct_velocities_after_loop(std::span<const NavState> states,
                                                    std::span<const Eigen::Matrix3d> corrections);

/// Rigid transform T minimizing sum |dst - T src|^2 (closed form).
/// Throws DegenerateMotion for fewer than 3 points or collinear configurations.
RigidPosed rigid_point_alignment(std::span<const Eigen::Vector3d> src,
                                 std::span<const Eigen::Vector3d> dst);

}  // namespace vislam
