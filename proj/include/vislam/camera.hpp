#pragma once

#include <Eigen/Core>

#include "vislam/manifold.hpp"

namespace vislam {

/// Undistorted pinhole camera.
struct PinholeCamera {
  double fu = 400.0;
  double fv = 400.0;
  double cu = 320.0;
  double cv = 240.0;
  int width = 640;
  int height = 480;

  bool in_image(const Eigen::Vector2d& x, double margin = 0.0) const {
    return x.x() >= margin && x.y() >= margin && x.x() <= width - margin &&
           x.y() <= height - margin;
  }
};

struct Landmark {
  int id = -1;
  Eigen::Vector3d X_W = Eigen::Vector3d::Zero();
};

struct Observation {
  int landmark_id = -1;
  Eigen::Vector2d keypoint = Eigen::Vector2d::Zero();  // px
  Eigen::Matrix2d info = Eigen::Matrix2d::Identity();  // px^-2
};

/// Minimum depth accepted by project().
inline constexpr double kMinDepth = 1e-6;

/// Pinhole projection of a camera-frame point. Throws InvalidArgument when the
/// point is at or behind the image plane (depth <= kMinDepth).
Eigen::Vector2d project(const PinholeCamera& camera, const Eigen::Vector3d& X_C);

/// d project / d X_C.
Eigen::Matrix<double, 2, 3> project_jacobian(const PinholeCamera& camera,
                                             const Eigen::Vector3d& X_C);

}  // namespace vislam
