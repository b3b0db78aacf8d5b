#include "vislam/camera.hpp"

#include "vislam/errors.hpp"

namespace vislam {

Eigen::Vector2d project(const PinholeCamera& camera, const Eigen::Vector3d& X_C) {
  if (!(X_C.z() > kMinDepth)) {
    throw InvalidArgument("project: point behind camera");
  }
  const double inv_z = 1.0 / X_C.z();
  return {camera.fu * X_C.x() * inv_z + camera.cu, camera.fv * X_C.y() * inv_z + camera.cv};
}

Eigen::Matrix<double, 2, 3> project_jacobian(const PinholeCamera& camera,
                                             const Eigen::Vector3d& X_C) {
  const double inv_z = 1.0 / X_C.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fu * inv_z, 0.0, -camera.fu * X_C.x() * inv_z2,
       0.0, camera.fv * inv_z, -camera.fv * X_C.y() * inv_z2;
  return j;
}

}  // namespace vislam
