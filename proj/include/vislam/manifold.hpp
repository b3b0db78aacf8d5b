#pragma once

// SO(3) toolbox. Rotations are plain 3x3 Eigen matrices; every function is a
// free template over the Eigen expression type so calls compose with Eigen
// expressions without forcing temporaries.

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "vislam/errors.hpp"

namespace vislam {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector9d = Eigen::Matrix<double, 9, 1>;
using Matrix9d = Eigen::Matrix<double, 9, 9>;
using Vector15d = Eigen::Matrix<double, 15, 1>;
using Matrix15d = Eigen::Matrix<double, 15, 15>;

/// Crossover below which exp/log/Jacobians switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-7;

template <typename Derived>
Matrix3<typename Derived::Scalar> hat(const Eigen::MatrixBase<Derived>& v) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  Matrix3<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
       -v(1), v(0), S(0);
  return m;
}

template <typename Derived>
Vector3<typename Derived::Scalar> vee(const Eigen::MatrixBase<Derived>& m) {
  EIGEN_STATIC_ASSERT_MATRIX_SPECIFIC_SIZE(Derived, 3, 3);
  return Vector3<typename Derived::Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

/// Rodrigues' formula. Throws InvalidArgument on non-finite input.
template <typename Derived>
Matrix3<typename Derived::Scalar> exp_so3(const Eigen::MatrixBase<Derived>& phi) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  using std::sin;
  using std::sqrt;
  if (!phi.allFinite()) {
    throw InvalidArgument("exp_so3: non-finite rotation vector");
  }
  const Matrix3<S> w = hat(phi);
  const S theta = sqrt(phi.squaredNorm());
  if (theta < S(kSmallAngle)) {
    return Matrix3<S>::Identity() + w + S(0.5) * w * w;
  }
  const S half_sin = sin(theta / S(2));
  const S a = sin(theta) / theta;
  const S b = S(2) * half_sin * half_sin / (theta * theta);
  return Matrix3<S>::Identity() + a * w + b * w * w;
}

template <typename Derived>
bool is_rotation(const Eigen::MatrixBase<Derived>& r, double tol) {
  using S = typename Derived::Scalar;
  if (!r.allFinite()) return false;
  const Matrix3<S> m = r;
  return (m * m.transpose() - Matrix3<S>::Identity()).norm() <= S(tol) &&
         std::abs(m.determinant() - S(1)) <= S(tol);
}

/// Inverse of exp_so3 with angle in [0, pi]. Near pi the axis is taken from the
/// symmetric part (largest diagonal entry) to avoid dividing by sin(theta).
template <typename Derived>
Vector3<typename Derived::Scalar> log_so3(const Eigen::MatrixBase<Derived>& r) {
  EIGEN_STATIC_ASSERT_MATRIX_SPECIFIC_SIZE(Derived, 3, 3);
  using S = typename Derived::Scalar;
  using std::atan2;
  using std::sqrt;
  if (!is_rotation(r, 1e-6)) {
    throw InvalidArgument("log_so3: matrix is not a rotation");
  }
  const Matrix3<S> m = r;
  const Vector3<S> w = vee(m - m.transpose()) / S(2);  // sin(theta) * axis
  const S s = w.norm();
  const S c = std::clamp((m.trace() - S(1)) / S(2), S(-1), S(1));
  const S theta = atan2(s, c);
  if (theta < S(kSmallAngle)) {
    return w;
  }
  if (c > S(-0.99)) {
    return w * (theta / s);
  }
  const Matrix3<S> b = (m + m.transpose()) / S(2) - c * Matrix3<S>::Identity();
  Eigen::Index k = 0;
  b.diagonal().maxCoeff(&k);
  Vector3<S> axis = b.col(k) / sqrt(b(k, k));
  axis.normalize();
  if (axis.dot(w) < S(0)) axis = -axis;
  return theta * axis;
}

/// Right Jacobian: Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d).
template <typename Derived>
Matrix3<typename Derived::Scalar> right_jacobian_so3(const Eigen::MatrixBase<Derived>& phi) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  using std::sin;
  using std::sqrt;
  const Matrix3<S> w = hat(phi);
  const S theta = sqrt(phi.squaredNorm());
  if (theta < S(kSmallAngle)) {
    return Matrix3<S>::Identity() - S(0.5) * w + w * w / S(6);
  }
  const S half_sin = sin(theta / S(2));
  const S theta2 = theta * theta;
  return Matrix3<S>::Identity() - (S(2) * half_sin * half_sin / theta2) * w +
         ((theta - sin(theta)) / (theta2 * theta)) * w * w;
}

template <typename Derived>
Matrix3<typename Derived::Scalar> right_jacobian_inv_so3(const Eigen::MatrixBase<Derived>& phi) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Matrix3<S> w = hat(phi);
  const S theta = sqrt(phi.squaredNorm());
  if (theta < S(kSmallAngle)) {
    return Matrix3<S>::Identity() + S(0.5) * w + w * w / S(12);
  }
  const S theta2 = theta * theta;
  const S k = S(1) / theta2 - (S(1) + cos(theta)) / (S(2) * theta * sin(theta));
  return Matrix3<S>::Identity() + S(0.5) * w + k * w * w;
}

/// Closest rotation in the Frobenius sense.
template <typename Derived>
Matrix3<typename Derived::Scalar> normalize_rotation(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  Eigen::JacobiSVD<Matrix3<S>> svd(Matrix3<S>(m), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3<S> d = Matrix3<S>::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < S(0) ? S(-1) : S(1);
  return svd.matrixU() * d * svd.matrixV().transpose();
}

template <typename Scalar>
struct RigidPose {
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  RigidPose() = default;
  RigidPose(const Matrix3<Scalar>& r, const Vector3<Scalar>& t) : rotation(r), translation(t) {}

  static RigidPose identity() { return RigidPose(); }

  RigidPose inverse() const {
    const Matrix3<Scalar> rt = rotation.transpose();
    return RigidPose(rt, -(rt * translation));
  }

  RigidPose operator*(const RigidPose& other) const {
    return RigidPose(rotation * other.rotation, rotation * other.translation + translation);
  }

  Vector3<Scalar> operator*(const Vector3<Scalar>& point) const {
    return rotation * point + translation;
  }
};

using RigidPosed = RigidPose<double>;

}  // namespace vislam
