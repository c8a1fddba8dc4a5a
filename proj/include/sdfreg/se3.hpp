#pragma once

// SE(3)/SO(3) arithmetic on twists and rigid transforms.
//
// Twists are stored rotation-first, xi = [phi; rho]. The exponential map is
// the full SE(3) exponential: R = exp([phi]x), t = V(phi) * rho with V the
// SO(3) left Jacobian. Pose increments premultiply (left perturbation), so
// the derivative of a transformed point with respect to the increment is
// d(exp(d)*T*p)/dd|_{d=0} = [-[T*p]x | I].

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <stdexcept>

#include "sdfreg/pointcloud.hpp"

namespace sdfreg {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix36 = Eigen::Matrix<double, 3, 6>;

/// se(3) element, rotation-first: [phi1, phi2, phi3, rho1, rho2, rho3].
struct Twist {
  Vector3 phi = Vector3::Zero();
  Vector3 rho = Vector3::Zero();

  static Twist Zero() { return {}; }
  static Twist FromCoeffs(const Vector6& xi) { return {xi.head<3>(), xi.tail<3>()}; }
  Vector6 coeffs() const {
    Vector6 xi;
    xi << phi, rho;
    return xi;
  }
  double norm() const { return coeffs().norm(); }
};

struct RigidTransform {
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  static RigidTransform Identity() { return {}; }

  Vector3 operator*(const Vector3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  /// Homogeneous 4x4 form, bottom row (0,0,0,1).
  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static RigidTransform FromMatrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
};

inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

namespace detail {

inline constexpr double kSmallAngle = 1e-8;

/// Rodrigues rotation; 2nd-order Taylor below kSmallAngle.
inline Matrix3 so3_exp(const Vector3& phi) {
  double theta = phi.norm();
  Matrix3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Matrix3::Identity() + K + 0.5 * K * K;
  }
  double t2 = theta * theta;
  return Matrix3::Identity() + (std::sin(theta) / theta) * K +
         ((1.0 - std::cos(theta)) / t2) * K * K;
}

/// SO(3) left Jacobian V with V(phi)*rho the translation of exp([phi;rho]^).
inline Matrix3 so3_left_jacobian(const Vector3& phi) {
  double theta = phi.norm();
  Matrix3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Matrix3::Identity() + 0.5 * K + (1.0 / 6.0) * K * K;
  }
  double t2 = theta * theta;
  double t3 = t2 * theta;
  return Matrix3::Identity() + ((1.0 - std::cos(theta)) / t2) * K +
         ((theta - std::sin(theta)) / t3) * K * K;
}

inline Matrix3 so3_left_jacobian_inverse(const Vector3& phi) {
  double theta = phi.norm();
  Matrix3 K = skew(phi);
  if (theta < kSmallAngle) {
    return Matrix3::Identity() - 0.5 * K + (1.0 / 12.0) * K * K;
  }
  double t2 = theta * theta;
  double c = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Matrix3::Identity() - 0.5 * K + c * K * K;
}

inline Vector3 so3_log(const Matrix3& R) {
  double cos_theta = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
  double theta = std::acos(cos_theta);
  if (theta > M_PI - 1e-6)
    throw std::domain_error("ill-conditioned logarithm: rotation angle within 1e-6 of pi");
  Vector3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < kSmallAngle) {
    // w = 2 sin(theta) * axis; sin(theta)/theta ~ 1 - theta^2/6
    return 0.5 * (1.0 + theta * theta / 6.0) * w;
  }
  return (theta / (2.0 * std::sin(theta))) * w;
}

}  // namespace detail

inline RigidTransform exp_twist(const Twist& xi) {
  RigidTransform T;
  T.rotation = detail::so3_exp(xi.phi);
  T.translation = detail::so3_left_jacobian(xi.phi) * xi.rho;
  return T;
}

/// Inverse of exp_twist. Throws std::domain_error when the rotation angle is
/// within 1e-6 of pi, where the axis is not recoverable to full precision.
inline Twist log_transform(const RigidTransform& T) {
  Twist xi;
  xi.phi = detail::so3_log(T.rotation);
  xi.rho = detail::so3_left_jacobian_inverse(xi.phi) * T.translation;
  return xi;
}

/// Composition applying B first, then A: (A o B)(x) = A(B(x)).
inline RigidTransform compose(const RigidTransform& A, const RigidTransform& B) {
  return {A.rotation * B.rotation, A.rotation * B.translation + A.translation};
}

inline PointCloud apply_transform(const RigidTransform& T, const PointCloud& cloud) {
  PointCloud out;
  out.name = cloud.name;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(T * p);
  return out;
}

/// d(R p + t)/d(xi) under left perturbation exp(dxi^) * T, evaluated at the
/// current pose. Columns 0..2 (phi): -[R p + t]x; columns 3..5 (rho): I.
inline Matrix36 point_twist_jacobian(const RigidTransform& T, const Vector3& p) {
  Matrix36 J;
  J.leftCols<3>() = -skew(T * p);
  J.rightCols<3>() = Matrix3::Identity();
  return J;
}

}  // namespace sdfreg
