#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowfactor {

/// Frobenius norm of R^T R - I plus the determinant defect; zero for a
/// proper rotation.
inline double rotation_defect(const Eigen::Matrix3d& r) {
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
  const double det = std::abs(r.determinant() - 1.0);
  return ortho + det;
}

/// Rigid transformation: p' = R p + t.
struct SE3Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static SE3Pose identity() { return {}; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static SE3Pose from_matrix(const Eigen::Matrix4d& m) {
    SE3Pose pose;
    pose.rotation = m.topLeftCorner<3, 3>();
    pose.translation = m.topRightCorner<3, 1>();
    return pose;
  }

  SE3Pose inverse() const {
    SE3Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }

  SE3Pose operator*(const SE3Pose& rhs) const {
    SE3Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  bool is_valid(double tol = 1e-9) const {
    return translation.allFinite() && rotation.allFinite() &&
           rotation_defect(rotation) < tol;
  }

  void require_valid(double tol = 1e-9) const {
    if (!is_valid(tol))
      throw std::invalid_argument("SE3Pose: rotation is not orthonormal");
  }

  /// Nearest rotation in the Frobenius sense (polar projection). Repair is
  /// always explicit at call sites; no operation re-orthonormalizes silently.
  SE3Pose orthonormalized() const {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
      Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
      flip(2, 2) = -1.0;
      r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return {r, translation};
  }
};

/// Rodrigues formula. The axis must have unit norm.
inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& axis,
                                                double angle) {
  const double n = axis.norm();
  if (!(n > 1e-12))
    throw std::invalid_argument("rotation_from_axis_angle: zero-norm axis");
  if (std::abs(n - 1.0) > 1e-9)
    throw std::invalid_argument("rotation_from_axis_angle: axis must have unit norm");
  Eigen::Matrix3d k;
  k << 0.0, -axis.z(), axis.y(), axis.z(), 0.0, -axis.x(), -axis.y(), axis.x(),
      0.0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k +
         (1.0 - std::cos(angle)) * (k * k);
}

/// Angle of a rotation matrix, in radians, in [0, pi].
inline double rotation_angle(const Eigen::Matrix3d& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

/// Relative angle between two rotations.
inline double rotation_distance(const Eigen::Matrix3d& a,
                                const Eigen::Matrix3d& b) {
  return rotation_angle(a.transpose() * b);
}

/// Angle between two nonzero vectors, in radians.
inline double vector_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double den = a.norm() * b.norm();
  if (!(den > 0.0))
    throw std::invalid_argument("vector_angle: zero-length vector");
  return std::acos(std::clamp(a.dot(b) / den, -1.0, 1.0));
}

}  // namespace flowfactor
