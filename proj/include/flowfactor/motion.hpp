#pragma once

#include "flowfactor/se3.hpp"

namespace flowfactor {

/// The three-way ego-motion factorization
///
///   T = T_rad * T_tan * T_rot
///
/// with T_rot = [R | 0], T_tan = [I | (t_x, t_y, 0)] and
/// T_rad = [I | (0, 0, t_z)]. The factor order is fixed; rigid-body
/// transformations do not commute, so it is part of the definition.
struct MotionComponents {
  SE3Pose rot;  ///< pure rotation, zero translation
  SE3Pose tan;  ///< identity rotation, (t_x, t_y, 0)
  SE3Pose rad;  ///< identity rotation, (0, 0, t_z)

  SE3Pose recompose() const { return rad * (tan * rot); }

  Eigen::Vector2d tangential() const {
    return {tan.translation.x(), tan.translation.y()};
  }
  double radial() const { return rad.translation.z(); }
};

/// Exact split of a pose into rotational, tangential and radial factors.
/// Unique given the fixed factor order; tiny translation components are kept
/// as-is, never thresholded away.
inline MotionComponents decompose_motion(const SE3Pose& pose) {
  pose.require_valid();
  MotionComponents c;
  c.rot.rotation = pose.rotation;
  c.tan.translation = {pose.translation.x(), pose.translation.y(), 0.0};
  c.rad.translation = {0.0, 0.0, pose.translation.z()};
  return c;
}

/// Residual transforms left in the radial/tangential factors when the
/// decomposition is carried out with estimated instead of true motion.
struct MotionDeviation {
  SE3Pose delta_rad;
  SE3Pose delta_tan;
};

/// Deviations of the practical decomposition:
///
///   delta_rad = T_rad^-1 * T * est_rot^-1 * est_tan^-1
///   delta_tan = T_tan^-1 * T * est_rot^-1 * est_rad^-1
///
/// where T_rad, T_tan come from the exact decomposition of `true_pose`.
/// Both are identity when the estimate matches the truth.
inline MotionDeviation deviation_transforms(const SE3Pose& true_pose,
                                            const MotionComponents& est) {
  true_pose.require_valid();
  est.rot.require_valid();
  const MotionComponents truth = decompose_motion(true_pose);
  MotionDeviation dev;
  dev.delta_rad =
      truth.rad.inverse() * (true_pose * (est.rot.inverse() * est.tan.inverse()));
  dev.delta_tan =
      truth.tan.inverse() * (true_pose * (est.rot.inverse() * est.rad.inverse()));
  return dev;
}

}  // namespace flowfactor
