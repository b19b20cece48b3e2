#pragma once

#include <Eigen/Core>

#include "flowfactor/detail/parallel.hpp"
#include "flowfactor/fields.hpp"
#include "flowfactor/se3.hpp"

namespace flowfactor {

/// Full rigid flow of a posed camera over a static scene:
///
///   p_s~ = (1 / z_s) K (z_t R K^-1 p_t~ + t),   flow = p_s - p_t
///
/// Pixels whose transformed depth z_s is not positive are invalidated rather
/// than reported as a global error.
inline FlowField rigid_flow(const DepthMap& depth, const SE3Pose& pose) {
  depth.validate();
  pose.require_valid();
  const CameraIntrinsics& intr = depth.intrinsics;
  FlowField flow(depth.width(), depth.height(), FlowKind::rigid);
  const Eigen::Matrix3d r = pose.rotation;
  const Eigen::Vector3d t = pose.translation;
  parallel_rows(depth.height(), [&](int y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double z_t = depth.values(x, y);
      const Eigen::Vector3d p_cam = z_t * intr.ray(x, y);
      const Eigen::Vector3d p_src = r * p_cam + t;
      if (!(p_src.z() > kDepthEpsilon)) {
        flow.valid(x, y) = 0;
        continue;
      }
      const Eigen::Vector2d p_s = intr.project(p_src);
      flow.vectors(x, y) = p_s - Eigen::Vector2d(x, y);
    }
  });
  return flow;
}

/// Homography of a pure rotation: H = K R K^-1.
inline Eigen::Matrix3d rotation_homography(const Eigen::Matrix3d& rotation,
                                           const CameraIntrinsics& intrinsics) {
  if (rotation_defect(rotation) > 1e-9)
    throw std::invalid_argument("rotation_homography: rotation is not orthonormal");
  return intrinsics.matrix() * rotation * intrinsics.inverse_matrix();
}

/// Depth-independent flow of a pure rotation, evaluated through the
/// homography rows as the quadratic-plus-perspective-division form
///
///   f = 1/(h3.p~) * (p~.(-h3 i1^T).p~ + h1.p~, p~.(-h3 i2^T).p~ + h2.p~)
///
/// rather than through rigid_flow; the two routes are cross-checked in tests.
inline FlowField rotational_flow(const Eigen::Matrix3d& rotation,
                                 const CameraIntrinsics& intrinsics) {
  const Eigen::Matrix3d h = rotation_homography(rotation, intrinsics);
  const Eigen::Vector3d h1 = h.row(0);
  const Eigen::Vector3d h2 = h.row(1);
  const Eigen::Vector3d h3 = h.row(2);
  FlowField flow(intrinsics.width, intrinsics.height, FlowKind::rotational);
  parallel_rows(intrinsics.height, [&](int y) {
    for (int x = 0; x < intrinsics.width; ++x) {
      const Eigen::Vector3d p(x, y, 1.0);
      const double w = h3.dot(p);
      if (!(w > kDepthEpsilon)) {
        flow.valid(x, y) = 0;
        continue;
      }
      const double qu = p.dot(-h3 * p.x()) + h1.dot(p);
      const double qv = p.dot(-h3 * p.y()) + h2.dot(p);
      flow.vectors(x, y) = Eigen::Vector2d(qu, qv) / w;
    }
  });
  return flow;
}

/// Flow of a pure tangential translation: f = (fu tx, fv ty) / z_t. Parallel
/// across the image, inversely proportional to depth.
inline FlowField tangential_flow(const DepthMap& depth,
                                 const Eigen::Vector2d& t_xy) {
  depth.validate();
  const CameraIntrinsics& intr = depth.intrinsics;
  const Eigen::Vector2d numerator(intr.fu * t_xy.x(), intr.fv * t_xy.y());
  FlowField flow(depth.width(), depth.height(), FlowKind::tangential);
  parallel_rows(depth.height(), [&](int y) {
    for (int x = 0; x < depth.width(); ++x)
      flow.vectors(x, y) = numerator / depth.values(x, y);
  });
  return flow;
}

/// Flow of a pure radial translation: f = -tz/(z_t + tz) * (p_t - p_0).
/// Collinear with the direction to the principal point at every pixel.
inline FlowField radial_flow(const DepthMap& depth, double t_z) {
  depth.validate();
  const CameraIntrinsics& intr = depth.intrinsics;
  FlowField flow(depth.width(), depth.height(), FlowKind::radial);
  parallel_rows(depth.height(), [&](int y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double den = depth.values(x, y) + t_z;
      if (!(den > kDepthEpsilon)) {
        flow.valid(x, y) = 0;
        continue;
      }
      const Eigen::Vector2d offset(x - intr.u0, y - intr.v0);
      flow.vectors(x, y) = (-t_z / den) * offset;
    }
  });
  return flow;
}

/// Flow of a general translation,
///
///   f = (fu tx - (u - u0) tz, fv ty - (v - v0) tz) / (z_t + tz),
///
/// which superposes the tangential and radial patterns non-additively.
inline FlowField translational_flow(const DepthMap& depth,
                                    const Eigen::Vector3d& t) {
  depth.validate();
  const CameraIntrinsics& intr = depth.intrinsics;
  FlowField flow(depth.width(), depth.height(), FlowKind::rigid);
  parallel_rows(depth.height(), [&](int y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double den = depth.values(x, y) + t.z();
      if (!(den > kDepthEpsilon)) {
        flow.valid(x, y) = 0;
        continue;
      }
      flow.vectors(x, y) =
          Eigen::Vector2d(intr.fu * t.x() - (x - intr.u0) * t.z(),
                          intr.fv * t.y() - (y - intr.v0) * t.z()) /
          den;
    }
  });
  return flow;
}

/// Analytic partials of translational_flow with respect to z_t, tx, ty, tz:
///
///   df/dz  = -(fu tx - (u-u0) tz, fv ty - (v-v0) tz) / (z+tz)^2
///   df/dtx = (fu, 0) / (z+tz)
///   df/dty = (0, fv) / (z+tz)
///   df/dtz = -((u-u0) z + fu tx, (v-v0) z + fv ty) / (z+tz)^2
inline FlowJacobian flow_jacobian(const DepthMap& depth,
                                  const Eigen::Vector3d& t) {
  depth.validate();
  const CameraIntrinsics& intr = depth.intrinsics;
  FlowJacobian jac(depth.width(), depth.height());
  parallel_rows(depth.height(), [&](int y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double z = depth.values(x, y);
      const double den = z + t.z();
      if (!(den > kDepthEpsilon)) {
        jac.valid(x, y) = 0;
        continue;
      }
      const double du = x - intr.u0;
      const double dv = y - intr.v0;
      const double den2 = den * den;
      jac.d_z(x, y) = Eigen::Vector2d(intr.fu * t.x() - du * t.z(),
                                      intr.fv * t.y() - dv * t.z()) /
                      -den2;
      jac.d_tx(x, y) = Eigen::Vector2d(intr.fu / den, 0.0);
      jac.d_ty(x, y) = Eigen::Vector2d(0.0, intr.fv / den);
      jac.d_tz(x, y) = Eigen::Vector2d(du * z + intr.fu * t.x(),
                                       dv * z + intr.fv * t.y()) /
                       -den2;
    }
  });
  return jac;
}

}  // namespace flowfactor
