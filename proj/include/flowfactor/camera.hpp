#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace flowfactor {

/// Pinhole camera intrinsics. Pixel coordinates are cell centers at integer
/// positions; no half-pixel offset is applied anywhere in this library.
struct CameraIntrinsics {
  double fu = 0.0;  ///< horizontal focal length, pixels
  double fv = 0.0;  ///< vertical focal length, pixels
  double u0 = 0.0;  ///< principal point x, pixels
  double v0 = 0.0;  ///< principal point y, pixels
  int width = 0;    ///< image width, pixels
  int height = 0;   ///< image height, pixels

  CameraIntrinsics() = default;
  CameraIntrinsics(double fu_, double fv_, double u0_, double v0_, int width_,
                   int height_)
      : fu(fu_), fv(fv_), u0(u0_), v0(v0_), width(width_), height(height_) {
    validate();
  }

  void validate() const {
    if (!(fu > 0.0) || !(fv > 0.0))
      throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
    if (!(u0 > 0.0) || !(u0 < width) || !(v0 > 0.0) || !(v0 < height))
      throw std::invalid_argument("CameraIntrinsics: principal point must lie inside the image");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("CameraIntrinsics: image dimensions must be positive");
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fu, 0.0, u0, 0.0, fv, v0, 0.0, 0.0, 1.0;
    return k;
  }

  // Closed-form inverse of the pinhole matrix.
  Eigen::Matrix3d inverse_matrix() const {
    Eigen::Matrix3d ki;
    ki << 1.0 / fu, 0.0, -u0 / fu, 0.0, 1.0 / fv, -v0 / fv, 0.0, 0.0, 1.0;
    return ki;
  }

  /// K^-1 * (u, v, 1): unit-depth camera ray through pixel (u, v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - u0) / fu, (v - v0) / fv, 1.0};
  }

  /// Perspective projection of a camera-frame point with positive depth.
  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {fu * p.x() / p.z() + u0, fv * p.y() / p.z() + v0};
  }

  Eigen::Vector2d principal_point() const { return {u0, v0}; }
};

/// Intrinsics with the principal point at the image center and a fixed
/// focal-length-to-width ratio; the default camera used by the simulator.
inline CameraIntrinsics default_intrinsics(int width, int height,
                                           double focal_scale = 0.58) {
  return CameraIntrinsics(focal_scale * width, focal_scale * width,
                          0.5 * width, 0.5 * height, width, height);
}

}  // namespace flowfactor
