#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "flowfactor/camera.hpp"
#include "flowfactor/grid.hpp"

namespace flowfactor {

/// Denominator guard, scene units: transformed depths at or below this are
/// treated as behind the camera and the pixel is invalidated.
inline constexpr double kDepthEpsilon = 1e-9;

/// Flow-magnitude guard, pixels, for angle computations and ratio masks.
inline constexpr double kFlowEpsilon = 1e-6;

/// Dense per-pixel depth in scene units. Every value is positive and finite;
/// invalid depth is not representable here by design.
struct DepthMap {
  Grid<double> values;
  CameraIntrinsics intrinsics;

  DepthMap() = default;
  DepthMap(Grid<double> values_, const CameraIntrinsics& intrinsics_)
      : values(std::move(values_)), intrinsics(intrinsics_) {
    validate();
  }

  int width() const { return values.width(); }
  int height() const { return values.height(); }

  void validate() const {
    intrinsics.validate();
    if (!values.same_size(intrinsics.width, intrinsics.height))
      throw std::invalid_argument("DepthMap: grid does not match intrinsics");
    for (int y = 0; y < values.height(); ++y)
      for (int x = 0; x < values.width(); ++x) {
        const double z = values(x, y);
        if (!(z > 0.0) || !std::isfinite(z))
          throw std::invalid_argument("DepthMap: depths must be positive and finite");
      }
  }
};

enum class FlowKind {
  rigid,
  optical,
  rotational,
  tangential,
  radial,
  coplanar,
  coaxial,
};

inline const char* to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::rigid: return "rigid";
    case FlowKind::optical: return "optical";
    case FlowKind::rotational: return "rotational";
    case FlowKind::tangential: return "tangential";
    case FlowKind::radial: return "radial";
    case FlowKind::coplanar: return "coplanar";
    case FlowKind::coaxial: return "coaxial";
  }
  return "unknown";
}

/// Dense 2D displacement field in pixels with a validity mask. Vectors at
/// invalid pixels carry no meaning.
struct FlowField {
  Grid<Eigen::Vector2d> vectors;
  FlowKind kind = FlowKind::optical;
  Mask valid;

  FlowField() = default;
  FlowField(int width, int height, FlowKind kind_)
      : vectors(width, height, Eigen::Vector2d::Zero()),
        kind(kind_),
        valid(width, height, 1) {}

  int width() const { return vectors.width(); }
  int height() const { return vectors.height(); }
};

/// Analytic partials of the translational flow with respect to depth and the
/// three translation components.
struct FlowJacobian {
  Grid<Eigen::Vector2d> d_z;
  Grid<Eigen::Vector2d> d_tx;
  Grid<Eigen::Vector2d> d_ty;
  Grid<Eigen::Vector2d> d_tz;
  Mask valid;

  FlowJacobian() = default;
  FlowJacobian(int width, int height)
      : d_z(width, height, Eigen::Vector2d::Zero()),
        d_tx(width, height, Eigen::Vector2d::Zero()),
        d_ty(width, height, Eigen::Vector2d::Zero()),
        d_tz(width, height, Eigen::Vector2d::Zero()),
        valid(width, height, 1) {}
};

}  // namespace flowfactor
