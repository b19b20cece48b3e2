#pragma once

#include <Eigen/Core>

#include "flowfactor/detail/parallel.hpp"
#include "flowfactor/fields.hpp"
#include "flowfactor/motion.hpp"

namespace flowfactor {

/// Dense correspondences between a target and a source view under the static
/// scene hypothesis: the target->source optical flow, both depth maps, and a
/// validity mask covering static, in-bounds, non-occluded pixels.
struct CorrespondenceSet {
  FlowField flow_ts;  ///< target -> source, kind optical
  DepthMap depth_t;
  DepthMap depth_s;
  Mask valid;

  int width() const { return depth_t.width(); }
  int height() const { return depth_t.height(); }

  void validate() const {
    depth_t.validate();
    depth_s.validate();
    if (!flow_ts.vectors.same_size(depth_t.values) ||
        !valid.same_size(depth_t.values))
      throw std::invalid_argument("CorrespondenceSet: grid size mismatch");
    if (!mask_subset_of(valid, flow_ts.valid))
      throw std::invalid_argument(
          "CorrespondenceSet: valid mask must be a subset of the flow mask");
  }
};

/// Depth samples gathered in the target view, with per-pixel validity.
struct WarpedDepth {
  Grid<double> values;
  Mask valid;
};

/// Tolerance for in-bounds tests on continuous pixel coordinates; absorbs
/// roundoff at the exact image border.
inline constexpr double kBoundsEpsilon = 1e-9;

/// Bilinear sample of `grid` at continuous coordinates; `ok` is cleared when
/// the sample point leaves the grid.
inline double bilinear_sample(const Grid<double>& grid, double u, double v,
                              bool& ok) {
  if (!(u >= -kBoundsEpsilon) || !(v >= -kBoundsEpsilon) ||
      !(u <= grid.width() - 1.0 + kBoundsEpsilon) ||
      !(v <= grid.height() - 1.0 + kBoundsEpsilon)) {
    ok = false;
    return 0.0;
  }
  ok = true;
  u = std::clamp(u, 0.0, grid.width() - 1.0);
  v = std::clamp(v, 0.0, grid.height() - 1.0);
  int x0 = static_cast<int>(std::floor(u));
  int y0 = static_cast<int>(std::floor(v));
  if (x0 == grid.width() - 1) --x0;   // keep the 2x2 stencil in bounds
  if (y0 == grid.height() - 1) --y0;
  const double wx = u - x0;
  const double wy = v - y0;
  const double a = grid(x0, y0) * (1.0 - wx) + grid(x0 + 1, y0) * wx;
  const double b = grid(x0, y0 + 1) * (1.0 - wx) + grid(x0 + 1, y0 + 1) * wx;
  return a * (1.0 - wy) + b * wy;
}

/// Pixel-aligned source depth: D_{s->t}(p_t) = D_s(p_t + flow(p_t)), sampled
/// bilinearly. Out-of-bounds samples and invalid flow pixels are invalidated.
inline WarpedDepth warp_depth(const DepthMap& depth_s,
                              const FlowField& flow_ts) {
  depth_s.validate();
  if (!flow_ts.vectors.same_size(depth_s.values))
    throw std::invalid_argument("warp_depth: size mismatch");
  WarpedDepth out;
  out.values = Grid<double>(depth_s.width(), depth_s.height(), 1.0);
  out.valid = Mask(depth_s.width(), depth_s.height(), 0);
  parallel_rows(depth_s.height(), [&](int y) {
    for (int x = 0; x < depth_s.width(); ++x) {
      if (!flow_ts.valid(x, y)) continue;
      const Eigen::Vector2d p_s =
          Eigen::Vector2d(x, y) + flow_ts.vectors(x, y);
      bool ok = false;
      const double z = bilinear_sample(depth_s.values, p_s.x(), p_s.y(), ok);
      if (ok && z > kDepthEpsilon) {
        out.values(x, y) = z;
        out.valid(x, y) = 1;
      }
    }
  });
  return out;
}

/// 3D camera coordinates of the source correspondences, one per target pixel.
struct Backprojection {
  Grid<Eigen::Vector3d> points;
  Mask valid;
};

/// p^C_s = D_{s->t}(p_t) * K^-1 * p_s~ with p_s = p_t + flow(p_t).
inline Backprojection backproject_source(const CorrespondenceSet& corr) {
  corr.validate();
  const CameraIntrinsics& intr = corr.depth_t.intrinsics;
  const WarpedDepth warped = warp_depth(corr.depth_s, corr.flow_ts);
  Backprojection out;
  out.points = Grid<Eigen::Vector3d>(corr.width(), corr.height(),
                                     Eigen::Vector3d::Zero());
  out.valid = mask_and(corr.valid, warped.valid);
  parallel_rows(corr.height(), [&](int y) {
    for (int x = 0; x < corr.width(); ++x) {
      if (!out.valid(x, y)) continue;
      const Eigen::Vector2d p_s =
          Eigen::Vector2d(x, y) + corr.flow_ts.vectors(x, y);
      out.points(x, y) = warped.values(x, y) * intr.ray(p_s.x(), p_s.y());
    }
  });
  return out;
}

/// Optical flows after the imaging-plane and optical-axis alignments.
struct AlignedFlows {
  FlowField coplanar;  ///< radial component removed; expected tangential
  FlowField coaxial;   ///< tangential component removed; expected radial
};

/// Transforms the backprojected correspondences through both alignment
/// processes:
///
///   f_pla = K(R^-1 p^C_s - t_rad) / (i3 . (R^-1 p^C_s - t_rad)) - p_t
///   f_axi = K(R^-1 p^C_s - t_tan) / (i3 . (R^-1 p^C_s - t_tan)) - p_t
///
/// Pixels with a nonpositive depth after either transform are invalidated.
inline AlignedFlows aligned_flows(const CorrespondenceSet& corr,
                                  const MotionComponents& est) {
  est.rot.require_valid();
  const CameraIntrinsics& intr = corr.depth_t.intrinsics;
  const Backprojection back = backproject_source(corr);
  const Eigen::Matrix3d r_inv = est.rot.rotation.transpose();
  const Eigen::Vector3d t_rad = est.rad.translation;
  const Eigen::Vector3d t_tan = est.tan.translation;

  AlignedFlows out;
  out.coplanar = FlowField(corr.width(), corr.height(), FlowKind::coplanar);
  out.coaxial = FlowField(corr.width(), corr.height(), FlowKind::coaxial);
  parallel_rows(corr.height(), [&](int y) {
    for (int x = 0; x < corr.width(); ++x) {
      if (!back.valid(x, y)) {
        out.coplanar.valid(x, y) = 0;
        out.coaxial.valid(x, y) = 0;
        continue;
      }
      const Eigen::Vector3d rotated = r_inv * back.points(x, y);
      const Eigen::Vector2d p_t(x, y);

      const Eigen::Vector3d pla = rotated - t_rad;
      if (pla.z() > kDepthEpsilon)
        out.coplanar.vectors(x, y) = intr.project(pla) - p_t;
      else
        out.coplanar.valid(x, y) = 0;

      const Eigen::Vector3d axi = rotated - t_tan;
      if (axi.z() > kDepthEpsilon)
        out.coaxial.vectors(x, y) = intr.project(axi) - p_t;
      else
        out.coaxial.valid(x, y) = 0;
    }
  });
  return out;
}

/// Forward-backward consistency mask: a pixel survives when following the
/// forward flow and then the backward flow returns to within `threshold_px`
/// of the start. Used as the geometric stand-in for a dynamic-object mask.
inline Mask flow_consistency_mask(const FlowField& flow_ts,
                                  const FlowField& flow_st,
                                  double threshold_px = 1.0) {
  if (!flow_ts.vectors.same_size(flow_st.vectors))
    throw std::invalid_argument("flow_consistency_mask: size mismatch");
  Mask mask(flow_ts.width(), flow_ts.height(), 0);
  Grid<double> back_u(flow_st.width(), flow_st.height(), 0.0);
  Grid<double> back_v(flow_st.width(), flow_st.height(), 0.0);
  for (int y = 0; y < flow_st.height(); ++y)
    for (int x = 0; x < flow_st.width(); ++x) {
      back_u(x, y) = flow_st.vectors(x, y).x();
      back_v(x, y) = flow_st.vectors(x, y).y();
    }
  parallel_rows(flow_ts.height(), [&](int y) {
    for (int x = 0; x < flow_ts.width(); ++x) {
      if (!flow_ts.valid(x, y)) continue;
      const Eigen::Vector2d p_s =
          Eigen::Vector2d(x, y) + flow_ts.vectors(x, y);
      bool ok_u = false, ok_v = false;
      const double bu = bilinear_sample(back_u, p_s.x(), p_s.y(), ok_u);
      const double bv = bilinear_sample(back_v, p_s.x(), p_s.y(), ok_v);
      if (!ok_u || !ok_v) continue;
      const Eigen::Vector2d round_trip =
          p_s + Eigen::Vector2d(bu, bv) - Eigen::Vector2d(x, y);
      if (round_trip.norm() <= threshold_px) mask(x, y) = 1;
    }
  });
  return mask;
}

}  // namespace flowfactor
