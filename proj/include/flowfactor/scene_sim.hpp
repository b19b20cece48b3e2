#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "flowfactor/alignment.hpp"
#include "flowfactor/camera.hpp"
#include "flowfactor/detail/parallel.hpp"
#include "flowfactor/detail/rng.hpp"
#include "flowfactor/fields.hpp"
#include "flowfactor/trajectory.hpp"

namespace flowfactor {

enum class SceneKind { constant_plane, sloped_plane, smooth_random };

struct SceneSpec {
  SceneKind kind = SceneKind::constant_plane;
  double depth_min = 1.0;
  double depth_max = 1.0;
  int width = 0;
  int height = 0;
  CameraIntrinsics intrinsics;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(depth_min > 0.0) || !(depth_min <= depth_max))
      throw std::invalid_argument("SceneSpec: need 0 < depth_min <= depth_max");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("SceneSpec: resolution must be positive");
    intrinsics.validate();
    if (intrinsics.width != width || intrinsics.height != height)
      throw std::invalid_argument("SceneSpec: resolution and intrinsics disagree");
  }
};

inline SceneSpec make_scene_spec(SceneKind kind, double depth_min,
                                 double depth_max, int width, int height,
                                 std::uint64_t seed) {
  SceneSpec spec;
  spec.kind = kind;
  spec.depth_min = depth_min;
  spec.depth_max = depth_max;
  spec.width = width;
  spec.height = height;
  spec.intrinsics = default_intrinsics(width, height);
  spec.seed = seed;
  spec.validate();
  return spec;
}

enum class MotionKind { pure_rotation, pure_tangential, pure_radial, mixed };

/// Inclusive sampling interval for one motion component.
struct ComponentRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct MotionSpec {
  MotionKind kind = MotionKind::mixed;
  ComponentRange rotation_angle;        ///< radians; axis drawn uniformly
  ComponentRange tangential_magnitude;  ///< scene units; direction uniform in xy
  ComponentRange radial;                ///< signed t_z, scene units
  std::uint64_t seed = 0;
};

/// Draws one motion honouring the kind's zero pattern exactly: suppressed
/// components are written as literal zeros, never as small residuals.
inline SE3Pose sample_motion(const MotionSpec& spec, Rng& rng) {
  SE3Pose pose;
  const bool want_rotation = spec.kind == MotionKind::pure_rotation ||
                             spec.kind == MotionKind::mixed;
  const bool want_tangential = spec.kind == MotionKind::pure_tangential ||
                               spec.kind == MotionKind::mixed;
  const bool want_radial =
      spec.kind == MotionKind::pure_radial || spec.kind == MotionKind::mixed;
  if (want_rotation) {
    const Eigen::Vector3d axis = rng.unit_vector3();
    const double angle =
        rng.uniform(spec.rotation_angle.lo, spec.rotation_angle.hi);
    pose.rotation = rotation_from_axis_angle(axis, angle);
  }
  if (want_tangential) {
    const double mag = rng.uniform(spec.tangential_magnitude.lo,
                                   spec.tangential_magnitude.hi);
    const double dir = rng.uniform(0.0, 2.0 * M_PI);
    pose.translation.x() = mag * std::cos(dir);
    pose.translation.y() = mag * std::sin(dir);
  }
  if (want_radial)
    pose.translation.z() = rng.uniform(spec.radial.lo, spec.radial.hi);
  return pose;
}

inline SE3Pose sample_motion(const MotionSpec& spec) {
  Rng rng(spec.seed);
  return sample_motion(spec, rng);
}

namespace detail {

/// Uniform cubic B-spline weights; nonnegative and summing to one, so the
/// upsampled field never leaves the lattice value range.
inline void bspline_weights(double t, double w[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

/// Catmull-Rom weights; interpolates the samples and reproduces quadratic
/// (hence affine) fields exactly.
inline void catmull_rom_weights(double t, double w[4]) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
  w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

}  // namespace detail

/// Continuous scene surface anchored in one camera frame: depth as a graph
/// z = f(u, v) over that frame's pixel plane, built from a depth map by
/// Catmull-Rom interpolation with linear extrapolation beyond the borders.
/// Constant and affine maps are detected and intersected in closed form;
/// everything else is ray-marched and bisected.
class SceneSurface {
 public:
  explicit SceneSurface(const DepthMap& map)
      : values_(map.values), intr_(map.intrinsics) {
    z_min_ = z_max_ = values_(0, 0);
    for (int y = 0; y < values_.height(); ++y)
      for (int x = 0; x < values_.width(); ++x) {
        z_min_ = std::min(z_min_, values_(x, y));
        z_max_ = std::max(z_max_, values_(x, y));
      }
    classify();
  }

  const CameraIntrinsics& intrinsics() const { return intr_; }

  /// Surface height (anchor-frame depth) at continuous pixel coordinates.
  double height(double u, double v) const {
    if (kind_ == Kind::constant) return constant_;
    if (kind_ == Kind::affine)
      return affine_a_ + affine_b_ * (u - intr_.u0) + affine_c_ * (v - intr_.v0);
    const int iu = static_cast<int>(std::floor(u));
    const int iv = static_cast<int>(std::floor(v));
    double wu[4], wv[4];
    detail::catmull_rom_weights(u - iu, wu);
    detail::catmull_rom_weights(v - iv, wv);
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
      double row = 0.0;
      for (int i = 0; i < 4; ++i)
        row += wu[i] * lattice(iu - 1 + i, iv - 1 + j);
      acc += wv[j] * row;
    }
    return acc;
  }

  /// Nearest intersection of the camera ray p(lambda) = lambda*a - b
  /// (anchor-frame coordinates, lambda = depth in the camera's own frame).
  /// Returns false when the ray misses the surface.
  bool raycast(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
               double& lambda_hit) const {
    if (!(a.z() > 1e-12)) return false;
    if (kind_ == Kind::constant) {
      const double lambda = (constant_ + b.z()) / a.z();
      if (!(lambda > kDepthEpsilon)) return false;
      lambda_hit = lambda;
      return true;
    }
    if (kind_ == Kind::affine) return raycast_affine(a, b, lambda_hit);
    return raycast_march(a, b, lambda_hit);
  }

 private:
  enum class Kind { constant, affine, sampled };

  void classify() {
    const double scale = std::max(1.0, std::abs(z_max_));
    if (z_max_ - z_min_ <= 1e-12 * scale) {
      kind_ = Kind::constant;
      constant_ = values_(0, 0);
      return;
    }
    if (values_.width() >= 2 && values_.height() >= 2) {
      const double b = values_(1, 0) - values_(0, 0);
      const double c = values_(0, 1) - values_(0, 0);
      const double a = values_(0, 0) + b * intr_.u0 + c * intr_.v0;
      bool affine = true;
      for (int y = 0; y < values_.height() && affine; ++y)
        for (int x = 0; x < values_.width() && affine; ++x) {
          const double pred = a + b * (x - intr_.u0) + c * (y - intr_.v0);
          if (std::abs(pred - values_(x, y)) > 1e-9 * scale) affine = false;
        }
      if (affine) {
        kind_ = Kind::affine;
        affine_a_ = a;
        affine_b_ = b;
        affine_c_ = c;
        return;
      }
    }
    kind_ = Kind::sampled;
  }

  /// Lattice access with arithmetic mirroring: linear extrapolation past the
  /// borders, exact for affine fields within one image span.
  double lattice(int ix, int iy) const {
    const int w = values_.width();
    const int h = values_.height();
    if (ix < 0) return 2.0 * lattice(0, iy) - lattice(std::min(-ix, w - 1), iy);
    if (ix > w - 1)
      return 2.0 * lattice(w - 1, iy) -
             lattice(std::max(2 * (w - 1) - ix, 0), iy);
    if (iy < 0) return 2.0 * lattice(ix, 0) - lattice(ix, std::min(-iy, h - 1));
    if (iy > h - 1)
      return 2.0 * lattice(ix, h - 1) -
             lattice(ix, std::max(2 * (h - 1) - iy, 0));
    return values_(ix, iy);
  }

  // The affine graph z = a + b(u-u0) + c(v-v0) in pixel coordinates is the
  // 3D quadric z^2 = a z + b fu x + c fv y. A ray can pierce the extended
  // graph twice; only intersections inside the scene's depth window count,
  // mirroring the marched path.
  bool raycast_affine(const Eigen::Vector3d& a_dir, const Eigen::Vector3d& b_off,
                      double& lambda_hit) const {
    const double bf = affine_b_ * intr_.fu;
    const double cf = affine_c_ * intr_.fv;
    const double q2 = a_dir.z() * a_dir.z();
    const double q1 = -2.0 * a_dir.z() * b_off.z() - affine_a_ * a_dir.z() -
                      bf * a_dir.x() - cf * a_dir.y();
    const double q0 = b_off.z() * b_off.z() + affine_a_ * b_off.z() +
                      bf * b_off.x() + cf * b_off.y();
    const double disc = q1 * q1 - 4.0 * q2 * q0;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    const double margin = 0.5 * (z_max_ - z_min_) + 1e-6;
    bool found = false;
    for (const double lambda : {(-q1 - sq) / (2.0 * q2), (-q1 + sq) / (2.0 * q2)}) {
      if (!(lambda > kDepthEpsilon)) continue;
      const Eigen::Vector3d p = lambda * a_dir - b_off;
      if (!(p.z() > z_min_ - margin) || !(p.z() < z_max_ + margin)) continue;
      if (!found || lambda < lambda_hit) {
        lambda_hit = lambda;
        found = true;
      }
    }
    return found;
  }

  bool raycast_march(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     double& lambda_hit) const {
    // Catmull-Rom can overshoot the sample range; widen the search window.
    const double margin = 0.6 * (z_max_ - z_min_) + 1e-9;
    const double z_lo = std::max(1e-6, z_min_ - margin);
    const double z_hi = z_max_ + margin;
    double lo = (z_lo + b.z()) / a.z();
    const double hi = (z_hi + b.z()) / a.z();
    lo = std::max(lo, 1e-12);
    if (!(hi > lo)) return false;

    auto g = [&](double lambda) {
      const Eigen::Vector3d p = lambda * a - b;
      const double u = intr_.u0 + intr_.fu * p.x() / p.z();
      const double v = intr_.v0 + intr_.fv * p.y() / p.z();
      return p.z() - height(u, v);
    };

    constexpr int kMarchSteps = 192;
    double prev_lambda = lo;
    double prev_g = g(lo);
    if (prev_g >= 0.0) {
      lambda_hit = lo;
      return true;  // already at the surface within the window floor
    }
    const double step = (hi - lo) / kMarchSteps;
    for (int i = 1; i <= kMarchSteps; ++i) {
      const double lambda = lo + i * step;
      const double cur_g = g(lambda);
      if (cur_g >= 0.0) {
        double left = prev_lambda, right = lambda;
        for (int it = 0; it < 64; ++it) {
          const double mid = 0.5 * (left + right);
          if (g(mid) >= 0.0)
            right = mid;
          else
            left = mid;
        }
        lambda_hit = 0.5 * (left + right);
        return true;
      }
      prev_lambda = lambda;
      prev_g = cur_g;
    }
    return false;
  }

  Grid<double> values_;
  CameraIntrinsics intr_;
  double z_min_ = 0.0, z_max_ = 0.0;
  Kind kind_ = Kind::sampled;
  double constant_ = 0.0;
  double affine_a_ = 0.0, affine_b_ = 0.0, affine_c_ = 0.0;
};

/// Deterministic synthetic depth map for a scene spec. Equal seeds give
/// bit-identical maps.
inline DepthMap generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Grid<double> values(spec.width, spec.height, spec.depth_min);
  const CameraIntrinsics& intr = spec.intrinsics;
  switch (spec.kind) {
    case SceneKind::constant_plane: {
      const double z = (spec.depth_max > spec.depth_min)
                           ? rng.uniform(spec.depth_min, spec.depth_max)
                           : spec.depth_min;
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) values(x, y) = z;
      break;
    }
    case SceneKind::sloped_plane: {
      const double center = 0.5 * (spec.depth_min + spec.depth_max);
      const double swing = 0.45 * (spec.depth_max - spec.depth_min);
      const double du_max = std::max(intr.u0, spec.width - 1 - intr.u0);
      const double dv_max = std::max(intr.v0, spec.height - 1 - intr.v0);
      const double span = du_max + dv_max;
      const double s_max = (span > 0.0) ? swing / span : 0.0;
      const double b = rng.uniform(-s_max, s_max);
      const double c = rng.uniform(-s_max, s_max);
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
          values(x, y) = center + b * (x - intr.u0) + c * (y - intr.v0);
      break;
    }
    case SceneKind::smooth_random: {
      // Value noise on a coarse lattice, upsampled with a cubic B-spline.
      // The spline is a convex combination of lattice values, so the map
      // stays inside [depth_min, depth_max] by construction.
      const int cell = 16;
      const int nu = (spec.width - 1) / cell + 4;
      const int nv = (spec.height - 1) / cell + 4;
      Grid<double> lattice(nu, nv, 0.0);
      for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nu; ++i)
          lattice(i, j) = rng.uniform(spec.depth_min, spec.depth_max);
      auto lat = [&](int i, int j) {
        return lattice(std::clamp(i, 0, nu - 1), std::clamp(j, 0, nv - 1));
      };
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
          const double su = static_cast<double>(x) / cell;
          const double sv = static_cast<double>(y) / cell;
          const int iu = static_cast<int>(std::floor(su));
          const int iv = static_cast<int>(std::floor(sv));
          double wu[4], wv[4];
          detail::bspline_weights(su - iu, wu);
          detail::bspline_weights(sv - iv, wv);
          double acc = 0.0;
          for (int j = 0; j < 4; ++j) {
            double row = 0.0;
            for (int i = 0; i < 4; ++i) row += wu[i] * lat(iu + i, iv + j);
            acc += wv[j] * row;
          }
          values(x, y) = acc;
        }
      break;
    }
  }
  return DepthMap(std::move(values), intr);
}

struct PairOptions {
  double noise_sigma = 0.0;       ///< isotropic flow noise, pixels
  std::uint64_t noise_seed = 0;
  double min_visibility = 0.5;    ///< required valid-pixel fraction
  double occlusion_tolerance = 1e-6;  ///< z-buffer tie tolerance, scene units
};

namespace detail {

/// Pair construction over an anchored surface viewed from two cameras.
/// `cam_t` and `cam_s` map anchor-frame coordinates into each camera frame.
/// The optical flow is produced by an explicit per-pixel projection,
/// deliberately separate from flow_synthesis, so tests can compare the two.
inline CorrespondenceSet make_pair(const SceneSurface& surface,
                                   const SE3Pose& cam_t, const SE3Pose& cam_s,
                                   const PairOptions& opt) {
  const CameraIntrinsics& intr = surface.intrinsics();
  const int w = intr.width;
  const int h = intr.height;
  const SE3Pose motion = cam_s * cam_t.inverse();  // target coords -> source
  const Eigen::Matrix3d r = motion.rotation;
  const Eigen::Vector3d t = motion.translation;

  // Render both views from the shared surface.
  auto render = [&](const SE3Pose& cam, Grid<double>& depth, Mask& ok) {
    depth = Grid<double>(w, h, 1.0);
    ok = Mask(w, h, 0);
    const Eigen::Matrix3d rt = cam.rotation.transpose();
    const Eigen::Vector3d b = rt * cam.translation;
    parallel_rows(h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector3d a = rt * intr.ray(x, y);
        double lambda = 0.0;
        if (surface.raycast(a, b, lambda)) {
          depth(x, y) = lambda;
          ok(x, y) = 1;
        }
      }
    });
  };

  Grid<double> depth_t_values, depth_s_values;
  Mask ok_t, ok_s;
  render(cam_t, depth_t_values, ok_t);
  render(cam_s, depth_s_values, ok_s);

  CorrespondenceSet corr;
  corr.flow_ts = FlowField(w, h, FlowKind::optical);
  corr.valid = Mask(w, h, 0);

  const Eigen::Matrix3d rs_t = cam_s.rotation.transpose();
  const Eigen::Vector3d bs = rs_t * cam_s.translation;

  parallel_rows(h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      if (!ok_t(x, y)) {
        corr.flow_ts.valid(x, y) = 0;
        continue;
      }
      const double z_t = depth_t_values(x, y);
      // Independent projection: backproject, transform, reproject.
      const double xc = z_t * (x - intr.u0) / intr.fu;
      const double yc = z_t * (y - intr.v0) / intr.fv;
      const double xs = r(0, 0) * xc + r(0, 1) * yc + r(0, 2) * z_t + t.x();
      const double ys = r(1, 0) * xc + r(1, 1) * yc + r(1, 2) * z_t + t.y();
      const double zs = r(2, 0) * xc + r(2, 1) * yc + r(2, 2) * z_t + t.z();
      if (!(zs > kDepthEpsilon)) {
        corr.flow_ts.valid(x, y) = 0;
        continue;
      }
      const double us = intr.fu * xs / zs + intr.u0;
      const double vs = intr.fv * ys / zs + intr.v0;
      corr.flow_ts.vectors(x, y) = Eigen::Vector2d(us - x, vs - y);

      // Frustum check plus rendered-source sanity for the bilinear stencil.
      if (!(us >= -kBoundsEpsilon) || !(us <= w - 1.0 + kBoundsEpsilon) ||
          !(vs >= -kBoundsEpsilon) || !(vs <= h - 1.0 + kBoundsEpsilon))
        continue;
      int x0 = static_cast<int>(std::floor(std::clamp(us, 0.0, w - 1.0)));
      int y0 = static_cast<int>(std::floor(std::clamp(vs, 0.0, h - 1.0)));
      if (x0 == w - 1) --x0;
      if (y0 == h - 1) --y0;
      if (!ok_s(x0, y0) || !ok_s(x0 + 1, y0) || !ok_s(x0, y0 + 1) ||
          !ok_s(x0 + 1, y0 + 1))
        continue;

      // Occlusion: the source must see this very surface point, not a
      // nearer one along the same ray.
      const Eigen::Vector3d a_src = rs_t * intr.ray(us, vs);
      double lambda_near = 0.0;
      if (!surface.raycast(a_src, bs, lambda_near)) continue;
      if (lambda_near < zs - opt.occlusion_tolerance) continue;

      corr.valid(x, y) = 1;
    }
  });

  const double visibility =
      static_cast<double>(count_valid(corr.valid)) /
      (static_cast<double>(w) * h);
  if (visibility < opt.min_visibility)
    throw std::runtime_error("generate_pair: degenerate motion, visibility " +
                             std::to_string(visibility));

  if (opt.noise_sigma > 0.0) {
    Rng noise(opt.noise_seed);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (corr.valid(x, y))
          corr.flow_ts.vectors(x, y) +=
              opt.noise_sigma * Eigen::Vector2d(noise.normal(), noise.normal());
  }

  corr.depth_t = DepthMap(std::move(depth_t_values), intr);
  corr.depth_s = DepthMap(std::move(depth_s_values), intr);
  return corr;
}

}  // namespace detail

/// Builds the correspondence set of one camera motion over a static scene.
/// The scene map anchors the surface in the target frame; `motion` maps
/// target-frame coordinates to source-frame coordinates.
inline CorrespondenceSet generate_pair(const DepthMap& scene,
                                       const SE3Pose& motion,
                                       const PairOptions& opt = {}) {
  scene.validate();
  motion.require_valid();
  const SceneSurface surface(scene);
  return detail::make_pair(surface, SE3Pose::identity(), motion, opt);
}

/// A simulated multi-frame run: absolute poses plus one correspondence set
/// per step (target = later frame, source = earlier frame).
struct SimulatedTrajectory {
  Trajectory trajectory;               ///< camera-to-world, n_frames poses
  std::vector<SE3Pose> step_motions;   ///< per-step target->source motions
  std::vector<CorrespondenceSet> steps;
};

/// n_frames poses with per-step motions drawn from `motion_spec`; absolute
/// poses are the cumulative products of the steps. Deterministic per seeds.
inline SimulatedTrajectory generate_trajectory(const SceneSpec& scene_spec,
                                               int n_frames,
                                               const MotionSpec& motion_spec,
                                               const PairOptions& opt = {}) {
  if (n_frames < 2)
    throw std::invalid_argument("generate_trajectory: need at least 2 frames");
  const DepthMap base = generate_scene(scene_spec);
  const SceneSurface surface(base);

  SimulatedTrajectory out;
  out.trajectory.poses.push_back(SE3Pose::identity());
  Rng rng(motion_spec.seed);
  for (int k = 0; k + 1 < n_frames; ++k) {
    const SE3Pose step = sample_motion(motion_spec, rng);
    out.step_motions.push_back(step);
    out.trajectory.poses.push_back(out.trajectory.poses.back() * step);
  }
  for (int k = 0; k + 1 < n_frames; ++k) {
    const SE3Pose cam_t = out.trajectory.poses[k + 1].inverse();
    const SE3Pose cam_s = out.trajectory.poses[k].inverse();
    PairOptions step_opt = opt;
    step_opt.noise_seed = opt.noise_seed + static_cast<std::uint64_t>(k);
    out.steps.push_back(detail::make_pair(surface, cam_t, cam_s, step_opt));
  }
  return out;
}

}  // namespace flowfactor
