#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "flowfactor/alignment.hpp"
#include "flowfactor/detail/stats.hpp"
#include "flowfactor/losses.hpp"

namespace flowfactor {

enum class GradientMode { finite_difference, analytic_translational };

struct RefineConfig {
  int max_iters = 100;
  double step_rotation = 1e-3;    ///< initial rotation step, radians
  double step_translation = 0.0;  ///< 0: auto = 1e-3 * |t_init|, floor 1e-4
  GradientMode gradient_mode = GradientMode::finite_difference;
  double convergence_tol = 1e-10;       ///< stop when an iteration improves less
  double line_search_shrink = 0.5;      ///< in (0, 1)
  double stuck_objective = 1e-6;        ///< no-descent below this counts as converged
  bool refine_rotation = true;
  bool refine_tangential = true;
  bool refine_radial = true;

  void validate() const {
    if (max_iters <= 0)
      throw std::invalid_argument("RefineConfig: max_iters must be positive");
    if (!(step_rotation > 0.0) || step_translation < 0.0)
      throw std::invalid_argument("RefineConfig: steps must be positive");
    if (!(convergence_tol > 0.0))
      throw std::invalid_argument("RefineConfig: convergence_tol must be positive");
    if (!(line_search_shrink > 0.0) || !(line_search_shrink < 1.0))
      throw std::invalid_argument("RefineConfig: shrink must be in (0, 1)");
  }
};

struct RefineIterate {
  int iter = 0;
  double loss_pla = 0.0;
  double loss_axi = 0.0;
  double objective = 0.0;
  SE3Pose pose;
};

struct RefineTrace {
  std::vector<RefineIterate> iterations;
  SE3Pose final_pose;
  bool converged = false;
};

namespace detail {

/// The refinement objective L_pla + L_axi over cached correspondences. The
/// backprojected points are rotated once per rotation update, after which
/// translation-only evaluations are cheap.
class AlignmentObjective {
 public:
  AlignmentObjective(const CorrespondenceSet& corr)
      : intr_(corr.depth_t.intrinsics) {
    const Backprojection back = backproject_source(corr);
    for (int y = 0; y < corr.height(); ++y)
      for (int x = 0; x < corr.width(); ++x) {
        if (!back.valid(x, y)) continue;
        points_.push_back(back.points(x, y));
        pixels_.emplace_back(x, y);
      }
    if (points_.empty())
      throw std::runtime_error("refine objective: no valid correspondences");
    rotated_.resize(points_.size());
    set_rotation(Eigen::Matrix3d::Identity());
  }

  std::size_t pixel_count() const { return points_.size(); }

  void set_rotation(const Eigen::Matrix3d& rotation) {
    const Eigen::Matrix3d r_inv = rotation.transpose();
    for (std::size_t i = 0; i < points_.size(); ++i)
      rotated_[i] = r_inv * points_[i];
  }

  struct Value {
    double pla = std::numeric_limits<double>::infinity();
    double axi = std::numeric_limits<double>::infinity();
    double objective = std::numeric_limits<double>::infinity();
    bool defined = false;
  };

  /// Evaluates both losses for the current rotation and the given
  /// translation. Undefined losses (too few usable pixels) yield an
  /// infinite objective instead of an error.
  Value evaluate(const Eigen::Vector3d& t) const {
    RunningStats pla, axi;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Eigen::Vector3d& q = rotated_[i];
      const double px = pixels_[i].x();
      const double py = pixels_[i].y();

      // coplanar: q - (0,0,tz); coaxial: q - (tx,ty,0)
      const double zc = q.z() - t.z();
      if (zc > kDepthEpsilon) {
        const double fu = intr_.fu * q.x() / zc + intr_.u0 - px;
        const double fv = intr_.fv * q.y() / zc + intr_.v0 - py;
        const double n = std::sqrt(fu * fu + fv * fv);
        if (n >= kFlowEpsilon)
          pla.add(std::acos(std::clamp(fu / n, -1.0, 1.0)));
      }
      const double za = q.z();
      if (za > kDepthEpsilon) {
        const double fu = intr_.fu * (q.x() - t.x()) / za + intr_.u0 - px;
        const double fv = intr_.fv * (q.y() - t.y()) / za + intr_.v0 - py;
        const double du = px - intr_.u0;
        const double dv = py - intr_.v0;
        const double nf = std::sqrt(fu * fu + fv * fv);
        const double nd = std::sqrt(du * du + dv * dv);
        if (nf >= kFlowEpsilon && nd >= kFlowEpsilon)
          axi.add(std::acos(std::clamp((fu * du + fv * dv) / (nf * nd), -1.0, 1.0)));
      }
    }
    Value value;
    if (pla.count() < 2 || axi.count() < 1) return value;
    value.pla = pla.variance();
    value.axi = axi.mean();
    value.objective = value.pla + value.axi;
    value.defined = true;
    return value;
  }

  /// Stacked alignment residuals at the current rotation: one coplanar slot
  /// (theta_i - theta_mean)/sqrt(N) and one coaxial slot phi_j/sqrt(M) per
  /// cached pixel, NaN where a pixel is unusable. The squared norm is
  /// L_pla + E[phi^2], an L2 surrogate of the objective that vanishes with it.
  void residuals(const Eigen::Vector3d& t, std::vector<double>& out) const {
    const std::size_t n = points_.size();
    out.assign(2 * n, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> thetas(n, std::numeric_limits<double>::quiet_NaN());
    RunningStats pla;
    long axi_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d& q = rotated_[i];
      const double px = pixels_[i].x();
      const double py = pixels_[i].y();
      const double zc = q.z() - t.z();
      if (zc > kDepthEpsilon) {
        const double fu = intr_.fu * q.x() / zc + intr_.u0 - px;
        const double fv = intr_.fv * q.y() / zc + intr_.v0 - py;
        const double nrm = std::sqrt(fu * fu + fv * fv);
        if (nrm >= kFlowEpsilon) {
          thetas[i] = std::acos(std::clamp(fu / nrm, -1.0, 1.0));
          pla.add(thetas[i]);
        }
      }
      const double za = q.z();
      if (za > kDepthEpsilon) {
        const double fu = intr_.fu * (q.x() - t.x()) / za + intr_.u0 - px;
        const double fv = intr_.fv * (q.y() - t.y()) / za + intr_.v0 - py;
        const double du = px - intr_.u0;
        const double dv = py - intr_.v0;
        const double nf = std::sqrt(fu * fu + fv * fv);
        const double nd = std::sqrt(du * du + dv * dv);
        if (nf >= kFlowEpsilon && nd >= kFlowEpsilon) {
          out[2 * i + 1] =
              std::acos(std::clamp((fu * du + fv * dv) / (nf * nd), -1.0, 1.0));
          ++axi_count;
        }
      }
    }
    if (pla.count() >= 2) {
      const double mean = pla.mean();
      const double scale = 1.0 / std::sqrt(static_cast<double>(pla.count()));
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isnan(thetas[i])) out[2 * i] = (thetas[i] - mean) * scale;
    }
    if (axi_count > 0) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(axi_count));
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isnan(out[2 * i + 1])) out[2 * i + 1] *= scale;
    }
  }

  /// Analytic gradient of the objective with respect to (tx, ty, tz) at the
  /// current rotation. tx, ty act only through the coaxial loss and tz only
  /// through the coplanar loss.
  Eigen::Vector3d translation_gradient(const Eigen::Vector3d& t) const {
    // First pass for the angle statistics the variance gradient needs.
    std::vector<double> thetas;
    thetas.reserve(points_.size());
    RunningStats pla_stats;
    long axi_count = 0;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Eigen::Vector3d& q = rotated_[i];
      const double px = pixels_[i].x();
      const double py = pixels_[i].y();
      const double zc = q.z() - t.z();
      double theta = std::numeric_limits<double>::quiet_NaN();
      if (zc > kDepthEpsilon) {
        const double fu = intr_.fu * q.x() / zc + intr_.u0 - px;
        const double fv = intr_.fv * q.y() / zc + intr_.v0 - py;
        const double n = std::sqrt(fu * fu + fv * fv);
        if (n >= kFlowEpsilon) {
          theta = std::acos(std::clamp(fu / n, -1.0, 1.0));
          pla_stats.add(theta);
        }
      }
      thetas.push_back(theta);
      const double du = px - intr_.u0;
      const double dv = py - intr_.v0;
      if (q.z() > kDepthEpsilon && std::hypot(du, dv) >= kFlowEpsilon) ++axi_count;
    }
    const double theta_mean = pla_stats.mean();
    const long n_pla = pla_stats.count();

    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Eigen::Vector3d& q = rotated_[i];
      const double px = pixels_[i].x();
      const double py = pixels_[i].y();

      // d L_pla / d tz
      const double zc = q.z() - t.z();
      if (zc > kDepthEpsilon && n_pla >= 2 && !std::isnan(thetas[i])) {
        const double fu = intr_.fu * q.x() / zc + intr_.u0 - px;
        const double fv = intr_.fv * q.y() / zc + intr_.v0 - py;
        const double n = std::sqrt(fu * fu + fv * fv);
        const double c = std::clamp(fu / n, -1.0, 1.0);
        const double s = std::sqrt(std::max(1.0 - c * c, 0.0));
        // arccos is a V-vertex at |c| = 1; the zero subgradient is the
        // stable choice there.
        if (s > 1e-8) {
          const double dfu = intr_.fu * q.x() / (zc * zc);
          const double dfv = intr_.fv * q.y() / (zc * zc);
          const double dc = (dfu - c * (fu * dfu + fv * dfv) / n) / n;
          const double dtheta = -dc / s;
          grad.z() += 2.0 / n_pla * (thetas[i] - theta_mean) * dtheta;
        }
      }

      // d L_axi / d (tx, ty)
      const double za = q.z();
      if (za > kDepthEpsilon && axi_count > 0) {
        const double fu = intr_.fu * (q.x() - t.x()) / za + intr_.u0 - px;
        const double fv = intr_.fv * (q.y() - t.y()) / za + intr_.v0 - py;
        const double du = px - intr_.u0;
        const double dv = py - intr_.v0;
        const double nf = std::sqrt(fu * fu + fv * fv);
        const double nd = std::sqrt(du * du + dv * dv);
        if (nf < kFlowEpsilon || nd < kFlowEpsilon) continue;
        const double c = std::clamp((fu * du + fv * dv) / (nf * nd), -1.0, 1.0);
        const double s = std::sqrt(std::max(1.0 - c * c, 0.0));
        if (s <= 1e-8) continue;  // V-vertex: zero subgradient
        const double dhu = du / nd;
        const double dhv = dv / nd;
        // d c / d f = (d_hat - c f/|f|) / |f|
        const double dcdfu = (dhu - c * fu / nf) / nf;
        const double dcdfv = (dhv - c * fv / nf) / nf;
        const double dfdtx = -intr_.fu / za;
        const double dfdty = -intr_.fv / za;
        grad.x() += (-dcdfu * dfdtx / s) / axi_count;
        grad.y() += (-dcdfv * dfdty / s) / axi_count;
      }
    }
    return grad;
  }

 private:
  CameraIntrinsics intr_;
  std::vector<Eigen::Vector3d> points_;
  std::vector<Eigen::Vector2d> pixels_;
  std::vector<Eigen::Vector3d> rotated_;
};

}  // namespace detail

/// Minimizes L_pla + L_axi over the 6-DoF pose by block-coordinate descent
/// with backtracking line searches: axis-angle increments composed onto the
/// rotation from the left, and independent update steps for the tangential
/// and radial translation components. The recorded objective never
/// increases.
inline RefineTrace refine_pose(const CorrespondenceSet& corr,
                               const SE3Pose& init, const RefineConfig& config) {
  config.validate();
  init.require_valid();
  corr.validate();

  detail::AlignmentObjective objective(corr);
  SE3Pose pose = init;
  objective.set_rotation(pose.rotation);
  detail::AlignmentObjective::Value current = objective.evaluate(pose.translation);
  if (!current.defined)
    throw std::runtime_error("refine_pose: objective undefined at init");

  const double t_scale = std::max(init.translation.norm(), 1e-3);
  double step_rot = config.step_rotation;
  double step_tan = config.step_translation > 0.0
                        ? config.step_translation
                        : std::max(1e-3 * init.translation.norm(), 1e-4);
  double step_rad = step_tan;
  const double h_rot = 1e-7;
  const double h_trans = 1e-7 * t_scale;
  // Steps below these floors are indistinguishable from arccos rounding
  // noise near an optimum; the searches stop instead of accepting junk.
  const double min_step_rot = 1e-8;
  const double min_step_trans = 1e-8 * t_scale;

  RefineTrace trace;
  trace.iterations.push_back({0, current.pla, current.axi, current.objective, pose});

  auto eval_pose = [&](const SE3Pose& candidate, bool rotation_changed) {
    if (rotation_changed) objective.set_rotation(candidate.rotation);
    return objective.evaluate(candidate.translation);
  };

  bool converged = false;
  bool stalled = false;
  for (int iter = 1; iter <= config.max_iters && !converged && !stalled; ++iter) {
    const double obj_before = current.objective;
    bool any_accept = false;

    // --- rotation block (finite differences on the manifold) ---
    if (config.refine_rotation) {
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      for (int k = 0; k < 3; ++k) {
        SE3Pose probe = pose;
        probe.rotation =
            rotation_from_axis_angle(Eigen::Vector3d::Unit(k), h_rot) *
            pose.rotation;
        const auto v = eval_pose(probe, true);
        g[k] = v.defined ? (v.objective - current.objective) / h_rot
                         : std::numeric_limits<double>::infinity();
      }
      objective.set_rotation(pose.rotation);
      if (g.allFinite() && g.norm() > 0.0) {
        const Eigen::Vector3d dir = -g.normalized();
        double lambda = step_rot;
        while (lambda >= min_step_rot) {
          SE3Pose candidate = pose;
          candidate.rotation =
              rotation_from_axis_angle(dir, lambda) * pose.rotation;
          const auto v = eval_pose(candidate, true);
          if (v.defined && v.objective < current.objective) {
            pose = candidate;
            current = v;
            step_rot = std::min(lambda * 2.0, 0.2);
            any_accept = true;
            break;
          }
          lambda *= config.line_search_shrink;
        }
        objective.set_rotation(pose.rotation);
      }
    }

    // --- tangential block ---
    if (config.refine_tangential) {
      Eigen::Vector2d g;
      if (config.gradient_mode == GradientMode::analytic_translational) {
        g = objective.translation_gradient(pose.translation).head<2>();
      } else {
        for (int k = 0; k < 2; ++k) {
          Eigen::Vector3d t = pose.translation;
          t[k] += h_trans;
          const auto v = objective.evaluate(t);
          g[k] = v.defined ? (v.objective - current.objective) / h_trans
                           : std::numeric_limits<double>::infinity();
        }
      }
      if (g.allFinite() && g.norm() > 0.0) {
        const Eigen::Vector2d dir = -g.normalized();
        double lambda = step_tan;
        while (lambda >= min_step_trans) {
          Eigen::Vector3d t = pose.translation;
          t.x() += dir.x() * lambda;
          t.y() += dir.y() * lambda;
          const auto v = objective.evaluate(t);
          if (v.defined && v.objective < current.objective) {
            pose.translation = t;
            current = v;
            step_tan = lambda * 2.0;
            any_accept = true;
            break;
          }
          lambda *= config.line_search_shrink;
        }
      }
    }

    // --- radial block ---
    if (config.refine_radial) {
      double g;
      if (config.gradient_mode == GradientMode::analytic_translational) {
        g = objective.translation_gradient(pose.translation).z();
      } else {
        Eigen::Vector3d t = pose.translation;
        t.z() += h_trans;
        const auto v = objective.evaluate(t);
        g = v.defined ? (v.objective - current.objective) / h_trans
                      : std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(g) && g != 0.0) {
        const double dir = g > 0.0 ? -1.0 : 1.0;
        double lambda = step_rad;
        while (lambda >= min_step_trans) {
          Eigen::Vector3d t = pose.translation;
          t.z() += dir * lambda;
          const auto v = objective.evaluate(t);
          if (v.defined && v.objective < current.objective) {
            pose.translation = t;
            current = v;
            step_rad = lambda * 2.0;
            any_accept = true;
            break;
          }
          lambda *= config.line_search_shrink;
        }
      }
    }

    // --- joint damped Gauss-Newton step on the residual surrogate ---
    // Block descent alone zigzags through the rotation/tangential valley;
    // one joint line-searched step per iteration cuts straight across it.
    // Acceptance is still judged on the true objective, so the trace stays
    // monotone. Skipped when any parameter block is frozen.
    if (config.refine_rotation && config.refine_tangential &&
        config.refine_radial) {
      objective.set_rotation(pose.rotation);
      std::vector<double> r0;
      objective.residuals(pose.translation, r0);
      std::vector<double> perturbed[6];
      const double steps[6] = {h_rot, h_rot, h_rot, h_trans, h_trans, h_trans};
      for (int k = 0; k < 3; ++k) {
        SE3Pose probe = pose;
        probe.rotation =
            rotation_from_axis_angle(Eigen::Vector3d::Unit(k), h_rot) *
            pose.rotation;
        objective.set_rotation(probe.rotation);
        objective.residuals(probe.translation, perturbed[k]);
      }
      objective.set_rotation(pose.rotation);
      for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d t = pose.translation;
        t[k] += h_trans;
        objective.residuals(t, perturbed[3 + k]);
      }

      // Coaxial slots carry an L1 mean, not a sum of squares; reweight those
      // rows IRLS-style by 1/sqrt(|phi|) so the weighted least squares
      // tracks the true objective's geometry.
      long axi_rows = 0;
      for (std::size_t i = 1; i < r0.size(); i += 2)
        if (!std::isnan(r0[i])) ++axi_rows;
      const double axi_scale = std::sqrt(std::max<long>(axi_rows, 1L));

      Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
      Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
      Eigen::Matrix<double, 6, 1> row;
      for (std::size_t i = 0; i < r0.size(); ++i) {
        if (std::isnan(r0[i])) continue;
        bool usable = true;
        for (int k = 0; k < 6 && usable; ++k)
          usable = !std::isnan(perturbed[k][i]);
        if (!usable) continue;
        double weight = 1.0;
        if (i % 2 == 1) {
          const double phi = r0[i] * axi_scale;  // raw angle, nonnegative
          weight = 1.0 / std::sqrt(std::max(phi, 1e-6));
        }
        for (int k = 0; k < 6; ++k)
          row[k] = weight * (perturbed[k][i] - r0[i]) / steps[k];
        jtj.noalias() += row * row.transpose();
        jtr.noalias() += row * (weight * r0[i]);
      }
      for (int k = 0; k < 6; ++k)
        jtj(k, k) += 1e-6 * jtj(k, k) + 1e-12;
      const Eigen::Matrix<double, 6, 1> delta = jtj.ldlt().solve(-jtr);
      if (delta.allFinite() && delta.norm() > 0.0) {
        double lambda = 1.0;
        const double floor =
            min_step_rot / std::max(delta.head<3>().norm(), 1e-30);
        for (int attempt = 0; attempt < 30 && lambda >= floor; ++attempt) {
          SE3Pose candidate = pose;
          const Eigen::Vector3d omega = lambda * delta.head<3>();
          if (omega.norm() > 0.0)
            candidate.rotation =
                rotation_from_axis_angle(omega.normalized(), omega.norm()) *
                pose.rotation;
          candidate.translation += lambda * delta.tail<3>();
          const auto v = eval_pose(candidate, true);
          if (v.defined && v.objective < current.objective) {
            pose = candidate;
            current = v;
            any_accept = true;
            break;
          }
          lambda *= config.line_search_shrink;
        }
        objective.set_rotation(pose.rotation);
      }
    }

    trace.iterations.push_back({iter, current.pla, current.axi, current.objective, pose});

    if (!any_accept) {
      converged = current.objective <= config.stuck_objective;
      stalled = !converged;
    } else if (obj_before - current.objective < config.convergence_tol) {
      converged = true;
    }
  }

  trace.final_pose = pose;
  trace.converged = converged;
  return trace;
}

/// Closed-form translation recovery through the ratio maps, given a rotation
/// estimate: align with the rotation and a zero translation guess, read the
/// ratios, recover, and repeat the closed form with the recovered components
/// substituted until it reaches its fixed point. No gradients or line
/// searches are involved.
inline TranslationRecovery recover_translation_closed_form(
    const CorrespondenceSet& corr, const Eigen::Matrix3d& rotation,
    const DepthMap& depth, int max_passes = 20) {
  corr.validate();
  depth.validate();
  const CameraIntrinsics& intr = corr.depth_t.intrinsics;
  const Backprojection back = backproject_source(corr);

  TranslationRecovery rec;
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  for (int pass = 0; pass < max_passes; ++pass) {
    MotionComponents est;
    est.rot.rotation = rotation;
    est.tan.translation = {t.x(), t.y(), 0.0};
    est.rad.translation = {0.0, 0.0, t.z()};

    AlignedFlows flows;
    flows.coplanar = FlowField(corr.width(), corr.height(), FlowKind::coplanar);
    flows.coaxial = FlowField(corr.width(), corr.height(), FlowKind::coaxial);
    const Eigen::Matrix3d r_inv = rotation.transpose();
    for (int y = 0; y < corr.height(); ++y)
      for (int x = 0; x < corr.width(); ++x) {
        if (!back.valid(x, y)) {
          flows.coplanar.valid(x, y) = 0;
          flows.coaxial.valid(x, y) = 0;
          continue;
        }
        const Eigen::Vector3d q = r_inv * back.points(x, y);
        const Eigen::Vector2d p_t(x, y);
        const Eigen::Vector3d pla = q - est.rad.translation;
        if (pla.z() > kDepthEpsilon)
          flows.coplanar.vectors(x, y) = intr.project(pla) - p_t;
        else
          flows.coplanar.valid(x, y) = 0;
        const Eigen::Vector3d axi = q - est.tan.translation;
        if (axi.z() > kDepthEpsilon)
          flows.coaxial.vectors(x, y) = intr.project(axi) - p_t;
        else
          flows.coaxial.valid(x, y) = 0;
      }

    const RatioMaps ratios = ratio_maps(flows, intr);
    rec = recover_translation(ratios, depth);
    Eigen::Vector3d next = t;
    for (int k = 0; k < 3; ++k)
      if (rec.available[k]) next[k] = rec.t[k];
    const double change = (next - t).norm();
    t = next;
    if (change <= 1e-13 * std::max(1.0, t.norm())) break;
  }
  rec.t = t;
  return rec;
}

}  // namespace flowfactor
