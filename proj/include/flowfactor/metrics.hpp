#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "flowfactor/trajectory.hpp"

namespace flowfactor {

/// Similarity transform y = scale * rotation * x + translation.
struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

/// Least-squares similarity between the estimate's and the reference's
/// positions (7-DoF alignment, closed form via the covariance SVD).
/// Degenerate position sets (collinear or worse) are rejected.
inline SimilarityTransform umeyama_align(const Trajectory& estimate,
                                         const Trajectory& reference) {
  estimate.validate();
  reference.validate();
  const std::size_t n = estimate.size();
  if (n != reference.size())
    throw std::invalid_argument("umeyama_align: length mismatch");
  if (n < 3)
    throw std::invalid_argument("umeyama_align: need at least 3 poses");

  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_ref = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mean_est += estimate.poses[i].translation;
    mean_ref += reference.poses[i].translation;
  }
  mean_est /= static_cast<double>(n);
  mean_ref /= static_cast<double>(n);

  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double var_est = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d de = estimate.poses[i].translation - mean_est;
    const Eigen::Vector3d dr = reference.poses[i].translation - mean_ref;
    covariance += dr * de.transpose();
    var_est += de.squaredNorm();
  }
  covariance /= static_cast<double>(n);
  var_est /= static_cast<double>(n);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (!(d(1) > 1e-12 * std::max(1.0, d(0))))
    throw std::runtime_error("umeyama_align: degenerate (collinear) positions");

  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
    s(2, 2) = -1.0;

  SimilarityTransform out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  if (!(var_est > 0.0))
    throw std::runtime_error("umeyama_align: estimate positions are all equal");
  out.scale = (d.asDiagonal().toDenseMatrix() * s).trace() / var_est;
  out.translation = mean_ref - out.scale * (out.rotation * mean_est);
  return out;
}

/// Absolute trajectory error: RMSE of position differences after 7-DoF
/// alignment of the estimate onto the reference.
inline double ate(const Trajectory& estimate, const Trajectory& reference) {
  const SimilarityTransform sim = umeyama_align(estimate, reference);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i)
    sum_sq += (sim.apply(estimate.poses[i].translation) -
               reference.poses[i].translation)
                  .squaredNorm();
  return std::sqrt(sum_sq / static_cast<double>(estimate.size()));
}

/// One evaluated subsequence of the relative-error protocol.
struct SegmentError {
  int first_frame = 0;
  double length = 0.0;       ///< meters, nominal segment length
  double t_err = 0.0;        ///< translation error per meter
  double r_err = 0.0;        ///< rotation error, radians per meter
};

struct KittiErrors {
  double e_t_percent = 0.0;       ///< mean translation error, percent
  double e_r_deg_per_100m = 0.0;  ///< mean rotation error, degrees per 100 m
  std::vector<SegmentError> segments;
};

/// The standard segment lengths of the odometry benchmark protocol.
inline const std::vector<double>& kitti_segment_lengths() {
  static const std::vector<double> lengths = {100, 200, 300, 400,
                                              500, 600, 700, 800};
  return lengths;
}

/// Relative pose errors over subsequences of fixed path lengths, averaged
/// over every start frame and length. No global alignment is applied; e_t is
/// a percentage of traveled distance, e_r is normalized to degrees per 100 m.
inline KittiErrors kitti_rel_errors(const Trajectory& estimate,
                                    const Trajectory& reference) {
  estimate.validate();
  reference.validate();
  if (estimate.size() != reference.size())
    throw std::invalid_argument("kitti_rel_errors: length mismatch");
  const std::size_t n = reference.size();

  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 1; i < n; ++i)
    dist[i] = dist[i - 1] + (reference.poses[i].translation -
                             reference.poses[i - 1].translation)
                                .norm();

  KittiErrors out;
  double t_sum = 0.0, r_sum = 0.0;
  for (std::size_t first = 0; first < n; ++first) {
    for (const double len : kitti_segment_lengths()) {
      std::size_t last = first;
      bool found = false;
      for (std::size_t i = first; i < n; ++i)
        if (dist[i] > dist[first] + len) {
          last = i;
          found = true;
          break;
        }
      if (!found) continue;

      const SE3Pose delta_ref =
          reference.poses[first].inverse() * reference.poses[last];
      const SE3Pose delta_est =
          estimate.poses[first].inverse() * estimate.poses[last];
      const SE3Pose error = delta_est.inverse() * delta_ref;

      SegmentError seg;
      seg.first_frame = static_cast<int>(first);
      seg.length = len;
      seg.t_err = error.translation.norm() / len;
      seg.r_err = rotation_angle(error.rotation) / len;
      out.segments.push_back(seg);
      t_sum += seg.t_err;
      r_sum += seg.r_err;
    }
  }
  if (out.segments.empty())
    throw std::runtime_error(
        "kitti_rel_errors: reference path shorter than the smallest segment");
  const double count = static_cast<double>(out.segments.size());
  out.e_t_percent = 100.0 * t_sum / count;
  out.e_r_deg_per_100m = (r_sum / count) * (180.0 / M_PI) * 100.0;
  return out;
}

}  // namespace flowfactor
