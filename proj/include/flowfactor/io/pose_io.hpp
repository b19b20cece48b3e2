#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flowfactor/trajectory.hpp"

namespace flowfactor {

/// Parses one 12-value KITTI pose line (row-major 3x4 [R|t]). Throws with
/// the 1-based line number on malformed input.
inline SE3Pose parse_kitti_line(const std::string& line, int line_number) {
  std::istringstream stream(line);
  double v[12];
  for (int i = 0; i < 12; ++i)
    if (!(stream >> v[i]))
      throw std::runtime_error("pose file line " + std::to_string(line_number) +
                               ": expected 12 values");
  std::string extra;
  if (stream >> extra)
    throw std::runtime_error("pose file line " + std::to_string(line_number) +
                             ": trailing tokens");
  SE3Pose pose;
  pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  pose.translation << v[3], v[7], v[11];
  if (!pose.rotation.allFinite() || !pose.translation.allFinite())
    throw std::runtime_error("pose file line " + std::to_string(line_number) +
                             ": non-finite value");
  if (rotation_defect(pose.rotation) > 1e-3)
    throw std::runtime_error("pose file line " + std::to_string(line_number) +
                             ": rotation is not orthonormal");
  return pose;
}

/// KITTI pose text format: one camera-to-world pose per line.
inline Trajectory read_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  Trajectory traj;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    traj.poses.push_back(parse_kitti_line(line, line_number));
  }
  if (traj.poses.empty())
    throw std::runtime_error("pose file is empty: " + path);
  return traj;
}

inline std::string format_kitti_line(const SE3Pose& pose) {
  char buf[512];
  const Eigen::Matrix3d& r = pose.rotation;
  const Eigen::Vector3d& t = pose.translation;
  std::snprintf(buf, sizeof(buf),
                "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g "
                "%.17g %.17g",
                r(0, 0), r(0, 1), r(0, 2), t.x(), r(1, 0), r(1, 1), r(1, 2),
                t.y(), r(2, 0), r(2, 1), r(2, 2), t.z());
  return buf;
}

inline void write_kitti_poses(const Trajectory& traj, const std::string& path) {
  traj.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const SE3Pose& pose : traj.poses) out << format_kitti_line(pose) << "\n";
}

/// TUM trajectory format: "timestamp tx ty tz qx qy qz qw" per line.
/// Secondary reader for external ground truth.
inline Trajectory read_tum_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  Trajectory traj;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream stream(line);
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (!(stream >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw std::runtime_error("TUM file line " + std::to_string(line_number) +
                               ": expected 8 values");
    const double norm = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
    if (!(norm > 1e-9))
      throw std::runtime_error("TUM file line " + std::to_string(line_number) +
                               ": zero quaternion");
    qx /= norm;
    qy /= norm;
    qz /= norm;
    qw /= norm;
    SE3Pose pose;
    pose.rotation << 1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw),
        2 * (qx * qz + qy * qw), 2 * (qx * qy + qz * qw),
        1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
        2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw),
        1 - 2 * (qx * qx + qy * qy);
    pose.translation << tx, ty, tz;
    traj.poses.push_back(pose);
    traj.timestamps.push_back(ts);
  }
  if (traj.poses.empty())
    throw std::runtime_error("TUM file is empty: " + path);
  traj.validate();
  return traj;
}

}  // namespace flowfactor
