#pragma once

#include <stdexcept>
#include <vector>

#include "flowfactor/se3.hpp"

namespace flowfactor {

/// Time-ordered camera-to-world poses, optionally timestamped.
struct Trajectory {
  std::vector<SE3Pose> poses;
  std::vector<double> timestamps;  ///< empty, or one per pose and increasing

  std::size_t size() const { return poses.size(); }

  void validate() const {
    if (poses.empty()) throw std::invalid_argument("Trajectory: empty");
    if (!timestamps.empty()) {
      if (timestamps.size() != poses.size())
        throw std::invalid_argument("Trajectory: timestamp count mismatch");
      for (std::size_t i = 1; i < timestamps.size(); ++i)
        if (!(timestamps[i] > timestamps[i - 1]))
          throw std::invalid_argument("Trajectory: timestamps must increase");
    }
    for (const SE3Pose& pose : poses) pose.require_valid(1e-6);
  }
};

}  // namespace flowfactor
