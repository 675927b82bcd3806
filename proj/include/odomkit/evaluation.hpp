// Trajectory alignment and translational ATE metrics.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "odomkit/geometry.hpp"

namespace odomkit {

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

using EvalTrajectory = std::vector<StampedPose>;

struct AssociationError {
  std::string message;
};

// Nearest-timestamp pairing; each reference pose is used at most once and
// pairs farther apart than max_dt are dropped. Zero pairs is an error.
struct Association {
  std::vector<std::pair<size_t, size_t>> pairs;  // (est index, gt index)
};
std::optional<Association> associate(const EvalTrajectory& est, const EvalTrajectory& gt,
                                     double max_dt, AssociationError* error = nullptr);

struct AlignmentError {
  std::string message;
  int rank = 3;
};

// Closed-form SE(3) alignment (no scale) minimizing sum ||gt - T est||^2.
// Degenerate (collinear or fewer than 3) configurations are errors.
std::optional<Pose> align_umeyama(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                                  AlignmentError* error = nullptr);

struct AteResult {
  double rmse = 0.0;
  double max = 0.0;
  std::vector<double> per_pose_errors;
  Pose alignment;
};

std::optional<AteResult> ate(const EvalTrajectory& est, const EvalTrajectory& gt,
                             double max_dt = 0.02, std::string* error = nullptr);

double path_length(const EvalTrajectory& traj);

}  // namespace odomkit
