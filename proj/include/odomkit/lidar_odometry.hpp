// Scan-to-map LiDAR-inertial engine: voxel-grid downsampling, PCA feature
// classification, correspondence search against the voxel map with
// distribution-quality weighting, multi-metric ICP residuals, and the joint
// optimization with the IMU preintegration factor and odometry prior.
#pragma once

#include <optional>
#include <vector>

#include "odomkit/factor_graph.hpp"
#include "odomkit/geometry.hpp"
#include "odomkit/preintegration.hpp"
#include "odomkit/scan.hpp"
#include "odomkit/voxel_map.hpp"

namespace odomkit {

enum class FeatureClass { point, line, plane };

struct FeaturePoint {
  Vec3 position = Vec3::Zero();   // body frame, de-skewed
  FeatureClass cls = FeatureClass::point;
  Vec3 direction = Vec3::Zero();  // line direction or plane normal
  Vec3 sigma = Vec3::Zero();      // (linearity, planarity, curvature)
  double quality = 1.0;           // distribution quality of its own neighborhood
  size_t source_index = 0;        // index into the downsampled scan
};

// Deterministic voxel-grid downsample: per occupied cell, the point nearest
// to the cell center survives; cell size grows until the cell count fits.
Scan downsample(const Scan& scan, int target_count);

struct ClassifyConfig {
  int k = 8;
  double r = 1.0;
  double line_threshold = 0.6;    // sigma_1d above this => line
  double plane_threshold = 0.6;   // sigma_2d above this => plane
  double point_threshold = 0.1;    // sigma_3d above this => point candidate
  double point_max_spread = 0.15;  // point features must be compact blobs
  double d_max = 0.02;             // quality normalization, squared meters
  double sigma3d_max = 1.0 / 3.0;
};

// Eigen-decomposition of a neighborhood; descriptors from the sorted
// singular values (sigma_i = sqrt(lambda_i)).
struct PcaResult {
  Vec3 sigma_desc = Vec3::Zero();  // (s1d, s2d, s3d)
  Vec3 principal = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  Vec3 centroid = Vec3::Zero();
  Vec3 sigma = Vec3::Zero();  // sqrt eigenvalues, descending
  double spread = 0.0;        // sigma(0)
  bool valid = false;
};
PcaResult pca_of(const std::vector<Vec3>& neighbors);

// Per-point classification against the scan's own KD-tree. Points with
// fewer than k neighbors inside r are dropped.
std::vector<FeaturePoint> classify_features(const Scan& scan, const ClassifyConfig& config);

// Distribution quality of a correspondence given the neighborhood backing it.
// Point class: sigma_3d / sigma3d_max. Line/plane: 1 - mean quadratic
// deviation from the fitted direction over d_max. Clamped to [0, 1].
double correspondence_weight(FeatureClass cls, const Vec3& direction,
                             const std::vector<Vec3>& neighbors, double d_max,
                             double sigma3d_max);

struct CorrespondenceTarget {
  FeatureClass kind = FeatureClass::point;
  Vec3 point = Vec3::Zero();      // map point / point on line / point on plane
  Vec3 direction = Vec3::Zero();  // line direction or plane normal
};

struct Correspondence {
  FeaturePoint feature;
  CorrespondenceTarget target;
  double weight = 1.0;
};

// Stacked weighted residuals and jacobians w.r.t. the pose tangent
// [dp, dtheta] at T. Point rows 3, line rows 3 (rank 2), plane rows 1.
struct IcpSystem {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;  // rows x 6
};
IcpSystem icp_residuals(const std::vector<Correspondence>& correspondences, const Pose& pose);

struct LioConfig {
  int downsample_target = 4096;
  ClassifyConfig classify;
  double corr_radius = 1.0;
  int corr_neighbors = 16;
  int min_plane_neighbors = 6;
  int min_line_neighbors = 5;
  // Off-model rms gates for target fits; match these to the sensor noise
  // (a few sigma). Mixed neighborhoods near junctions otherwise bias targets.
  double plane_fit_max_rms = 0.03;
  double line_fit_max_rms = 0.03;
  double reject_distance = 0.5;   // correspondence gating, meters
  double min_weight = 0.05;       // discard correspondences below this
  // Point-to-point matches additionally require a blob-like map region;
  // junction edges otherwise manufacture information out of sampling
  // quantization.
  double point_min_map_quality = 0.5;
  double insert_min_weight = 0.25;  // map insertion gate for matched features
  int min_correspondences = 10;
  int reassociation_rounds = 3;
  double huber_delta = 5.0;   // on noise-whitened residual norms (sigmas)
  double sensor_noise = 0.01;  // per-point range noise; whitens the scan rows
  SolveConfig solve{.max_iters = 10};
  Vec3 gravity = default_gravity();
  bool use_prior = true;  // the fusion prior term; disabled for ablations
};

struct LioReport {
  int correspondences = 0;
  int features_total = 0;
  int inliers_point = 0;
  int inliers_line = 0;
  int inliers_plane = 0;
  double mean_weighted_residual = 0.0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int rounds = 0;
  bool prior_dominated = false;  // too few correspondences; prediction returned
  // Near-null directions of the scan-matching hessian in the pose tangent
  // [dp, dtheta] of the registered state.
  std::vector<Vec6> degenerate_directions;
  // Scan-matching information, pose block only, unit point weights.
  Mat6 pose_information = Mat6::Zero();
  std::vector<Correspondence> last_correspondences;  // from the final round
};

struct RegisterPrediction {
  State predicted;                 // at scan stamp; also the de-skew anchor
  Pose sweep_end_pose;             // predicted pose at stamp + sweep_duration
  double sweep_duration = 0.1;
  Mat6 pose_information = Mat6::Identity();  // E_imuodom prior weight
  // IMU chain from the previous registered keyframe, when available.
  std::optional<State> previous_state;
  std::optional<PreintegratedDelta> preintegration;
};

struct RegisterResult {
  State state;
  LioReport report;
};

// One scan against the map (Eq.-style joint optimization); inserts the
// registered scan into the map on success. An empty map bootstraps from the
// prediction pose.
RegisterResult register_scan(const Scan& scan, VoxelMap& map, const RegisterPrediction& pred,
                             const LioConfig& config);

// Motion compensation: re-expresses each point in the sweep-start frame by
// interpolating the predicted motion across the sweep.
Scan deskew(const Scan& scan, const Pose& pose_at_stamp, const Pose& pose_at_end,
            double sweep_duration);

}  // namespace odomkit
