// Visual-inertial engine over feature tracks (simulated or file-provided):
// LiDAR-assisted depth association, reprojection factors, and a windowed
// optimization that emits relative-pose constraints for the fusion graph.
// The image-domain front end is out of scope; tracks arrive ready-made.
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "odomkit/factor_graph.hpp"
#include "odomkit/geometry.hpp"
#include "odomkit/preintegration.hpp"

namespace odomkit {

struct CameraModel {
  Pose body_to_camera;  // extrinsic
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;  // used only at ingestion
};

enum class DepthSource { none, lidar, triangulated };

struct TrackObservation {
  int frame_id = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();  // normalized coordinates
};

struct FeatureTrack {
  int feature_id = -1;
  std::vector<TrackObservation> observations;
  std::optional<double> depth;  // meters, in the camera of the first windowed observation
  DepthSource depth_source = DepthSource::none;
};

// Depth of the LiDAR returns projected near a pixel: distance-weighted mean
// z of the closest <= 3 points within 1 degree of the viewing ray. Points
// must already be in the observing camera frame, in front of the camera.
std::optional<double> associate_depth(const Eigen::Vector2d& pixel,
                                      const std::vector<Vec3>& lidar_points_in_camera);

struct ReprojectionEval {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  bool valid = false;  // false when the point lands behind camera b
};

// Residual of observing, from state_b, the track point unprojected at
// depth_in_a from state_a. Jacobians live on the corresponding factor.
ReprojectionEval reprojection_residual(const State& state_a, const State& state_b,
                                       const Eigen::Vector2d& obs_a,
                                       const Eigen::Vector2d& obs_b, double depth_in_a,
                                       const Pose& body_to_camera);

struct VioConfig {
  CameraModel camera;
  int max_keyframes = 8;
  int min_tracks = 15;           // below this the engine reports "visually degraded"
  double pixel_noise = 0.003;    // normalized units, 1 sigma
  double triangulated_inflation = 4.0;  // information shrink for non-lidar depth
  int keyframe_stride = 5;       // every Nth frame is a keyframe...
  double keyframe_translation = 0.3;  // ...or sooner past this predicted motion
  Vec3 gravity = default_gravity();
  SolveConfig solve;
};

struct VioConstraint {
  double t_i = 0.0, t_j = 0.0;
  Vec3 dp = Vec3::Zero();
  Quat dq = Quat::Identity();
  Mat6 information = Mat6::Zero();
  int used_tracks = 0;
  int degenerate_directions = 0;
  double mean_residual = 0.0;
};

struct VioFrameInput {
  int frame_id = -1;
  double t = 0.0;
  // Observations visible in this frame: feature id -> normalized pixel.
  std::map<int, Eigen::Vector2d> observations;
  // LiDAR returns in this frame's camera, for depth association (may be empty).
  std::vector<Vec3> lidar_in_camera;
};

class VisualInertialEngine {
 public:
  explicit VisualInertialEngine(const VioConfig& config);

  // Feed IMU between keyframes; timestamps must be monotone.
  void push_imu(const ImuSample& sample);

  struct StepResult {
    bool keyframe = false;
    bool visually_degraded = false;
    std::optional<VioConstraint> constraint;
  };

  // Process one camera frame; prediction is the fusion engine's pose guess
  // with its 6x6 information (used as the window prior).
  StepResult push_frame(const VioFrameInput& frame, const State& predicted_state,
                        const Mat6& prediction_information);

  const std::vector<State>& keyframe_states() const { return kf_states_; }

 private:
  struct WindowedTrack {
    std::vector<std::pair<int, Eigen::Vector2d>> obs;  // (keyframe slot, pixel)
    std::optional<double> depth;                       // in the anchor camera
    DepthSource source = DepthSource::none;
    int anchor_slot = -1;  // keyframe slot the depth lives in
  };

  void triangulate_missing_depths();
  std::optional<VioConstraint> optimize_window(const State& predicted_state,
                                               const Mat6& prediction_information,
                                               bool* degraded);

  VioConfig config_;
  std::vector<State> kf_states_;
  std::vector<double> kf_times_;
  std::vector<PreintegratedDelta> kf_deltas_;  // between consecutive keyframes
  std::map<int, WindowedTrack> tracks_;
  std::deque<ImuSample> imu_buffer_;
  int frames_since_keyframe_ = 0;
  BiasPair bias_;
};

}  // namespace odomkit
