// IMU-centric odometry: high-rate propagation of the newest optimized state,
// a sliding-window graph over preintegration and relative-pose constraints
// from the LiDAR/visual engines, reliability weighting, and prediction
// publication back to those engines.
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "odomkit/factor_graph.hpp"
#include "odomkit/geometry.hpp"
#include "odomkit/preintegration.hpp"

namespace odomkit {

enum class ConstraintSource { lio, vio };

struct ConstraintMessage {
  ConstraintSource source = ConstraintSource::lio;
  double t_i = 0.0, t_j = 0.0;
  Vec3 dp = Vec3::Zero();
  Quat dq = Quat::Identity();
  Mat6 information = Mat6::Zero();  // raw; fusion scales it by reliability
  double reliability = 1.0;
};

struct PredictionMessage {
  State state;                       // latest optimized node
  PreintegratedDelta delta;          // accumulated since that node
  Mat6 confidence = Mat6::Zero();    // pose information of the prediction
};

// The producing engine's self-assessment, input to compute_reliability.
struct SourceReport {
  double inlier_ratio = 1.0;
  double mean_weighted_residual = 0.0;
  int degenerate_directions = 0;
};

struct FusionConfig {
  Vec3 gravity = default_gravity();
  int window_nodes = 10;
  double snap_tolerance = 0.005;     // constraint-to-node timestamp match, s
  double reliability_rho = 0.1;      // residual scale in the reliability map
  double unconstrained_decay = 0.5;  // confidence factor per second without constraints
  double degenerate_rel_eig = 1e-2;  // eigen-nulling threshold on constraint W
  ImuNoiseModel noise;
  BiasPair initial_bias;
  double imu_buffer_span = 30.0;     // seconds of raw IMU kept for node splits
  SolveConfig solve{.max_iters = 8};
};

// reliability = clamp(inlier_ratio * exp(-mean_residual/rho) * 2^-degenerate, 0, 1)
double compute_reliability(const SourceReport& report, double rho);

class FusionCore {
 public:
  explicit FusionCore(const FusionConfig& config);

  // Gravity alignment from an initial stationary stretch; sets the first
  // node orientation so the measured specific force maps to -gravity.
  void initialize_gravity(const std::vector<ImuSample>& stationary_samples);

  // High-rate path: returns the propagated state at the sample time, or
  // nothing on a timestamp regression (sample dropped).
  std::optional<State> ingest_imu(const ImuSample& sample);

  void ingest_constraint(const ConstraintMessage& msg);

  struct BatchReport {
    int constraints_applied = 0;
    int constraints_dropped_old = 0;
    bool optimized = false;
    double final_cost = 0.0;
  };
  // Drains the constraint queue into the window, solves, marginalizes
  // overflow, and republishes the prediction anchor.
  BatchReport optimize_fusion();

  PredictionMessage prediction() const;
  // Interpolated high-rate pose for de-skewing; falls back to the newest
  // propagated state outside the buffered range.
  Pose pose_at(double t) const;
  // Full state at t: pose interpolated, velocity and biases from the nearest
  // propagated sample.
  State state_at(double t) const;
  State propagated_state() const;

  const std::vector<State>& node_states() const { return node_cache_; }
  int dropped_imu() const { return dropped_imu_; }
  int dropped_constraints() const { return dropped_constraints_; }

 private:
  int ensure_node(double t);
  void republish(double now);

  FusionConfig config_;
  Window window_;
  std::vector<int> node_ids_;        // window state ids, time-ascending
  std::vector<double> node_times_;
  std::vector<State> node_cache_;

  std::deque<ImuSample> imu_buffer_;
  std::map<std::pair<int, std::pair<long, long>>, ConstraintMessage> queue_;

  // propagation anchor and accumulator
  State anchor_;
  bool anchor_valid_ = false;
  std::optional<Preintegrator> propagator_;
  std::deque<std::pair<double, State>> highrate_;
  double last_imu_time_ = -1e300;
  double last_constraint_time_ = 0.0;
  Mat6 last_confidence_ = Mat6::Identity();
  int dropped_imu_ = 0;
  int dropped_constraints_ = 0;
};

}  // namespace odomkit
