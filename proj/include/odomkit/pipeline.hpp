// End-to-end wiring: dataset in, trajectories and map out. The three engines
// (IMU odometry, LiDAR-inertial, visual-inertial) exchange predictions and
// relative-pose constraints; deterministic mode processes every event on one
// thread in timestamp order, threaded mode runs the engines on their own
// threads behind bounded queues.
#pragma once

#include <filesystem>

#include "odomkit/evaluation.hpp"
#include "odomkit/fusion.hpp"
#include "odomkit/io.hpp"
#include "odomkit/lidar_odometry.hpp"
#include "odomkit/simulator.hpp"
#include "odomkit/visual_odometry.hpp"
#include "odomkit/voxel_map.hpp"

namespace odomkit {

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
  std::vector<sim::FrameObservations> frames;
  CameraModel camera;
  EvalTrajectory ground_truth;  // may be empty
  io::KeyValues scenario;
};

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

struct PipelineOptions {
  bool enable_lio = true;
  bool enable_vio = true;
  bool deterministic = true;
  double init_stationary_span = 0.5;
  LioConfig lio;
  VioConfig vio;
  FusionConfig fusion;
  VoxelMap::Config map;
};

struct ModuleTiming {
  double total_ms = 0.0;
  int count = 0;
  double mean_ms() const { return count ? total_ms / count : 0.0; }
};

struct PipelineResult {
  EvalTrajectory highrate;   // one pose per IMU sample
  EvalTrajectory optimized;  // fusion nodes, final estimates
  std::vector<Vec3> map_points;
  double map_voxel_size = 1.0;

  ModuleTiming lio_timing, vio_timing, fusion_timing;
  int lio_scans = 0;
  int lio_prior_dominated = 0;
  int lio_degenerate_frames = 0;
  int vio_keyframes = 0;
  int vio_degraded = 0;
  long constraints_applied = 0;
  double wall_ms = 0.0;
};

PipelineResult run_pipeline(const Dataset& dataset, const PipelineOptions& options);

// Scenario presets mirroring the degradation test set; `simulate_scenario`
// synthesizes the full dataset for one of them.
struct ScenarioSpec {
  std::string name;
  sim::TrajectorySpec trajectory;
  sim::WorldModel world;
  sim::DegradationProfile degradation;
  sim::LidarSynthConfig lidar;
  sim::ImuSynthConfig imu;
  sim::TrackSynthConfig tracks;
  int landmarks = 250;
};

std::vector<std::string> scenario_names();
std::optional<ScenarioSpec> scenario_by_name(const std::string& name, uint32_t seed);
Dataset simulate_scenario(const ScenarioSpec& spec, uint32_t seed);

}  // namespace odomkit
