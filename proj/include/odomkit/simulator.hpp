// Ground-truth trajectory and sensor synthesis: IMU streams, spinning-LiDAR
// scans ray-cast against geometric worlds, and visual feature tracks, with
// degradation injection (dust, dropout, track loss) over a time window.
// Identical seeds produce bit-identical streams.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "odomkit/geometry.hpp"
#include "odomkit/preintegration.hpp"
#include "odomkit/scan.hpp"
#include "odomkit/visual_odometry.hpp"

namespace odomkit::sim {

struct TrajectoryPoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();           // world frame
  Vec3 a_world = Vec3::Zero();     // world-frame acceleration, gravity excluded
  Vec3 omega_body = Vec3::Zero();  // body-frame angular rate
};

struct TrajectorySpec {
  enum class Profile { stationary, circle, figure_eight, corridor_walk, waypoints };
  Profile profile = Profile::stationary;
  double duration = 30.0;
  double rate = 1000.0;
  double start_height = 1.0;
  double warmup = 1.0;     // stationary lead-in, seconds
  double ramp = 2.0;       // smooth speed-up after the warmup

  double circle_radius = 5.0;
  double circle_speed = 0.5;

  double eight_amp_x = 4.0;
  double eight_amp_y = 2.0;
  double eight_period = 40.0;

  double walk_speed = 1.0;

  std::vector<Vec3> waypoints;
  double max_speed = 2.0;
};

struct Trajectory {
  std::vector<TrajectoryPoint> samples;  // dense, at spec.rate
  double rate = 1000.0;

  const TrajectoryPoint& nearest(double t) const;
  Pose pose_at(double t) const;  // interpolated
  double duration() const { return samples.empty() ? 0.0 : samples.back().t; }
};

struct TrajectoryError {
  int segment = -1;  // offending waypoint segment
};

struct TrajectoryResult {
  Trajectory trajectory;
  std::optional<TrajectoryError> error;
};

TrajectoryResult generate_trajectory(const TrajectorySpec& spec, uint32_t seed);

// --- world -----------------------------------------------------------------

struct PlaneSurface {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double reflectivity = 1.0;
};

struct BoxSurface {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  double reflectivity = 1.0;
};

struct WorldModel {
  std::vector<PlaneSurface> planes;
  std::vector<BoxSurface> boxes;
  Vec3 sample_min = Vec3(-10, -10, 0);  // bounds when sampling infinite planes
  Vec3 sample_max = Vec3(10, 10, 4);

  // Nearest positive ray hit; returns range or nothing. Reflectivity of the
  // hit surface is written when a hit occurs.
  std::optional<double> cast(const Vec3& origin, const Vec3& dir, double max_range,
                             double* reflectivity) const;
};

WorldModel box_room_world(double width, double depth, double height, bool clutter = true);
// Rectangular tube, unbounded along y; the single unconstrained direction.
WorldModel corridor_world(double half_width = 2.0, double height = 2.5);
// Just two parallel walls, x = +/- half_width.
WorldModel two_plane_world(double half_width = 2.0);

struct DegradationProfile {
  double visual_track_survival = 1.0;
  double lidar_dropout = 0.0;
  double dust_point_fraction = 0.0;
  double dust_min_range = 0.3;
  double dust_max_range = 3.0;
  double window_start = 0.0;  // active time window
  double window_end = 0.0;

  bool active(double t) const { return t >= window_start && t < window_end; }
};

// --- imu ---------------------------------------------------------------------

struct ImuSynthConfig {
  double rate = 200.0;
  ImuNoiseModel noise;
  bool add_noise = true;
  BiasPair initial_bias;
  Vec3 gravity = default_gravity();
};

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<BiasPair> bias_truth;  // per sample
};

ImuStream synth_imu(const Trajectory& truth, const ImuSynthConfig& config, uint32_t seed);

// --- lidar -------------------------------------------------------------------

struct LidarSynthConfig {
  double scan_rate = 10.0;
  int rings = 16;
  int azimuth_steps = 512;
  double vertical_fov_deg = 30.0;  // total, symmetric
  double max_range = 60.0;
  double range_noise = 0.0;  // 1 sigma, meters
};

struct SimScan {
  Scan scan;
  std::vector<uint8_t> is_dust;  // per point
  Pose pose_at_stamp;            // ground truth at sweep start
};

std::vector<SimScan> synth_lidar(const Trajectory& truth, const WorldModel& world,
                                 const LidarSynthConfig& config,
                                 const DegradationProfile& degradation, uint32_t seed);

// --- vision --------------------------------------------------------------------

struct TrackSynthConfig {
  double frame_rate = 10.0;
  double pixel_noise = 0.0;  // normalized units
  double max_view_angle = 1.0;  // |u|,|v| bound (unit-focal half fov)
  double min_depth = 0.3;
  double max_depth = 40.0;
  CameraModel camera;
};

struct FrameObservations {
  int frame_id = 0;
  double t = 0.0;
  // feature id -> normalized pixel, ordered for determinism
  std::vector<std::pair<int, Eigen::Vector2d>> observations;
};

std::vector<Vec3> sample_landmarks(const WorldModel& world, int count, uint32_t seed);

std::vector<FrameObservations> synth_tracks(const Trajectory& truth,
                                            const std::vector<Vec3>& landmarks,
                                            const TrackSynthConfig& config,
                                            const DegradationProfile& degradation,
                                            uint32_t seed);

}  // namespace odomkit::sim
