#include "odomkit/pipeline.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace odomkit {

namespace fs = std::filesystem;

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.imu = io::read_imu_csv(dir / "imu.csv");
  ds.scans = io::read_scan_dir(dir);
  if (fs::exists(dir / "tracks.csv")) {
    ds.frames = io::read_tracks_csv(dir / "tracks.csv", dir / "frames.csv");
    ds.camera = io::read_camera(dir / "camera.txt");
  }
  if (fs::exists(dir / "groundtruth.tum")) {
    ds.ground_truth = io::read_tum(dir / "groundtruth.tum");
  }
  if (fs::exists(dir / "scenario.txt")) {
    ds.scenario = io::read_key_values(dir / "scenario.txt");
  }
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  io::write_imu_csv(dir / "imu.csv", dataset.imu);
  io::write_scan_dir(dir, dataset.scans);
  if (!dataset.frames.empty()) {
    io::write_tracks_csv(dir / "tracks.csv", dataset.frames);
    io::write_frames_csv(dir / "frames.csv", dataset.frames);
    io::write_camera(dir / "camera.txt", dataset.camera);
  }
  if (!dataset.ground_truth.empty()) {
    io::write_tum(dir / "groundtruth.tum", dataset.ground_truth);
  }
  if (!dataset.scenario.empty()) {
    io::write_key_values(dir / "scenario.txt", dataset.scenario);
  }
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Mat6 clamp_information(const Mat6& info, double max_eig) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(info);
  Eigen::Matrix<double, 6, 1> ev = es.eigenvalues().cwiseMax(0.0).cwiseMin(max_eig);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// The per-engine state the event loop threads over.
struct LioRunner {
  VoxelMap map;
  std::optional<State> prev_state;
  std::deque<ImuSample> imu_buffer;
  std::vector<Vec3> last_scan_world;

  explicit LioRunner(const VoxelMap::Config& cfg) : map(cfg) {}

  void push_imu(const ImuSample& s) {
    imu_buffer.push_back(s);
    const double horizon = prev_state ? prev_state->t - 1.0 : s.t - 2.0;
    while (imu_buffer.size() > 2 && imu_buffer.front().t < horizon) imu_buffer.pop_front();
  }
};

struct OptimizedLog {
  std::map<long, StampedPose> by_time;  // key: microseconds

  void update(const std::vector<State>& nodes) {
    for (const State& s : nodes) {
      by_time[std::lround(s.t * 1e6)] = StampedPose{s.t, s.pose()};
    }
  }
  EvalTrajectory to_trajectory() const {
    EvalTrajectory out;
    out.reserve(by_time.size());
    for (const auto& [k, sp] : by_time) out.push_back(sp);
    return out;
  }
};

struct EngineHub {
  FusionCore fusion;
  LioRunner lio;
  VisualInertialEngine vio;
  OptimizedLog optimized;
  std::mutex mutex;  // guards fusion + optimized in threaded mode

  EngineHub(const PipelineOptions& opt)
      : fusion(opt.fusion), lio(opt.map), vio(opt.vio) {}
};

double scan_sweep_duration(const std::vector<Scan>& scans) {
  if (scans.size() >= 2) return scans[1].stamp - scans[0].stamp;
  if (!scans.empty() && !scans[0].points.empty()) {
    double max_rel = 0.0;
    for (const auto& p : scans[0].points) max_rel = std::max(max_rel, p.relative_time);
    return max_rel > 0 ? max_rel : 0.1;
  }
  return 0.1;
}

void process_scan(const Scan& scan, double sweep, EngineHub& hub, const PipelineOptions& opt,
                  PipelineResult& result, bool locked) {
  const double t0 = now_ms();
  RegisterPrediction pred;
  {
    std::unique_lock<std::mutex> lock(hub.mutex, std::defer_lock);
    if (locked) lock.lock();
    pred.predicted = hub.fusion.state_at(scan.stamp);
    pred.sweep_end_pose = hub.fusion.pose_at(scan.stamp + sweep);
    pred.sweep_duration = sweep;
    // The odometry prior must stay weak next to healthy scan geometry; it
    // takes over only when the ICP information collapses (degenerate scenes).
    pred.pose_information = opt.lio.use_prior
                                ? clamp_information(hub.fusion.prediction().confidence, 1e2)
                                : Mat6::Zero();
  }
  if (hub.lio.prev_state) {
    // IMU chain over [previous keyframe, this scan stamp]; the boundary
    // sample seeds the accumulator.
    Preintegrator acc(BiasPair{hub.lio.prev_state->ba, hub.lio.prev_state->bg},
                      opt.fusion.noise);
    for (const auto& s : hub.lio.imu_buffer) {
      if (s.t < hub.lio.prev_state->t - 1e-9 || s.t > scan.stamp + 1e-9) continue;
      acc.push(s);
    }
    pred.previous_state = hub.lio.prev_state;
    pred.preintegration = acc.delta();
  }

  const RegisterResult res = register_scan(scan, hub.lio.map, pred, opt.lio);
  ++result.lio_scans;
  if (res.report.prior_dominated) ++result.lio_prior_dominated;
  if (!res.report.degenerate_directions.empty()) ++result.lio_degenerate_frames;

  // LiDAR points in world for VIO depth association (bounded sample).
  {
    const Pose pose = res.state.pose();
    const Scan ds = downsample(scan, 2048);
    hub.lio.last_scan_world.clear();
    hub.lio.last_scan_world.reserve(ds.points.size());
    for (const auto& p : ds.points) hub.lio.last_scan_world.push_back(apply(pose, p.position));
  }

  if (hub.lio.prev_state && !res.report.prior_dominated) {
    const State& prev = *hub.lio.prev_state;
    ConstraintMessage msg;
    msg.source = ConstraintSource::lio;
    msg.t_i = prev.t;
    msg.t_j = scan.stamp;
    const Mat3 r_wi = prev.q.toRotationMatrix().transpose();
    msg.dp = r_wi * (res.state.p - prev.p);
    msg.dq = (prev.q.conjugate() * res.state.q).normalized();

    // Map the scan-matching information into the relative-pose tangent and
    // scale unit point weights by the sensor noise.
    Eigen::Matrix<double, 6, 6> basis = Eigen::Matrix<double, 6, 6>::Identity();
    basis.block<3, 3>(0, 0) = prev.q.toRotationMatrix();
    // Registration accuracy is limited by map quality, not per-point noise;
    // cap the claimed information accordingly.
    msg.information =
        clamp_information(basis.transpose() * res.report.pose_information * basis, 1e6);

    SourceReport sr;
    sr.inlier_ratio = res.report.features_total
                          ? static_cast<double>(res.report.correspondences) /
                                res.report.features_total
                          : 0.0;
    sr.mean_weighted_residual = res.report.mean_weighted_residual;
    sr.degenerate_directions = static_cast<int>(res.report.degenerate_directions.size());
    msg.reliability = compute_reliability(sr, opt.fusion.reliability_rho);

    std::unique_lock<std::mutex> lock(hub.mutex, std::defer_lock);
    if (locked) lock.lock();
    hub.fusion.ingest_constraint(msg);
    const auto batch = hub.fusion.optimize_fusion();
    result.constraints_applied += batch.constraints_applied;
    hub.optimized.update(hub.fusion.node_states());
  }

  State keyed = res.state;
  keyed.t = scan.stamp;
  hub.lio.prev_state = keyed;
  result.lio_timing.total_ms += now_ms() - t0;
  ++result.lio_timing.count;
}

void process_frame(const sim::FrameObservations& frame, EngineHub& hub,
                   const PipelineOptions& opt, PipelineResult& result, bool locked) {
  const double t0 = now_ms();
  State predicted;
  Mat6 info;
  {
    std::unique_lock<std::mutex> lock(hub.mutex, std::defer_lock);
    if (locked) lock.lock();
    predicted = hub.fusion.state_at(frame.t);
    info = clamp_information(hub.fusion.prediction().confidence, 1e2);
  }

  VioFrameInput input;
  input.frame_id = frame.frame_id;
  input.t = frame.t;
  for (const auto& [fid, uv] : frame.observations) input.observations[fid] = uv;

  // Recent LiDAR map points into this frame's camera for depth association.
  // The cloud lives in the LiDAR engine's frame; when a registered pose for
  // this timestamp exists, project with it so the depths stay consistent
  // even if the fusion estimate and the scan frame drift apart.
  Pose body = predicted.pose();
  if (hub.lio.prev_state && std::abs(hub.lio.prev_state->t - frame.t) < 0.005) {
    body = hub.lio.prev_state->pose();
  }
  const Pose cam = compose(body, opt.vio.camera.body_to_camera);
  const Pose cam_inv = inverse(cam);
  for (const Vec3& pw : hub.lio.last_scan_world) {
    const Vec3 pc = apply(cam_inv, pw);
    if (pc.z() < 0.2 || pc.z() > 50.0) continue;
    if (std::abs(pc.x() / pc.z()) > 1.5 || std::abs(pc.y() / pc.z()) > 1.5) continue;
    input.lidar_in_camera.push_back(pc);
  }

  if (getenv("VIO_DEBUG") && frame.frame_id % 20 == 5) fprintf(stderr, "frame %d cloud=%zu obs=%zu\n", frame.frame_id, input.lidar_in_camera.size(), input.observations.size());
  const auto step = hub.vio.push_frame(input, predicted, info);
  if (step.keyframe) ++result.vio_keyframes;
  if (step.visually_degraded) ++result.vio_degraded;

  if (step.constraint) {
    const VioConstraint& c = *step.constraint;
    ConstraintMessage msg;
    msg.source = ConstraintSource::vio;
    msg.t_i = c.t_i;
    msg.t_j = c.t_j;
    msg.dp = c.dp;
    msg.dq = c.dq;
    msg.information = c.information;

    SourceReport sr;
    sr.inlier_ratio = std::min(1.0, c.used_tracks / 100.0);
    sr.mean_weighted_residual = c.mean_residual;
    sr.degenerate_directions = c.degenerate_directions;
    msg.reliability = compute_reliability(sr, opt.fusion.reliability_rho);

    std::unique_lock<std::mutex> lock(hub.mutex, std::defer_lock);
    if (locked) lock.lock();
    hub.fusion.ingest_constraint(msg);
    const auto batch = hub.fusion.optimize_fusion();
    result.constraints_applied += batch.constraints_applied;
    hub.optimized.update(hub.fusion.node_states());
  }
  result.vio_timing.total_ms += now_ms() - t0;
  ++result.vio_timing.count;
}

// Bounded blocking queue for the threaded mode.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock<std::mutex> lock(m_);
    cv_full_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(item));
    cv_empty_.notify_one();
  }
  bool pop(T& out) {
    std::unique_lock<std::mutex> lock(m_);
    cv_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return false;
    out = std::move(q_.front());
    q_.pop_front();
    cv_full_.notify_one();
    return true;
  }
  void close() {
    std::lock_guard<std::mutex> lock(m_);
    closed_ = true;
    cv_empty_.notify_all();
    cv_full_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_empty_, cv_full_;
  std::deque<T> q_;
  size_t capacity_;
  bool closed_ = false;
};

struct LioEvent {
  bool is_scan = false;
  Scan scan;
  ImuSample imu;
};

struct VioEvent {
  bool is_frame = false;
  sim::FrameObservations frame;
  ImuSample imu;
};

}  // namespace

PipelineResult run_pipeline(const Dataset& dataset, const PipelineOptions& options) {
  PipelineResult result;
  const double wall0 = now_ms();
  EngineHub hub(options);

  // Gravity alignment from the stationary lead-in.
  {
    std::vector<ImuSample> lead;
    for (const auto& s : dataset.imu) {
      if (!dataset.imu.empty() && s.t - dataset.imu.front().t > options.init_stationary_span) {
        break;
      }
      lead.push_back(s);
    }
    hub.fusion.initialize_gravity(lead);
  }

  const double sweep = scan_sweep_duration(dataset.scans);

  // Event schedule: scans complete at stamp + sweep, frames at their stamp.
  struct Event {
    double t;
    int kind;  // 0 imu, 1 scan, 2 frame
    size_t index;
  };
  std::vector<Event> events;
  events.reserve(dataset.imu.size() + dataset.scans.size() + dataset.frames.size());
  for (size_t i = 0; i < dataset.imu.size(); ++i) events.push_back({dataset.imu[i].t, 0, i});
  if (options.enable_lio) {
    for (size_t i = 0; i < dataset.scans.size(); ++i) {
      events.push_back({dataset.scans[i].stamp + sweep, 1, i});
    }
  }
  if (options.enable_vio && !dataset.frames.empty()) {
    for (size_t i = 0; i < dataset.frames.size(); ++i) {
      events.push_back({dataset.frames[i].t + sweep, 2, i});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.kind < b.kind;
  });

  if (options.deterministic) {
    for (const Event& ev : events) {
      switch (ev.kind) {
        case 0: {
          const ImuSample& s = dataset.imu[ev.index];
          const double t0 = now_ms();
          if (auto out = hub.fusion.ingest_imu(s)) {
            result.highrate.push_back({s.t, out->pose()});
          }
          result.fusion_timing.total_ms += now_ms() - t0;
          ++result.fusion_timing.count;
          if (options.enable_lio) hub.lio.push_imu(s);
          if (options.enable_vio) hub.vio.push_imu(s);
          break;
        }
        case 1:
          process_scan(dataset.scans[ev.index], sweep, hub, options, result, false);
          break;
        case 2:
          process_frame(dataset.frames[ev.index], hub, options, result, false);
          break;
      }
    }
  } else {
    BoundedQueue<LioEvent> lio_queue(64);
    BoundedQueue<VioEvent> vio_queue(64);

    std::thread lio_thread([&] {
      LioEvent ev;
      while (lio_queue.pop(ev)) {
        if (ev.is_scan) {
          process_scan(ev.scan, sweep, hub, options, result, true);
        } else {
          hub.lio.push_imu(ev.imu);
        }
      }
    });
    std::thread vio_thread([&] {
      VioEvent ev;
      while (vio_queue.pop(ev)) {
        if (ev.is_frame) {
          process_frame(ev.frame, hub, options, result, true);
        } else {
          hub.vio.push_imu(ev.imu);
        }
      }
    });

    for (const Event& ev : events) {
      switch (ev.kind) {
        case 0: {
          const ImuSample& s = dataset.imu[ev.index];
          {
            std::lock_guard<std::mutex> lock(hub.mutex);
            if (auto out = hub.fusion.ingest_imu(s)) {
              result.highrate.push_back({s.t, out->pose()});
            }
          }
          if (options.enable_lio) {
            LioEvent le;
            le.imu = s;
            lio_queue.push(le);
          }
          if (options.enable_vio && !dataset.frames.empty()) {
            VioEvent ve;
            ve.imu = s;
            vio_queue.push(ve);
          }
          break;
        }
        case 1: {
          LioEvent le;
          le.is_scan = true;
          le.scan = dataset.scans[ev.index];
          lio_queue.push(le);
          break;
        }
        case 2: {
          VioEvent ve;
          ve.is_frame = true;
          ve.frame = dataset.frames[ev.index];
          vio_queue.push(ve);
          break;
        }
      }
    }
    lio_queue.close();
    vio_queue.close();
    lio_thread.join();
    vio_thread.join();
  }

  result.optimized = hub.optimized.to_trajectory();
  result.map_points = hub.lio.map.points();
  result.map_voxel_size = hub.lio.map.voxel_size();
  result.wall_ms = now_ms() - wall0;
  return result;
}

// --- scenarios ---------------------------------------------------------------

namespace {

CameraModel forward_camera() {
  CameraModel cam;
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(0, 0, -1);
  r.col(2) = Vec3(1, 0, 0);
  cam.body_to_camera = Pose{Quat(r), Vec3(0.05, 0.0, 0.02)};
  return cam;
}

ScenarioSpec base_scenario(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.trajectory.profile = sim::TrajectorySpec::Profile::figure_eight;
  s.trajectory.duration = 60.0;
  s.trajectory.eight_amp_x = 3.5;
  s.trajectory.eight_amp_y = 1.8;
  s.trajectory.eight_period = 29.0;
  s.world = sim::box_room_world(12, 12, 2.8);
  s.imu.rate = 200.0;
  s.imu.noise.accel_noise_density = 0.01;
  s.imu.noise.gyro_noise_density = 5e-4;
  s.imu.noise.accel_bias_walk = 1e-4;
  s.imu.noise.gyro_bias_walk = 1e-5;
  s.imu.initial_bias.ba = Vec3(0.05, -0.03, 0.02);
  s.imu.initial_bias.bg = Vec3(0.004, -0.002, 0.003);
  s.lidar.scan_rate = 10.0;
  s.lidar.rings = 16;
  s.lidar.azimuth_steps = 512;
  s.lidar.vertical_fov_deg = 40.0;  // floor and ceiling in view at room scale
  s.lidar.range_noise = 0.01;
  s.tracks.frame_rate = 10.0;
  s.tracks.pixel_noise = 0.002;
  s.tracks.camera = forward_camera();
  s.landmarks = 250;
  return s;
}

}  // namespace

std::vector<std::string> scenario_names() {
  return {"clean-room", "dark-room", "white-wall", "long-corridor", "constrained", "dust"};
}

std::optional<ScenarioSpec> scenario_by_name(const std::string& name, uint32_t seed) {
  (void)seed;
  if (name == "clean-room") return base_scenario(name);
  if (name == "dark-room") {
    ScenarioSpec s = base_scenario(name);
    s.degradation.visual_track_survival = 0.05;
    s.degradation.window_start = 5.0;
    s.degradation.window_end = 55.0;
    return s;
  }
  if (name == "white-wall") {
    ScenarioSpec s = base_scenario(name);
    s.degradation.visual_track_survival = 0.15;
    s.degradation.window_start = 10.0;
    s.degradation.window_end = 50.0;
    return s;
  }
  if (name == "long-corridor") {
    ScenarioSpec s = base_scenario(name);
    s.world = sim::corridor_world(2.0, 2.5);
    s.trajectory = sim::TrajectorySpec{};
    s.trajectory.profile = sim::TrajectorySpec::Profile::corridor_walk;
    s.trajectory.duration = 40.0;
    s.trajectory.walk_speed = 1.0;
    s.landmarks = 400;
    return s;
  }
  if (name == "constrained") {
    ScenarioSpec s = base_scenario(name);
    s.world = sim::box_room_world(4.5, 4.5, 2.5);
    s.trajectory = sim::TrajectorySpec{};
    s.trajectory.profile = sim::TrajectorySpec::Profile::circle;
    s.trajectory.duration = 40.0;
    s.trajectory.circle_radius = 1.0;
    s.trajectory.circle_speed = 0.3;
    return s;
  }
  if (name == "dust") {
    ScenarioSpec s = base_scenario(name);
    s.world = sim::box_room_world(14, 14, 4.5);
    s.trajectory = sim::TrajectorySpec{};
    s.trajectory.profile = sim::TrajectorySpec::Profile::circle;
    s.trajectory.duration = 40.0;
    s.trajectory.circle_radius = 3.0;
    s.trajectory.circle_speed = 0.5;
    s.degradation.dust_point_fraction = 0.3;
    s.degradation.window_start = 5.0;
    s.degradation.window_end = 35.0;
    return s;
  }
  return std::nullopt;
}

Dataset simulate_scenario(const ScenarioSpec& spec, uint32_t seed) {
  Dataset ds;
  const auto traj = sim::generate_trajectory(spec.trajectory, seed);
  if (traj.error) throw std::runtime_error("scenario trajectory rejected");
  const auto& truth = traj.trajectory;

  const auto imu = sim::synth_imu(truth, spec.imu, seed + 1);
  ds.imu = imu.samples;

  const auto scans = sim::synth_lidar(truth, spec.world, spec.lidar, spec.degradation, seed + 2);
  ds.scans.reserve(scans.size());
  for (const auto& s : scans) ds.scans.push_back(s.scan);

  const auto landmarks = sim::sample_landmarks(spec.world, spec.landmarks, seed + 3);
  ds.frames = sim::synth_tracks(truth, landmarks, spec.tracks, spec.degradation, seed + 4);
  ds.camera = spec.tracks.camera;

  ds.ground_truth.reserve(truth.samples.size() / 100 + 1);
  for (size_t k = 0; k < truth.samples.size(); k += 100) {  // 10 Hz ground truth
    const auto& pt = truth.samples[k];
    ds.ground_truth.push_back({pt.t, Pose{pt.q, pt.p}});
  }

  ds.scenario["scenario.name"] = spec.name;
  ds.scenario["scenario.seed"] = std::to_string(seed);
  ds.scenario["scenario.duration"] = std::to_string(spec.trajectory.duration);
  ds.scenario["scenario.dust_fraction"] =
      std::to_string(spec.degradation.dust_point_fraction);
  ds.scenario["scenario.visual_survival"] =
      std::to_string(spec.degradation.visual_track_survival);
  return ds;
}

}  // namespace odomkit
