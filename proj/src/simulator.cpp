#include "odomkit/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace odomkit::sim {

namespace {

// Quintic smoothstep and its integral; the C2 speed ramp shared by all
// profiles (IMU synthesis needs twice-differentiable trajectories).
double smoothstep5(double x) { return ((6 * x - 15) * x + 10) * x * x * x; }
double smoothstep5_d(double x) { return ((30 * x - 60) * x + 30) * x * x; }
double smoothstep5_dd(double x) { return ((120 * x - 180) * x + 60) * x; }
double smoothstep5_int(double x) { return ((x - 3) * x + 2.5) * x * x * x * x; }

struct Warp {
  double tau = 0.0;     // warped time
  double sigma = 0.0;   // d tau / dt
  double sigma_d = 0.0; // d^2 tau / dt^2
};

Warp warp_at(double t, double warmup, double ramp) {
  Warp w;
  if (t <= warmup) return w;
  const double u = t - warmup;
  if (ramp <= 0.0 || u >= ramp) {
    w.tau = (ramp > 0 ? ramp * smoothstep5_int(1.0) : 0.0) + (u - std::max(ramp, 0.0));
    w.sigma = 1.0;
    return w;
  }
  const double x = u / ramp;
  w.tau = ramp * smoothstep5_int(x);
  w.sigma = smoothstep5(x);
  w.sigma_d = smoothstep5_d(x) / ramp;
  return w;
}

struct ProfileEval {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();   // d p / d tau
  Vec3 a = Vec3::Zero();   // d^2 p / d tau^2
  double yaw = 0.0;
  double yaw_d = 0.0;      // d yaw / d tau
};

}  // namespace

const TrajectoryPoint& Trajectory::nearest(double t) const {
  const double t0 = samples.front().t;
  long idx = std::lround((t - t0) * rate);
  idx = std::clamp(idx, 0L, static_cast<long>(samples.size()) - 1);
  return samples[idx];
}

Pose Trajectory::pose_at(double t) const {
  const double t0 = samples.front().t;
  const double x = (t - t0) * rate;
  const long lo = std::clamp(static_cast<long>(std::floor(x)), 0L,
                             static_cast<long>(samples.size()) - 1);
  const long hi = std::min(lo + 1, static_cast<long>(samples.size()) - 1);
  const double s = std::clamp(x - lo, 0.0, 1.0);
  return interpolate({samples[lo].q, samples[lo].p}, {samples[hi].q, samples[hi].p}, s);
}

TrajectoryResult generate_trajectory(const TrajectorySpec& spec, uint32_t seed) {
  (void)seed;  // profiles are analytic; the seed is reserved for waypoint jitter
  TrajectoryResult out;

  // Waypoint mode precomputation with rate-bound validation.
  std::vector<double> seg_T;
  if (spec.profile == TrajectorySpec::Profile::waypoints) {
    if (spec.waypoints.size() < 2 || spec.max_speed <= 0.0) {
      out.error = TrajectoryError{0};
      return out;
    }
    for (size_t i = 0; i + 1 < spec.waypoints.size(); ++i) {
      const double dist = (spec.waypoints[i + 1] - spec.waypoints[i]).norm();
      // quintic smoothstep peaks at 1.875 d/T
      const double T = std::max(1.875 * dist / (0.9 * spec.max_speed), 0.5);
      if (1.875 * dist / T > spec.max_speed) {
        out.error = TrajectoryError{static_cast<int>(i)};
        return out;
      }
      seg_T.push_back(T);
    }
  }

  auto eval_profile = [&](double tau) {
    ProfileEval e;
    switch (spec.profile) {
      case TrajectorySpec::Profile::stationary:
        e.p = Vec3(0, 0, spec.start_height);
        break;
      case TrajectorySpec::Profile::circle: {
        const double w = spec.circle_speed / spec.circle_radius;
        const double th = w * tau;
        const Vec3 center(0, spec.circle_radius, spec.start_height);
        e.p = center + spec.circle_radius * Vec3(std::sin(th), -std::cos(th), 0);
        e.v = spec.circle_speed * Vec3(std::cos(th), std::sin(th), 0);
        e.a = spec.circle_speed * w * Vec3(-std::sin(th), std::cos(th), 0);
        e.yaw = th;
        e.yaw_d = w;
        break;
      }
      case TrajectorySpec::Profile::figure_eight: {
        const double w = 2 * M_PI / spec.eight_period;
        const double A = spec.eight_amp_x, B = spec.eight_amp_y;
        e.p = Vec3(A * std::sin(w * tau), B * std::sin(2 * w * tau), spec.start_height);
        e.v = Vec3(A * w * std::cos(w * tau), 2 * B * w * std::cos(2 * w * tau), 0);
        e.a = Vec3(-A * w * w * std::sin(w * tau), -4 * B * w * w * std::sin(2 * w * tau), 0);
        e.yaw = std::atan2(e.v.y(), e.v.x());
        const double v2 = e.v.head<2>().squaredNorm();
        e.yaw_d = v2 > 1e-12 ? (e.v.x() * e.a.y() - e.v.y() * e.a.x()) / v2 : 0.0;
        break;
      }
      case TrajectorySpec::Profile::corridor_walk: {
        // gentle hand-carried sway keeps the path from being collinear
        const double ws = 2 * M_PI / 10.0;
        const double amp = 0.25;
        e.p = Vec3(amp * std::sin(ws * tau), spec.walk_speed * tau, spec.start_height);
        e.v = Vec3(amp * ws * std::cos(ws * tau), spec.walk_speed, 0);
        e.a = Vec3(-amp * ws * ws * std::sin(ws * tau), 0, 0);
        e.yaw = std::atan2(e.v.y(), e.v.x());
        const double v2 = e.v.head<2>().squaredNorm();
        e.yaw_d = v2 > 1e-12 ? (e.v.x() * e.a.y() - e.v.y() * e.a.x()) / v2 : 0.0;
        break;
      }
      case TrajectorySpec::Profile::waypoints: {
        double t_acc = 0.0;
        size_t i = 0;
        for (; i < seg_T.size(); ++i) {
          if (tau < t_acc + seg_T[i]) break;
          t_acc += seg_T[i];
        }
        if (i >= seg_T.size()) {
          e.p = spec.waypoints.back();
          break;
        }
        const double x = (tau - t_acc) / seg_T[i];
        const Vec3 d = spec.waypoints[i + 1] - spec.waypoints[i];
        e.p = spec.waypoints[i] + d * smoothstep5(x);
        e.v = d * smoothstep5_d(x) / seg_T[i];
        e.a = d * smoothstep5_dd(x) / (seg_T[i] * seg_T[i]);
        break;
      }
    }
    return e;
  };

  const int n = static_cast<int>(std::round(spec.duration * spec.rate));
  out.trajectory.rate = spec.rate;
  out.trajectory.samples.reserve(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double t = k / spec.rate;
    const Warp w = warp_at(t, spec.warmup, spec.ramp);
    const ProfileEval e = eval_profile(w.tau);

    TrajectoryPoint pt;
    pt.t = t;
    pt.p = e.p;
    pt.v = e.v * w.sigma;
    pt.a_world = e.a * w.sigma * w.sigma + e.v * w.sigma_d;
    pt.q = exp_so3(Vec3(0, 0, e.yaw));
    pt.omega_body = Vec3(0, 0, e.yaw_d * w.sigma);
    out.trajectory.samples.push_back(pt);
  }
  return out;
}

// --- world -------------------------------------------------------------------

std::optional<double> WorldModel::cast(const Vec3& origin, const Vec3& dir, double max_range,
                                       double* reflectivity) const {
  double best = max_range;
  double best_refl = 1.0;
  bool hit = false;

  for (const PlaneSurface& pl : planes) {
    const double denom = pl.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double t = pl.normal.dot(pl.point - origin) / denom;
    if (t > 1e-6 && t < best) {
      best = t;
      best_refl = pl.reflectivity;
      hit = true;
    }
  }
  for (const BoxSurface& box : boxes) {
    double t0 = 1e-6, t1 = best;
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      if (std::abs(dir[a]) < 1e-12) {
        ok = origin[a] >= box.min[a] && origin[a] <= box.max[a];
        continue;
      }
      double lo = (box.min[a] - origin[a]) / dir[a];
      double hi = (box.max[a] - origin[a]) / dir[a];
      if (lo > hi) std::swap(lo, hi);
      t0 = std::max(t0, lo);
      t1 = std::min(t1, hi);
      ok = t0 <= t1;
    }
    if (ok && t0 > 1e-6 && t0 < best) {
      best = t0;
      best_refl = box.reflectivity;
      hit = true;
    }
  }
  if (!hit) return std::nullopt;
  if (reflectivity) *reflectivity = best_refl;
  return best;
}

WorldModel box_room_world(double width, double depth, double height, bool clutter) {
  WorldModel w;
  w.planes.push_back({Vec3(0, 0, 0), Vec3::UnitZ(), 1.0});
  w.planes.push_back({Vec3(0, 0, height), Vec3::UnitZ(), 1.0});
  w.planes.push_back({Vec3(width / 2, 0, 0), Vec3::UnitX(), 1.0});
  w.planes.push_back({Vec3(-width / 2, 0, 0), Vec3::UnitX(), 1.0});
  w.planes.push_back({Vec3(0, depth / 2, 0), Vec3::UnitY(), 1.0});
  w.planes.push_back({Vec3(0, -depth / 2, 0), Vec3::UnitY(), 1.0});
  if (clutter) {
    auto add_box = [&](double cx, double cy, double sx, double sy, double sz) {
      w.boxes.push_back({Vec3(cx - sx / 2, cy - sy / 2, 0), Vec3(cx + sx / 2, cy + sy / 2, sz),
                         1.0});
    };
    add_box(width * 0.3, depth * 0.25, 0.6, 0.6, 1.2);
    add_box(-width * 0.28, -depth * 0.2, 0.8, 0.5, 0.9);
    add_box(-width * 0.15, depth * 0.3, 0.4, 0.4, 1.6);
  }
  w.sample_min = Vec3(-width / 2, -depth / 2, 0);
  w.sample_max = Vec3(width / 2, depth / 2, height);
  return w;
}

WorldModel corridor_world(double half_width, double height) {
  WorldModel w;
  w.planes.push_back({Vec3(half_width, 0, 0), Vec3::UnitX(), 1.0});
  w.planes.push_back({Vec3(-half_width, 0, 0), Vec3::UnitX(), 1.0});
  w.planes.push_back({Vec3(0, 0, 0), Vec3::UnitZ(), 1.0});
  w.planes.push_back({Vec3(0, 0, height), Vec3::UnitZ(), 1.0});
  w.sample_min = Vec3(-half_width, -5, 0);
  w.sample_max = Vec3(half_width, 60, height);
  return w;
}

WorldModel two_plane_world(double half_width) {
  WorldModel w;
  w.planes.push_back({Vec3(half_width, 0, 0), Vec3::UnitX(), 1.0});
  w.planes.push_back({Vec3(-half_width, 0, 0), Vec3::UnitX(), 1.0});
  w.sample_min = Vec3(-half_width, -10, 0);
  w.sample_max = Vec3(half_width, 10, 3);
  return w;
}

// --- imu ---------------------------------------------------------------------

ImuStream synth_imu(const Trajectory& truth, const ImuSynthConfig& config, uint32_t seed) {
  ImuStream out;
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int stride = std::max(1, static_cast<int>(std::round(truth.rate / config.rate)));
  const double dt = stride / truth.rate;
  const double sqrt_rate = std::sqrt(1.0 / dt);
  const double sqrt_dt = std::sqrt(dt);

  BiasPair bias = config.initial_bias;
  for (size_t k = 0; k < truth.samples.size(); k += stride) {
    const TrajectoryPoint& pt = truth.samples[k];
    const Mat3 r_t = pt.q.toRotationMatrix().transpose();

    ImuSample s;
    s.t = pt.t;
    s.accel = r_t * (pt.a_world - config.gravity) + bias.ba;
    s.gyro = pt.omega_body + bias.bg;
    if (config.add_noise) {
      s.accel += config.noise.accel_noise_density * sqrt_rate *
                 Vec3(gauss(rng), gauss(rng), gauss(rng));
      s.gyro += config.noise.gyro_noise_density * sqrt_rate *
                Vec3(gauss(rng), gauss(rng), gauss(rng));
      bias.ba += config.noise.accel_bias_walk * sqrt_dt * Vec3(gauss(rng), gauss(rng), gauss(rng));
      bias.bg += config.noise.gyro_bias_walk * sqrt_dt * Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    out.samples.push_back(s);
    out.bias_truth.push_back(bias);
  }
  return out;
}

// --- lidar -------------------------------------------------------------------

std::vector<SimScan> synth_lidar(const Trajectory& truth, const WorldModel& world,
                                 const LidarSynthConfig& config,
                                 const DegradationProfile& degradation, uint32_t seed) {
  std::vector<SimScan> out;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double sweep = 1.0 / config.scan_rate;
  const int n_scans = static_cast<int>(std::floor(truth.duration() * config.scan_rate));
  const double fov = config.vertical_fov_deg * M_PI / 180.0;

  for (int si = 0; si < n_scans; ++si) {
    SimScan s;
    s.scan.stamp = si * sweep;
    s.pose_at_stamp = truth.pose_at(s.scan.stamp);
    s.scan.points.reserve(config.azimuth_steps * config.rings);

    for (int a = 0; a < config.azimuth_steps; ++a) {
      const double rel = sweep * a / config.azimuth_steps;
      const Pose pose = truth.pose_at(s.scan.stamp + rel);
      const Mat3 r = pose.rotation.toRotationMatrix();
      const double az = 2 * M_PI * a / config.azimuth_steps;

      for (int ring = 0; ring < config.rings; ++ring) {
        const double el =
            config.rings > 1 ? -fov / 2 + fov * ring / (config.rings - 1) : 0.0;
        const Vec3 dir_sensor(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                              std::sin(el));
        const Vec3 dir_world = r * dir_sensor;

        // Fixed draw budget per ray keeps runs with and without degradation
        // aligned outside the degradation window.
        const double u_drop = uni(rng);
        const double u_dust = uni(rng);
        const double u_dust_range = uni(rng);
        const double n_range = gauss(rng);
        const double u_refl = uni(rng);

        const bool degraded = degradation.active(s.scan.stamp + rel);
        if (degraded && u_dust < degradation.dust_point_fraction) {
          const double range = degradation.dust_min_range +
                               u_dust_range * (degradation.dust_max_range -
                                               degradation.dust_min_range);
          s.scan.points.push_back({dir_sensor * range, rel});
          s.is_dust.push_back(1);
          continue;
        }
        if (degraded && u_drop < degradation.lidar_dropout) continue;

        double reflectivity = 1.0;
        const auto range = world.cast(pose.translation, dir_world, config.max_range, &reflectivity);
        if (!range) continue;
        if (u_refl >= reflectivity) continue;
        const double measured = *range + config.range_noise * n_range;
        s.scan.points.push_back({dir_sensor * measured, rel});
        s.is_dust.push_back(0);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- vision --------------------------------------------------------------------

std::vector<Vec3> sample_landmarks(const WorldModel& world, int count, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> out;
  const size_t n_surfaces = world.planes.size() + world.boxes.size();
  if (n_surfaces == 0) return out;

  auto sample_box = [&](const Vec3& lo, const Vec3& hi) {
    return Vec3(lo.x() + uni(rng) * (hi.x() - lo.x()), lo.y() + uni(rng) * (hi.y() - lo.y()),
                lo.z() + uni(rng) * (hi.z() - lo.z()));
  };

  std::uniform_int_distribution<size_t> pick(0, n_surfaces - 1);
  while (static_cast<int>(out.size()) < count) {
    const size_t idx = pick(rng);
    if (idx < world.planes.size()) {
      const PlaneSurface& pl = world.planes[idx];
      const Vec3 raw = sample_box(world.sample_min, world.sample_max);
      out.push_back(raw - pl.normal * pl.normal.dot(raw - pl.point));
    } else {
      const BoxSurface& box = world.boxes[idx - world.planes.size()];
      Vec3 p = sample_box(box.min, box.max);
      const int face = static_cast<int>(uni(rng) * 6) % 6;
      p[face / 2] = (face % 2) ? box.max[face / 2] : box.min[face / 2];
      out.push_back(p);
    }
  }
  return out;
}

std::vector<FrameObservations> synth_tracks(const Trajectory& truth,
                                            const std::vector<Vec3>& landmarks,
                                            const TrackSynthConfig& config,
                                            const DegradationProfile& degradation,
                                            uint32_t seed) {
  std::vector<FrameObservations> out;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n_frames = static_cast<int>(std::floor(truth.duration() * config.frame_rate)) + 1;
  for (int f = 0; f < n_frames; ++f) {
    FrameObservations frame;
    frame.frame_id = f;
    frame.t = f / config.frame_rate;
    const Pose body = truth.pose_at(frame.t);
    const Pose cam = compose(body, config.camera.body_to_camera);
    const Pose cam_inv = inverse(cam);

    for (size_t li = 0; li < landmarks.size(); ++li) {
      const double u_survive = uni(rng);
      const double nx = gauss(rng);
      const double ny = gauss(rng);

      const Vec3 pc = apply(cam_inv, landmarks[li]);
      if (pc.z() < config.min_depth || pc.z() > config.max_depth) continue;
      const double u = pc.x() / pc.z();
      const double v = pc.y() / pc.z();
      if (std::abs(u) > config.max_view_angle || std::abs(v) > config.max_view_angle) continue;
      if (degradation.active(frame.t) && u_survive >= degradation.visual_track_survival) continue;

      frame.observations.emplace_back(
          static_cast<int>(li),
          Eigen::Vector2d(u + config.pixel_noise * nx, v + config.pixel_noise * ny));
    }
    out.push_back(std::move(frame));
  }
  return out;
}

}  // namespace odomkit::sim
