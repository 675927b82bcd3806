#include "odomkit/visual_odometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace odomkit {

std::optional<double> associate_depth(const Eigen::Vector2d& pixel,
                                      const std::vector<Vec3>& lidar_points_in_camera) {
  constexpr double kMaxAngle = 1.0 * M_PI / 180.0;
  constexpr double kEps = 1e-6;
  const Vec3 ray = Vec3(pixel.x(), pixel.y(), 1.0).normalized();

  struct Candidate {
    double angle;
    double depth;
  };
  std::vector<Candidate> candidates;
  for (const Vec3& p : lidar_points_in_camera) {
    if (p.z() <= 0.0) continue;
    const double c = std::clamp(ray.dot(p.normalized()), -1.0, 1.0);
    const double angle = std::acos(c);
    if (angle <= kMaxAngle) candidates.push_back({angle, p.z()});
  }
  if (candidates.empty()) return std::nullopt;
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.angle < b.angle; });
  if (candidates.size() > 3) candidates.resize(3);

  double wsum = 0.0, depth = 0.0;
  for (const auto& c : candidates) {
    const double w = 1.0 / (c.angle + kEps);
    wsum += w;
    depth += w * c.depth;
  }
  return depth / wsum;
}

ReprojectionEval reprojection_residual(const State& state_a, const State& state_b,
                                       const Eigen::Vector2d& obs_a,
                                       const Eigen::Vector2d& obs_b, double depth_in_a,
                                       const Pose& body_to_camera) {
  ReprojectionEval out;
  const Vec3 x_ca(obs_a.x() * depth_in_a, obs_a.y() * depth_in_a, depth_in_a);
  const Vec3 x_w = state_a.q * (body_to_camera.rotation * x_ca + body_to_camera.translation) +
                   state_a.p;
  const Vec3 x_bb = state_b.q.conjugate() * (x_w - state_b.p);
  const Vec3 x_cb =
      body_to_camera.rotation.conjugate() * (x_bb - body_to_camera.translation);
  if (x_cb.z() < 0.05) return out;
  out.valid = true;
  out.residual = obs_b - Eigen::Vector2d(x_cb.x() / x_cb.z(), x_cb.y() / x_cb.z());
  return out;
}

VisualInertialEngine::VisualInertialEngine(const VioConfig& config) : config_(config) {}

void VisualInertialEngine::push_imu(const ImuSample& sample) {
  imu_buffer_.push_back(sample);
  const double horizon = kf_times_.empty() ? sample.t - 2.0 : kf_times_.front() - 1.0;
  while (imu_buffer_.size() > 2 && imu_buffer_.front().t < horizon) imu_buffer_.pop_front();
}

void VisualInertialEngine::triangulate_missing_depths() {
  for (auto& [fid, track] : tracks_) {
    if (track.depth || track.obs.size() < 2) continue;
    // Two-view midpoint triangulation from the first pair of keyframes.
    const auto& [slot_a, uv_a] = track.obs[0];
    const auto& [slot_b, uv_b] = track.obs[1];
    track.anchor_slot = slot_a;
    const Pose cam_a = compose(kf_states_[slot_a].pose(), config_.camera.body_to_camera);
    const Pose cam_b = compose(kf_states_[slot_b].pose(), config_.camera.body_to_camera);
    const Vec3 dir_a = cam_a.rotation * Vec3(uv_a.x(), uv_a.y(), 1.0).normalized();
    const Vec3 dir_b = cam_b.rotation * Vec3(uv_b.x(), uv_b.y(), 1.0).normalized();
    const Vec3 base = cam_b.translation - cam_a.translation;
    if (base.norm() < 0.02) continue;  // baseline too small

    // Solve for the two ray parameters via normal equations.
    Eigen::Matrix2d m;
    m << dir_a.dot(dir_a), -dir_a.dot(dir_b), dir_a.dot(dir_b), -dir_b.dot(dir_b);
    Eigen::Vector2d rhs(dir_a.dot(base), dir_b.dot(base));
    if (std::abs(m.determinant()) < 1e-9) continue;
    const Eigen::Vector2d st = m.inverse() * rhs;
    if (st(0) <= 0.1 || st(1) <= 0.1) continue;
    const Vec3 pt = 0.5 * (cam_a.translation + st(0) * dir_a + cam_b.translation +
                           st(1) * dir_b);
    const Vec3 in_cam_a = apply(inverse(cam_a), pt);
    if (in_cam_a.z() < 0.1) continue;
    track.depth = in_cam_a.z();
    track.source = DepthSource::triangulated;
  }
}

VisualInertialEngine::StepResult VisualInertialEngine::push_frame(
    const VioFrameInput& frame, const State& predicted_state,
    const Mat6& prediction_information) {
  StepResult result;
  ++frames_since_keyframe_;

  bool keyframe = kf_states_.empty();
  if (!keyframe && frames_since_keyframe_ >= config_.keyframe_stride) keyframe = true;
  if (!keyframe && !kf_states_.empty() &&
      (predicted_state.p - kf_states_.back().p).norm() > config_.keyframe_translation) {
    keyframe = true;
  }
  if (!keyframe) return result;
  result.keyframe = true;
  frames_since_keyframe_ = 0;

  // Close the preintegration chain over [last keyframe, this frame]; the
  // boundary sample seeds the chain so intervals tile exactly.
  State new_state = predicted_state;
  if (!kf_states_.empty()) {
    Preintegrator acc(bias_, ImuNoiseModel{});
    const double t_a = kf_times_.back();
    for (const auto& s : imu_buffer_) {
      if (s.t < t_a - 1e-9 || s.t > frame.t + 1e-9) continue;
      acc.push(s);
    }
    kf_deltas_.push_back(acc.delta());
    new_state = predict(kf_states_.back(), acc.delta(), config_.gravity);
    // The fused prediction carries corrections the chain cannot see.
    new_state.p = predicted_state.p;
    new_state.q = predicted_state.q;
  }
  kf_states_.push_back(new_state);
  kf_times_.push_back(frame.t);

  const int slot = static_cast<int>(kf_states_.size()) - 1;
  for (const auto& [fid, uv] : frame.observations) {
    WindowedTrack& track = tracks_[fid];
    track.obs.emplace_back(slot, uv);
    // Keep trying for LiDAR depth until some observation of the track gets
    // coverage; the depth anchors the track at that keyframe.
    if (track.source != DepthSource::lidar && !frame.lidar_in_camera.empty()) {
      if (auto depth = associate_depth(uv, frame.lidar_in_camera)) {
        track.depth = *depth;
        track.source = DepthSource::lidar;
        track.anchor_slot = slot;
      }
    }
  }

  // Slide the window.
  if (static_cast<int>(kf_states_.size()) > config_.max_keyframes) {
    kf_states_.erase(kf_states_.begin());
    kf_times_.erase(kf_times_.begin());
    kf_deltas_.erase(kf_deltas_.begin());
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      auto& track = it->second;
      auto& obs = track.obs;
      obs.erase(std::remove_if(obs.begin(), obs.end(),
                               [](const auto& o) { return o.first == 0; }),
                obs.end());
      for (auto& o : obs) --o.first;
      track.anchor_slot -= 1;
      if (track.anchor_slot < 0) {
        // The depth anchor left the window; the track must re-seed.
        track.depth.reset();
        track.source = DepthSource::none;
        track.anchor_slot = -1;
      }
      if (obs.empty()) {
        it = tracks_.erase(it);
      } else {
        ++it;
      }
    }
  }

  if (kf_states_.size() < 2) return result;

  bool degraded = false;
  result.constraint = optimize_window(predicted_state, prediction_information, &degraded);
  result.visually_degraded = degraded;
  return result;
}

std::optional<VioConstraint> VisualInertialEngine::optimize_window(
    const State& predicted_state, const Mat6& prediction_information, bool* degraded) {
  (void)predicted_state;
  triangulate_missing_depths();

  int usable = 0;
  for (const auto& [fid, track] : tracks_) {
    if (track.depth && track.obs.size() >= 2) ++usable;
  }

  Window w;
  std::vector<int> ids;
  for (const auto& s : kf_states_) ids.push_back(w.add_state(s));
  w.add_factor(make_state_prior_factor(ids[0], kf_states_[0], 1e6 * Mat15::Identity()));
  for (size_t k = 0; k + 1 < kf_states_.size(); ++k) {
    w.add_factor(make_preintegration_factor(ids[k], ids[k + 1], kf_deltas_[k], config_.gravity));
  }
  w.add_factor(make_pose_prior_factor(ids.back(), kf_states_.back().pose(),
                                      prediction_information));

  const bool use_vision = usable >= config_.min_tracks;
  if (getenv("VIO_DEBUG")) fprintf(stderr, "VIO kf=%zu tracks=%zu usable=%d\n", kf_states_.size(), tracks_.size(), usable);
  if (!use_vision && degraded) *degraded = true;

  if (use_vision) {
    const double base_info = 1.0 / (config_.pixel_noise * config_.pixel_noise);
    for (const auto& [fid, track] : tracks_) {
      if (!track.depth || track.obs.size() < 2 || track.anchor_slot < 0) continue;
      const double info = track.source == DepthSource::lidar
                              ? base_info
                              : base_info / config_.triangulated_inflation;
      const auto anchor_it =
          std::find_if(track.obs.begin(), track.obs.end(),
                       [&](const auto& o) { return o.first == track.anchor_slot; });
      if (anchor_it == track.obs.end()) continue;
      const auto& [slot_a, uv_a] = *anchor_it;
      for (const auto& ob : track.obs) {
        if (ob.first == slot_a) continue;
        const auto& [slot_b, uv_b] = ob;
        ReprojectionMeasurement m;
        m.obs_a = uv_a;
        m.obs_b = uv_b;
        m.depth_a = *track.depth;
        m.body_to_camera = config_.camera.body_to_camera;
        auto f = make_reprojection_factor(ids[slot_a], ids[slot_b], m,
                                          info * Eigen::Matrix2d::Identity());
        f->kernel = {RobustKernel::Type::huber, 3.0 * config_.pixel_noise * std::sqrt(info)};
        w.add_factor(std::move(f));
      }
    }
  }

  SolveConfig cfg = config_.solve;
  const SolveReport rep = w.optimize(cfg);

  for (size_t k = 0; k < kf_states_.size(); ++k) kf_states_[k] = w.state(ids[k]);
  bias_ = {kf_states_.back().ba, kf_states_.back().bg};

  if (!use_vision) return std::nullopt;

  // Relative pose between the two newest keyframes with covariance from the
  // window marginal.
  const size_t n = kf_states_.size();
  const State& si = kf_states_[n - 2];
  const State& sj = kf_states_[n - 1];

  VioConstraint c;
  c.t_i = kf_times_[n - 2];
  c.t_j = kf_times_[n - 1];
  const Mat3 r_wi = si.q.toRotationMatrix().transpose();
  c.dp = r_wi * (sj.p - si.p);
  c.dq = (si.q.conjugate() * sj.q).normalized();
  c.used_tracks = usable;
  c.degenerate_directions = static_cast<int>(rep.degenerate_directions.size());

  // Marginal covariance of the pose pair, pushed through the relative-pose map.
  Eigen::MatrixXd h = w.hessian({FactorKind::reprojection, FactorKind::preintegration,
                                 FactorKind::prior});
  h.diagonal().array() += 1e-9;
  const Eigen::MatrixXd cov = h.inverse();
  const int oi = w.tangent_offset(ids[n - 2]);
  const int oj = w.tangent_offset(ids[n - 1]);
  const int map_idx[12] = {oi + 0, oi + 1, oi + 2, oi + 6, oi + 7, oi + 8,
                           oj + 0, oj + 1, oj + 2, oj + 6, oj + 7, oj + 8};
  Eigen::Matrix<double, 12, 12> cov_pair;
  for (int a = 0; a < 12; ++a) {
    for (int b = 0; b < 12; ++b) cov_pair(a, b) = cov(map_idx[a], map_idx[b]);
  }
  // d[dp; dth] / d[dp_i, dth_i, dp_j, dth_j]
  Eigen::Matrix<double, 6, 12> jrel = Eigen::Matrix<double, 6, 12>::Zero();
  jrel.block<3, 3>(0, 0) = -r_wi;
  jrel.block<3, 3>(0, 3) = skew(r_wi * (sj.p - si.p));
  jrel.block<3, 3>(0, 6) = r_wi;
  jrel.block<3, 3>(3, 3) = -c.dq.toRotationMatrix().transpose();
  jrel.block<3, 3>(3, 9) = Mat3::Identity();
  Mat6 cov_rel = jrel * cov_pair * jrel.transpose();
  cov_rel = 0.5 * (cov_rel + cov_rel.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat6> es(cov_rel);
  Eigen::Matrix<double, 6, 1> inv = es.eigenvalues().cwiseMax(1e-12).cwiseInverse();
  c.information = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  double res_sum = 0.0;
  int res_n = 0;
  for (int fid : w.factor_ids()) {
    const Factor* f = w.factor(fid);
    if (f->kind() != FactorKind::reprojection) continue;
    std::vector<const State*> xs;
    for (int sid : f->state_ids()) xs.push_back(&w.state(sid));
    if (!f->valid(xs)) continue;
    res_sum += f->residual(xs).norm();
    ++res_n;
  }
  c.mean_residual = res_n ? res_sum / res_n : 0.0;
  return c;
}

}  // namespace odomkit
