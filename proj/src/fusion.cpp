#include "odomkit/fusion.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace odomkit {

double compute_reliability(const SourceReport& report, double rho) {
  const double r = report.inlier_ratio * std::exp(-report.mean_weighted_residual / rho) *
                   std::pow(2.0, -report.degenerate_directions);
  return std::clamp(r, 0.0, 1.0);
}

FusionCore::FusionCore(const FusionConfig& config) : config_(config) {
  anchor_.ba = config.initial_bias.ba;
  anchor_.bg = config.initial_bias.bg;
}

void FusionCore::initialize_gravity(const std::vector<ImuSample>& stationary_samples) {
  if (stationary_samples.empty()) return;
  Vec3 mean_a = Vec3::Zero(), mean_g = Vec3::Zero();
  for (const auto& s : stationary_samples) {
    mean_a += s.accel;
    mean_g += s.gyro;
  }
  mean_a /= static_cast<double>(stationary_samples.size());
  mean_g /= static_cast<double>(stationary_samples.size());

  // Stationary: gyro mean is bias; the accel magnitude excess over |g| is
  // bias along the gravity direction (the transverse part trades against the
  // initial tilt and is settled later by motion).
  anchor_.bg = mean_g;
  anchor_.ba = (mean_a.norm() - config_.gravity.norm()) * mean_a.normalized();
  // R * (accel - ba) should equal -gravity for a stationary body.
  anchor_.q = Quat::FromTwoVectors(mean_a - anchor_.ba, -config_.gravity).normalized();
  propagator_.reset();
}

std::optional<State> FusionCore::ingest_imu(const ImuSample& sample) {
  if (sample.t <= last_imu_time_) {
    ++dropped_imu_;
    return std::nullopt;
  }
  last_imu_time_ = sample.t;
  imu_buffer_.push_back(sample);
  while (imu_buffer_.size() > 2 &&
         imu_buffer_.front().t < sample.t - config_.imu_buffer_span) {
    imu_buffer_.pop_front();
  }

  if (!anchor_valid_) {
    anchor_.t = sample.t;
    anchor_valid_ = true;
  }
  if (!propagator_) {
    propagator_.emplace(BiasPair{anchor_.ba, anchor_.bg}, config_.noise);
  }
  propagator_->push(sample);

  State out = predict(anchor_, propagator_->delta(), config_.gravity);
  out.t = sample.t;
  highrate_.emplace_back(sample.t, out);
  while (highrate_.size() > 2 && highrate_.front().first < sample.t - 5.0) {
    highrate_.pop_front();
  }
  return out;
}

void FusionCore::ingest_constraint(const ConstraintMessage& msg) {
  if (msg.t_j <= msg.t_i) return;
  if (!node_times_.empty() && msg.t_j < node_times_.front() - config_.snap_tolerance) {
    ++dropped_constraints_;
    return;
  }
  // Dedup by (source, i, j): latest wins.
  const auto key = std::make_pair(static_cast<int>(msg.source),
                                  std::make_pair(std::lround(msg.t_i * 1e6),
                                                 std::lround(msg.t_j * 1e6)));
  queue_[key] = msg;
}

int FusionCore::ensure_node(double t) {
  for (size_t k = 0; k < node_times_.size(); ++k) {
    if (std::abs(node_times_[k] - t) <= config_.snap_tolerance) return static_cast<int>(k);
  }
  if (!node_times_.empty() && t < node_times_.back()) return -1;  // out of order

  State state;
  if (node_times_.empty()) {
    state = state_at(t);
    const int id = window_.add_state(state);
    // Gauge prior: position and yaw pinned hard; roll/pitch stay soft so the
    // graph can refine the gravity alignment, which absorbs accelerometer
    // bias at initialization.
    Mat15 info = Mat15::Zero();
    info.block<3, 3>(0, 0) = 1e8 * Mat3::Identity();
    info.block<3, 3>(3, 3) = 1e4 * Mat3::Identity();
    info.block<3, 3>(6, 6) = Vec3(1.0, 1.0, 1e8).asDiagonal();
    info.block<3, 3>(9, 9) = 1.0 * Mat3::Identity();
    info.block<3, 3>(12, 12) = 1.0 * Mat3::Identity();
    window_.add_factor(make_state_prior_factor(id, state, info));
    node_ids_.push_back(id);
    node_times_.push_back(t);
    return 0;
  }

  // Preintegrate the IMU buffer from the previous node to t.
  const double t_prev = node_times_.back();
  const State& prev = window_.state(node_ids_.back());
  Preintegrator acc(BiasPair{prev.ba, prev.bg}, config_.noise);
  for (const auto& s : imu_buffer_) {
    if (s.t < t_prev - 1e-9 || s.t > t + 1e-9) continue;
    acc.push(s);
  }
  state = predict(prev, acc.delta(), config_.gravity);
  state.t = t;
  const int id = window_.add_state(state);
  window_.add_factor(make_preintegration_factor(node_ids_.back(), id, acc.delta(),
                                                config_.gravity));
  node_ids_.push_back(id);
  node_times_.push_back(t);
  return static_cast<int>(node_times_.size()) - 1;
}

FusionCore::BatchReport FusionCore::optimize_fusion() {
  BatchReport report;
  std::vector<ConstraintMessage> batch;
  batch.reserve(queue_.size());
  for (const auto& [key, msg] : queue_) batch.push_back(msg);
  queue_.clear();
  std::sort(batch.begin(), batch.end(), [](const auto& a, const auto& b) {
    if (a.t_j != b.t_j) return a.t_j < b.t_j;
    return a.t_i < b.t_i;
  });

  for (const ConstraintMessage& msg : batch) {
    if (!node_times_.empty() && msg.t_i < node_times_.front() - config_.snap_tolerance) {
      ++report.constraints_dropped_old;
      ++dropped_constraints_;
      continue;
    }
    const int ni = ensure_node(msg.t_i);
    const int nj = ensure_node(msg.t_j);
    if (ni < 0 || nj < 0 || ni == nj) {
      ++report.constraints_dropped_old;
      ++dropped_constraints_;
      continue;
    }

    // Reliability scaling plus eigen-nulling of near-degenerate directions.
    Mat6 w = msg.reliability * msg.information;
    Eigen::SelfAdjointEigenSolver<Mat6> es(w);
    Eigen::Matrix<double, 6, 1> ev = es.eigenvalues();
    std::array<double, 6> sorted;
    for (int i = 0; i < 6; ++i) sorted[i] = ev(i);
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[3];
    for (int i = 0; i < 6; ++i) {
      if (ev(i) < config_.degenerate_rel_eig * median) ev(i) = 0.0;
    }
    w = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();

    window_.add_factor(make_relative_pose_factor(node_ids_[ni], node_ids_[nj], msg.dp, msg.dq,
                                                 w));
    ++report.constraints_applied;
    last_constraint_time_ = std::max(last_constraint_time_, msg.t_j);
  }

  if (report.constraints_applied > 0 && node_ids_.size() >= 2) {
    const SolveReport rep = window_.optimize(config_.solve);
    report.optimized = true;
    report.final_cost = rep.final_cost;

    while (static_cast<int>(node_ids_.size()) > config_.window_nodes) {
      window_.marginalize({node_ids_.front()});
      node_ids_.erase(node_ids_.begin());
      node_times_.erase(node_times_.begin());
    }

    // Pose confidence of the newest node from the window information.
    Eigen::MatrixXd h = window_.hessian(
        {FactorKind::relative_pose, FactorKind::preintegration, FactorKind::prior});
    h.diagonal().array() += 1e-9;
    const Eigen::MatrixXd cov = h.inverse();
    const int off = window_.tangent_offset(node_ids_.back());
    const int idx[6] = {off + 0, off + 1, off + 2, off + 6, off + 7, off + 8};
    Mat6 cpose;
    for (int a = 0; a < 6; ++a) {
      for (int b = 0; b < 6; ++b) cpose(a, b) = cov(idx[a], idx[b]);
    }
    last_confidence_ = cpose.inverse();
    republish(node_times_.back());
  }

  node_cache_.clear();
  for (int id : node_ids_) node_cache_.push_back(window_.state(id));
  return report;
}

void FusionCore::republish(double now) {
  // Re-anchor high-rate propagation at the newest optimized node and replay
  // the buffered IMU tail with the refreshed bias estimate.
  anchor_ = window_.state(node_ids_.back());
  anchor_valid_ = true;
  propagator_.emplace(BiasPair{anchor_.ba, anchor_.bg}, config_.noise);
  for (const auto& s : imu_buffer_) {
    if (s.t < anchor_.t - 1e-9) continue;
    propagator_->push(s);
  }
  (void)now;
}

PredictionMessage FusionCore::prediction() const {
  PredictionMessage msg;
  msg.state = anchor_;
  if (propagator_) msg.delta = propagator_->delta();
  const double unconstrained = std::max(0.0, last_imu_time_ - last_constraint_time_);
  msg.confidence =
      last_confidence_ * std::pow(config_.unconstrained_decay, unconstrained);
  return msg;
}

State FusionCore::propagated_state() const {
  if (highrate_.empty()) return anchor_;
  return highrate_.back().second;
}

State FusionCore::state_at(double t) const {
  if (highrate_.empty()) {
    State s = anchor_;
    s.t = t;
    return s;
  }
  auto it = std::lower_bound(highrate_.begin(), highrate_.end(), t,
                             [](const auto& a, double val) { return a.first < val; });
  if (it == highrate_.end()) --it;
  State s = it->second;
  const Pose p = pose_at(t);
  s.p = p.translation;
  s.q = p.rotation;
  s.t = t;
  return s;
}

Pose FusionCore::pose_at(double t) const {
  if (highrate_.empty()) return anchor_.pose();
  if (t <= highrate_.front().first) return highrate_.front().second.pose();
  if (t >= highrate_.back().first) {
    // extrapolate with the newest velocity
    const State& s = highrate_.back().second;
    Pose out = s.pose();
    out.translation += s.v * (t - s.t);
    return out;
  }
  auto it = std::lower_bound(highrate_.begin(), highrate_.end(), t,
                             [](const auto& a, double val) { return a.first < val; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double span = hi.first - lo.first;
  const double s = span > 0 ? (t - lo.first) / span : 0.0;
  return interpolate(lo.second.pose(), hi.second.pose(), s);
}

}  // namespace odomkit
