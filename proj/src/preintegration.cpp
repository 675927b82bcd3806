#include "odomkit/preintegration.hpp"

namespace odomkit {

Preintegrator::Preintegrator(const BiasPair& bias, const ImuNoiseModel& noise) : noise_(noise) {
  delta_.linearization_bias = bias;
}

void Preintegrator::reset(const BiasPair& bias) {
  delta_ = PreintegratedDelta{};
  delta_.linearization_bias = bias;
  has_last_ = false;
}

bool Preintegrator::push(const ImuSample& sample) {
  if (!has_last_) {
    last_ = sample;
    has_last_ = true;
    return true;
  }
  if (sample.t <= last_.t) return false;
  step(sample);
  last_ = sample;
  return true;
}

// Midpoint rule over one sample interval, with the discrete linearized
// transition for bias Jacobians and covariance (error order: a, b, th, ba, bg).
void Preintegrator::step(const ImuSample& next) {
  const double dt = next.t - last_.t;
  const double dt2 = dt * dt;
  const Vec3 ba = delta_.linearization_bias.ba;
  const Vec3 bg = delta_.linearization_bias.bg;

  const Vec3 w_mid = 0.5 * (last_.gyro + next.gyro) - bg;
  const Quat gamma0 = delta_.gamma;
  const Quat gamma1 = (gamma0 * exp_so3((w_mid * dt).eval())).normalized();

  const Mat3 r0 = gamma0.toRotationMatrix();
  const Mat3 r1 = gamma1.toRotationMatrix();
  const Vec3 a0 = last_.accel - ba;
  const Vec3 a1 = next.accel - ba;
  const Vec3 a_mid = 0.5 * (r0 * a0 + r1 * a1);

  const Vec3 alpha1 = delta_.alpha + delta_.beta * dt + 0.5 * a_mid * dt2;
  const Vec3 beta1 = delta_.beta + a_mid * dt;

  const Mat3 a0x = skew(a0);
  const Mat3 a1x = skew(a1);
  const Mat3 i3 = Mat3::Identity();

  // d(theta_{k+1}) = Exp(-w_mid dt) d(theta_k) - Jr(w_mid dt) dt dbg
  const Mat3 dth_dth = exp_so3((-w_mid * dt).eval()).toRotationMatrix();
  const Mat3 dth_dbg = -right_jacobian_so3(w_mid * dt) * dt;

  // Rotated-acceleration sensitivity through both endpoint attitudes.
  const Mat3 da_dth = -0.5 * (r0 * a0x + r1 * a1x * dth_dth);
  const Mat3 da_dbg = -0.5 * r1 * a1x * dth_dbg;
  const Mat3 da_dba = -0.5 * (r0 + r1);

  Mat15 f = Mat15::Identity();
  f.block<3, 3>(0, 3) = i3 * dt;
  f.block<3, 3>(0, 6) = 0.5 * da_dth * dt2;
  f.block<3, 3>(0, 9) = 0.5 * da_dba * dt2;
  f.block<3, 3>(0, 12) = 0.5 * da_dbg * dt2;
  f.block<3, 3>(3, 6) = da_dth * dt;
  f.block<3, 3>(3, 9) = da_dba * dt;
  f.block<3, 3>(3, 12) = da_dbg * dt;
  f.block<3, 3>(6, 6) = dth_dth;
  f.block<3, 3>(6, 12) = dth_dbg;

  // Noise inputs [na0, ng0, na1, ng1, nba, nbg]; continuous densities are
  // scaled by the sample interval inside q below.
  Eigen::Matrix<double, 15, 18> v = Eigen::Matrix<double, 15, 18>::Zero();
  const Mat3 dth_dng = -dth_dbg;  // gyro noise enters like -dbg through the midpoint
  v.block<3, 3>(0, 0) = 0.25 * r0 * dt2;
  v.block<3, 3>(0, 3) = 0.25 * dt2 * (-0.5 * r1 * a1x * dth_dng);
  v.block<3, 3>(0, 6) = 0.25 * r1 * dt2;
  v.block<3, 3>(0, 9) = v.block<3, 3>(0, 3);
  v.block<3, 3>(3, 0) = 0.5 * r0 * dt;
  v.block<3, 3>(3, 3) = 0.5 * dt * (-0.5 * r1 * a1x * dth_dng);
  v.block<3, 3>(3, 6) = 0.5 * r1 * dt;
  v.block<3, 3>(3, 9) = v.block<3, 3>(3, 3);
  v.block<3, 3>(6, 3) = 0.5 * dth_dng;
  v.block<3, 3>(6, 9) = 0.5 * dth_dng;
  v.block<3, 3>(9, 12) = i3 * dt;
  v.block<3, 3>(12, 15) = i3 * dt;

  Eigen::Matrix<double, 18, 18> q = Eigen::Matrix<double, 18, 18>::Zero();
  const double sa2 = noise_.accel_noise_density * noise_.accel_noise_density / dt;
  const double sg2 = noise_.gyro_noise_density * noise_.gyro_noise_density / dt;
  const double sba2 = noise_.accel_bias_walk * noise_.accel_bias_walk / dt;
  const double sbg2 = noise_.gyro_bias_walk * noise_.gyro_bias_walk / dt;
  q.diagonal() << sa2, sa2, sa2, sg2, sg2, sg2, sa2, sa2, sa2, sg2, sg2, sg2, sba2, sba2, sba2,
      sbg2, sbg2, sbg2;

  delta_.covariance = f * delta_.covariance * f.transpose() + v * q * v.transpose();
  delta_.covariance = 0.5 * (delta_.covariance + delta_.covariance.transpose()).eval();

  // Bias Jacobians advance through the same transition.
  delta_.dalpha_dba = delta_.dalpha_dba + delta_.dbeta_dba * dt + 0.5 * da_dba * dt2;
  delta_.dalpha_dbg = delta_.dalpha_dbg + delta_.dbeta_dbg * dt + 0.5 * dt2 * (da_dth * delta_.dgamma_dbg + da_dbg);
  delta_.dbeta_dba = delta_.dbeta_dba + da_dba * dt;
  delta_.dbeta_dbg = delta_.dbeta_dbg + dt * (da_dth * delta_.dgamma_dbg + da_dbg);
  delta_.dgamma_dbg = dth_dth * delta_.dgamma_dbg + dth_dbg;

  delta_.alpha = alpha1;
  delta_.beta = beta1;
  delta_.gamma = gamma1;
  delta_.dt_total += dt;
}

IntegrationResult integrate(const std::vector<ImuSample>& samples, const BiasPair& bias,
                            const ImuNoiseModel& noise) {
  IntegrationResult out;
  Preintegrator acc(bias, noise);
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!acc.push(samples[i])) {
      out.error = IntegrationError{static_cast<int>(i)};
      return out;
    }
  }
  out.delta = acc.delta();
  return out;
}

PreintegratedDelta correct_for_bias(const PreintegratedDelta& delta, const BiasPair& new_bias) {
  const Vec3 dba = new_bias.ba - delta.linearization_bias.ba;
  const Vec3 dbg = new_bias.bg - delta.linearization_bias.bg;
  PreintegratedDelta out = delta;
  out.alpha = delta.alpha + delta.dalpha_dba * dba + delta.dalpha_dbg * dbg;
  out.beta = delta.beta + delta.dbeta_dba * dba + delta.dbeta_dbg * dbg;
  out.gamma = (delta.gamma * exp_so3((delta.dgamma_dbg * dbg).eval())).normalized();
  Vec6 db;
  db << dba, dbg;
  out.relinearize = db.norm() > kRelinearizeBiasThreshold;
  return out;
}

Vec15 preintegration_residual(const PreintegratedDelta& delta, const State& state_i,
                              const State& state_j, const Vec3& gravity) {
  BiasPair bi{state_i.ba, state_i.bg};
  const PreintegratedDelta d = correct_for_bias(delta, bi);
  const double dt = delta.dt_total;
  const Mat3 r_wi = state_i.q.toRotationMatrix().transpose();

  Vec15 r;
  r.segment<3>(0) =
      d.alpha - r_wi * (state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity * dt * dt);
  r.segment<3>(3) = d.beta - r_wi * (state_j.v - state_i.v - gravity * dt);
  r.segment<3>(6) = log_so3(Quat(d.gamma.conjugate() * state_i.q.conjugate() * state_j.q));
  r.segment<3>(9) = state_j.ba - state_i.ba;
  r.segment<3>(12) = state_j.bg - state_i.bg;
  return r;
}

State predict(const State& state_i, const PreintegratedDelta& delta, const Vec3& gravity) {
  BiasPair bi{state_i.ba, state_i.bg};
  const PreintegratedDelta d = correct_for_bias(delta, bi);
  const double dt = delta.dt_total;
  const Mat3 r_iw = state_i.q.toRotationMatrix();

  State out = state_i;
  out.p = state_i.p + state_i.v * dt + 0.5 * gravity * dt * dt + r_iw * d.alpha;
  out.v = state_i.v + gravity * dt + r_iw * d.beta;
  out.q = (state_i.q * d.gamma).normalized();
  out.t = state_i.t + dt;
  return out;
}

}  // namespace odomkit
