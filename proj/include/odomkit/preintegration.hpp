// IMU preintegration: accumulates samples between keyframes into a relative
// motion pseudo-measurement (alpha, beta, gamma) with bias Jacobians and a
// 15x15 covariance, independent of any world-frame state.
//
// `gravity` throughout is the world-frame gravitational acceleration,
// default (0, 0, -9.81).
#pragma once

#include <optional>
#include <vector>

#include "odomkit/geometry.hpp"

namespace odomkit {

struct ImuSample {
  double t = 0.0;    // seconds
  Vec3 accel = Vec3::Zero();  // specific force, m/s^2
  Vec3 gyro = Vec3::Zero();   // rad/s
};

struct ImuNoiseModel {
  double accel_noise_density = 1e-2;  // m/s^2/sqrt(Hz)
  double gyro_noise_density = 1e-3;   // rad/s/sqrt(Hz)
  double accel_bias_walk = 1e-4;      // m/s^3/sqrt(Hz)
  double gyro_bias_walk = 1e-5;       // rad/s^2/sqrt(Hz)
};

struct BiasPair {
  Vec3 ba = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
};

inline Vec3 default_gravity() { return {0.0, 0.0, -9.81}; }

// Bias change beyond this makes the first-order correction unreliable; the
// owning graph should re-integrate.
inline constexpr double kRelinearizeBiasThreshold = 0.1;

struct PreintegratedDelta {
  Vec3 alpha = Vec3::Zero();       // position delta in frame i, m
  Vec3 beta = Vec3::Zero();        // velocity delta in frame i, m/s
  Quat gamma = Quat::Identity();   // rotation delta, frame i -> frame j
  double dt_total = 0.0;
  BiasPair linearization_bias;

  Mat3 dalpha_dba = Mat3::Zero();
  Mat3 dalpha_dbg = Mat3::Zero();
  Mat3 dbeta_dba = Mat3::Zero();
  Mat3 dbeta_dbg = Mat3::Zero();
  Mat3 dgamma_dbg = Mat3::Zero();

  // Error-state covariance, ordering [alpha, beta, theta, ba, bg].
  Mat15 covariance = Mat15::Zero();

  bool relinearize = false;  // set by correct_for_bias when past threshold
};

// Streaming accumulator; push samples in timestamp order.
class Preintegrator {
 public:
  Preintegrator(const BiasPair& bias, const ImuNoiseModel& noise);

  // First call seeds the stream; later calls integrate over the gap.
  // Returns false (and ignores the sample) on a timestamp regression.
  bool push(const ImuSample& sample);

  const PreintegratedDelta& delta() const { return delta_; }
  bool started() const { return has_last_; }
  double last_time() const { return last_.t; }
  void reset(const BiasPair& bias);

 private:
  void step(const ImuSample& next);

  PreintegratedDelta delta_;
  ImuNoiseModel noise_;
  ImuSample last_;
  bool has_last_ = false;
};

struct IntegrationError {
  int sample_index = -1;  // offending sample for non-monotone timestamps
};

// Batch integration. Empty input yields the identity delta with zero
// covariance; non-monotone timestamps are rejected with the offending index.
struct IntegrationResult {
  PreintegratedDelta delta;
  std::optional<IntegrationError> error;
};

IntegrationResult integrate(const std::vector<ImuSample>& samples, const BiasPair& bias,
                            const ImuNoiseModel& noise);

// First-order bias update. Sets `relinearize` when ||new_bias - lin_bias||
// exceeds kRelinearizeBiasThreshold.
PreintegratedDelta correct_for_bias(const PreintegratedDelta& delta, const BiasPair& new_bias);

// All 15 rows of the preintegration factor: [alpha, beta, gamma, ba, bg]
// measurement minus the state-predicted quantities, with the rotation row
// mapped through log_so3. The delta is bias-corrected to state_i's bias first.
Vec15 preintegration_residual(const PreintegratedDelta& delta, const State& state_i,
                              const State& state_j, const Vec3& gravity);

// Propagates state_i through the delta; preintegration_residual of the result
// is zero by construction.
State predict(const State& state_i, const PreintegratedDelta& delta, const Vec3& gravity);

}  // namespace odomkit
