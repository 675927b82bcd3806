// Independent reference implementations used as test oracles. These must not
// share code with the library paths they check.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <functional>
#include <random>

namespace oracles {

using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Quaterniond;
using Eigen::Vector3d;

// Rodrigues formula, straight from the axis-angle definition.
inline Matrix3d rodrigues(const Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-14) return Matrix3d::Identity();
  const Vector3d k = omega / theta;
  Matrix3d kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Matrix3d::Identity() + std::sin(theta) * kx + (1.0 - std::cos(theta)) * kx * kx;
}

inline Matrix4d homogeneous_of(const Quaterniond& q, const Vector3d& t) {
  Matrix4d m = Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = t;
  return m;
}

// Continuous-time IMU signal: fills accel (specific force, body) and gyro.
using ImuSignal = std::function<void(double t, Vector3d& accel, Vector3d& gyro)>;

struct DeltaOracle {
  Vector3d alpha = Vector3d::Zero();
  Vector3d beta = Vector3d::Zero();
  Quaterniond gamma = Quaterniond::Identity();
};

// Plain forward-Euler integration of the preintegrated-delta ODE at a fine
// step. Independent of the library's midpoint accumulator.
inline DeltaOracle integrate_delta_euler(const ImuSignal& signal, double t0, double t1,
                                         double rate, const Vector3d& ba = Vector3d::Zero(),
                                         const Vector3d& bg = Vector3d::Zero()) {
  DeltaOracle d;
  const double dt = 1.0 / rate;
  Vector3d a, g;
  for (double t = t0; t < t1 - 0.5 * dt; t += dt) {
    signal(t, a, g);
    const Vector3d a_rot = d.gamma * (a - ba);
    d.alpha += d.beta * dt;
    d.beta += a_rot * dt;
    const Vector3d w = (g - bg) * dt;
    d.gamma = (d.gamma * Quaterniond(Eigen::AngleAxisd(w.norm(), w.norm() > 1e-30
                                                                     ? Vector3d(w.normalized())
                                                                     : Vector3d::UnitX())))
                  .normalized();
  }
  return d;
}

// Classic RK4 on the same ODE; the rotation increment per substep is applied
// through the axis-angle map. Accurate to ~1e-12 at 10 kHz for desk motions.
inline DeltaOracle integrate_delta_rk4(const ImuSignal& signal, double t0, double t1, double rate,
                                       const Vector3d& ba = Vector3d::Zero(),
                                       const Vector3d& bg = Vector3d::Zero()) {
  DeltaOracle d;
  const double dt = 1.0 / rate;
  Vector3d a, g;
  auto rotate = [](const Quaterniond& q, const Vector3d& w) {
    const double n = w.norm();
    if (n < 1e-30) return q;
    return (q * Quaterniond(Eigen::AngleAxisd(n, w / n))).normalized();
  };
  const int steps = static_cast<int>(std::round((t1 - t0) * rate));
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * dt;
    // k1..k4 for (alpha, beta); attitude advanced with midpoint gyro samples.
    Vector3d a1, g1, a2, g2, a4, g4;
    signal(t, a1, g1);
    signal(t + 0.5 * dt, a2, g2);
    signal(t + dt, a4, g4);

    const Quaterniond q1 = d.gamma;
    const Quaterniond q2 = rotate(q1, (g1 - bg) * 0.5 * dt);
    const Quaterniond q3 = rotate(q1, (g2 - bg) * 0.5 * dt);
    const Quaterniond q4 = rotate(q3, (g2 - bg) * 0.5 * dt);

    const Vector3d f1 = q1 * (a1 - ba);
    const Vector3d f2 = q2 * (a2 - ba);
    const Vector3d f3 = q3 * (a2 - ba);
    const Vector3d f4 = q4 * (a4 - ba);

    const Vector3d beta_k1 = f1, beta_k2 = f2, beta_k3 = f3, beta_k4 = f4;
    const Vector3d alpha_k1 = d.beta;
    const Vector3d alpha_k2 = d.beta + 0.5 * dt * beta_k1;
    const Vector3d alpha_k3 = d.beta + 0.5 * dt * beta_k2;
    const Vector3d alpha_k4 = d.beta + dt * beta_k3;

    d.alpha += dt / 6.0 * (alpha_k1 + 2 * alpha_k2 + 2 * alpha_k3 + alpha_k4);
    d.beta += dt / 6.0 * (beta_k1 + 2 * beta_k2 + 2 * beta_k3 + beta_k4);
    // Simpson average of the rate keeps the attitude quadrature symmetric
    // over the step (third order); at fine steps the commutator terms are
    // negligible.
    d.gamma = rotate(d.gamma, dt / 6.0 * ((g1 - bg) + 4.0 * (g2 - bg) + (g4 - bg)));
  }
  return d;
}

inline Quaterniond random_unit_quaternion(std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

inline Vector3d random_vec(std::mt19937& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace oracles
