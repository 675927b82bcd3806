// Rotation, pose, and manifold primitives shared by every estimator.
//
// Conventions, used everywhere and nowhere else restated:
//   - Hamilton quaternions, body-to-world, renormalized after every composition.
//   - Rotation tangent updates are right-multiplicative: q <- q * exp_so3(dtheta).
//   - State tangent ordering is [dp, dv, dtheta, dba, dbg] (15 scalars).
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace odomkit {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat15 = Eigen::Matrix<double, 15, 15>;
using Quat = Eigen::Quaterniond;

inline constexpr double kSmallAngle = 1e-8;  // below this, second-order Taylor branch

template <typename D>
Eigen::Matrix<typename D::Scalar, 3, 3> skew(const Eigen::MatrixBase<D>& v) {
  using S = typename D::Scalar;
  Eigen::Matrix<S, 3, 3> m;
  m << S(0), -v.z(), v.y(), v.z(), S(0), -v.x(), -v.y(), v.x(), S(0);
  return m;
}

// Flip sign so w >= 0; the canonical representative used for comparison and log().
template <typename S>
Eigen::Quaternion<S> canonicalized(const Eigen::Quaternion<S>& q) {
  if (q.w() < S(0)) return Eigen::Quaternion<S>(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

template <typename D>
Eigen::Quaternion<typename D::Scalar> exp_so3(const Eigen::MatrixBase<D>& omega) {
  using S = typename D::Scalar;
  const S theta2 = omega.squaredNorm();
  const S theta = std::sqrt(theta2);
  S half_sinc;  // sin(theta/2)/theta
  S cos_half;
  if (theta < S(kSmallAngle)) {
    half_sinc = S(0.5) - theta2 / S(48);
    cos_half = S(1) - theta2 / S(8);
  } else {
    half_sinc = std::sin(S(0.5) * theta) / theta;
    cos_half = std::cos(S(0.5) * theta);
  }
  Eigen::Quaternion<S> q(cos_half, half_sinc * omega.x(), half_sinc * omega.y(),
                         half_sinc * omega.z());
  q.normalize();
  return q;
}

// Inverse of exp_so3 on the canonical (w >= 0) branch; returns angle < pi.
template <typename S>
Eigen::Matrix<S, 3, 1> log_so3(const Eigen::Quaternion<S>& q_in) {
  const Eigen::Quaternion<S> q = canonicalized(q_in);
  const Eigen::Matrix<S, 3, 1> vec(q.x(), q.y(), q.z());
  const S sin_half = vec.norm();
  if (sin_half < S(kSmallAngle)) {
    return S(2) * vec / q.w();  // first order: q approx (1, omega/2)
  }
  const S half_angle = std::atan2(sin_half, q.w());
  return (S(2) * half_angle / sin_half) * vec;
}

// Right Jacobian of SO(3): Exp(phi + d) approx Exp(phi) Exp(Jr(phi) d).
inline Mat3 right_jacobian_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() - 0.5 * w + (1.0 / 6.0) * w * w;
  }
  return Mat3::Identity() - (1.0 - std::cos(theta)) / theta2 * w +
         (theta - std::sin(theta)) / (theta2 * theta) * w * w;
}

// Inverse of the right Jacobian.
inline Mat3 right_jacobian_inv_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() + 0.5 * w + (1.0 / 12.0) * w * w;
  }
  const double c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * w + c * w * w;
}

// Inverse of the left Jacobian: Jl_inv(phi) = Jr_inv(phi)^T.
inline Mat3 left_jacobian_inv_so3(const Vec3& phi) { return right_jacobian_inv_so3(phi).transpose(); }

struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return {}; }
};

inline Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.translation + a.rotation * b.translation;
  return out;
}

inline Pose inverse(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.conjugate();
  out.translation = -(out.rotation * p.translation);
  return out;
}

inline Vec3 apply(const Pose& p, const Vec3& point) { return p.rotation * point + p.translation; }

// a expressed relative to b: b^-1 * a.
inline Pose between(const Pose& b, const Pose& a) { return compose(inverse(b), a); }

inline Eigen::Matrix4d homogeneous(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = p.translation;
  return m;
}

// Linear-translation, slerp-rotation interpolation; s in [0,1] from a to b.
inline Pose interpolate(const Pose& a, const Pose& b, double s) {
  Pose out;
  out.rotation = a.rotation.slerp(s, b.rotation).normalized();
  out.translation = (1.0 - s) * a.translation + s * b.translation;
  return out;
}

// Full estimator state: pose, velocity, and IMU biases at a timestamp.
struct State {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 ba = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  double t = 0.0;

  Pose pose() const { return {q, p}; }
};

inline State boxplus(const State& s, const Vec15& delta) {
  State out = s;
  out.p += delta.segment<3>(0);
  out.v += delta.segment<3>(3);
  out.q = (s.q * exp_so3(delta.segment<3>(6))).normalized();
  out.ba += delta.segment<3>(9);
  out.bg += delta.segment<3>(12);
  return out;
}

inline Vec15 boxminus(const State& a, const State& b) {
  Vec15 delta;
  delta.segment<3>(0) = a.p - b.p;
  delta.segment<3>(3) = a.v - b.v;
  delta.segment<3>(6) = log_so3(Quat(b.q.conjugate() * a.q));
  delta.segment<3>(9) = a.ba - b.ba;
  delta.segment<3>(12) = a.bg - b.bg;
  return delta;
}

inline bool approx_equal(const Quat& a, const Quat& b, double tol) {
  const Quat ca = canonicalized(a);
  const Quat cb = canonicalized(b);
  return (ca.coeffs() - cb.coeffs()).norm() < tol;
}

}  // namespace odomkit
