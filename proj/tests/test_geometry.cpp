#include <doctest.h>

#include <random>

#include "odomkit/geometry.hpp"
#include "oracles.hpp"

using namespace odomkit;

TEST_CASE("exp_so3 zero rotation is identity") {
  const Quat q = exp_so3(Vec3::Zero());
  CHECK(q.w() == doctest::Approx(1.0));
  CHECK(q.vec().norm() == doctest::Approx(0.0));
}

TEST_CASE("exp_so3 half turn about x") {
  const Quat q = exp_so3(Vec3(M_PI, 0, 0));
  CHECK(std::abs(q.w()) < 1e-12);
  CHECK(q.x() == doctest::Approx(1.0));
  CHECK(std::abs(q.y()) < 1e-15);
  CHECK(std::abs(q.z()) < 1e-15);
}

TEST_CASE("exp_so3 matches Rodrigues rotation matrix oracle") {
  const Vec3 omega(0.3, -0.2, 0.1);
  const Mat3 r = exp_so3(omega).toRotationMatrix();
  const Mat3 r_oracle = oracles::rodrigues(omega);
  CHECK((r - r_oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("log_so3 identity and round trip") {
  CHECK(log_so3(Quat::Identity()).norm() == doctest::Approx(0.0));
  const Vec3 omega(0.5, 0, 0);
  CHECK((log_so3(exp_so3(omega)) - omega).norm() < 1e-12);
}

TEST_CASE("exp/log round trip over random quaternions") {
  std::mt19937 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Quat q = oracles::random_unit_quaternion(rng);
    const Quat back = exp_so3(log_so3(q));
    CHECK(approx_equal(q, back, 1e-10));
  }
}

TEST_CASE("exp/log round trip near the angle range edge") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> angle(1e-6, M_PI - 1e-3);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 1000; ++i) {
    Vec3 axis(n(rng), n(rng), n(rng));
    axis.normalize();
    const Vec3 omega = angle(rng) * axis;
    CHECK((log_so3(exp_so3(omega)) - omega).norm() < 1e-10);
  }
}

TEST_CASE("compose identity and inverse") {
  std::mt19937 rng(9);
  Pose p{oracles::random_unit_quaternion(rng), oracles::random_vec(rng, 5.0)};
  const Pose pi = compose(p, Pose::Identity());
  CHECK(approx_equal(pi.rotation, p.rotation, 1e-15));
  CHECK((pi.translation - p.translation).norm() < 1e-15);

  const Pose ident = compose(p, inverse(p));
  CHECK(approx_equal(ident.rotation, Quat::Identity(), 1e-9));
  CHECK(ident.translation.norm() < 1e-9);
}

TEST_CASE("compose matches homogeneous matrix oracle") {
  std::mt19937 rng(10);
  for (int i = 0; i < 1000; ++i) {
    Pose a{oracles::random_unit_quaternion(rng), oracles::random_vec(rng, 5.0)};
    Pose b{oracles::random_unit_quaternion(rng), oracles::random_vec(rng, 5.0)};
    const Eigen::Matrix4d m = oracles::homogeneous_of(a.rotation, a.translation) *
                              oracles::homogeneous_of(b.rotation, b.translation);
    CHECK((homogeneous(compose(a, b)) - m).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("quaternions stay unit across many compositions") {
  std::mt19937 rng(11);
  Pose acc = Pose::Identity();
  for (int i = 0; i < 100000; ++i) {
    Pose step{oracles::random_unit_quaternion(rng), Vec3::Zero()};
    acc = compose(acc, step);
    if (i % 1000 == 0) CHECK(std::abs(acc.rotation.norm() - 1.0) < 1e-9);
  }
  CHECK(std::abs(acc.rotation.norm() - 1.0) < 1e-9);
}

TEST_CASE("boxplus zero delta is identity") {
  std::mt19937 rng(12);
  State s;
  s.p = oracles::random_vec(rng, 3.0);
  s.v = oracles::random_vec(rng, 1.0);
  s.q = oracles::random_unit_quaternion(rng);
  const State out = boxplus(s, Vec15::Zero());
  CHECK((boxminus(out, s)).norm() < 1e-15);
}

TEST_CASE("boxplus moves position only for a position delta") {
  State s;
  Vec15 delta = Vec15::Zero();
  delta.segment<3>(0) = Vec3(1, 0, 0);
  const State out = boxplus(s, delta);
  CHECK((out.p - Vec3(1, 0, 0)).norm() < 1e-15);
  CHECK(out.v.norm() < 1e-15);
  CHECK(approx_equal(out.q, Quat::Identity(), 1e-15));
  CHECK(out.ba.norm() < 1e-15);
  CHECK(out.bg.norm() < 1e-15);
}

TEST_CASE("boxminus inverts boxplus for small deltas") {
  std::mt19937 rng(13);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 200; ++i) {
    State s;
    s.p = oracles::random_vec(rng, 3.0);
    s.v = oracles::random_vec(rng, 1.0);
    s.q = oracles::random_unit_quaternion(rng);
    s.ba = oracles::random_vec(rng, 0.1);
    s.bg = oracles::random_vec(rng, 0.01);
    Vec15 delta;
    for (int k = 0; k < 15; ++k) delta[k] = n(rng);
    delta *= 1e-6 / delta.norm();
    CHECK((boxminus(boxplus(s, delta), s) - delta).norm() < 1e-12);
  }
}

TEST_CASE("pose interpolation endpoints") {
  std::mt19937 rng(14);
  Pose a{oracles::random_unit_quaternion(rng), oracles::random_vec(rng, 2.0)};
  Pose b{oracles::random_unit_quaternion(rng), oracles::random_vec(rng, 2.0)};
  const Pose at0 = interpolate(a, b, 0.0);
  const Pose at1 = interpolate(a, b, 1.0);
  CHECK((at0.translation - a.translation).norm() < 1e-15);
  CHECK((at1.translation - b.translation).norm() < 1e-15);
  CHECK(approx_equal(at0.rotation, a.rotation, 1e-12));
  CHECK(approx_equal(at1.rotation, b.rotation, 1e-12));
}
