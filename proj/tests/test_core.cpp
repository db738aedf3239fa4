#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lfuse/core.hpp"
#include "lfuse/rng.hpp"

using namespace lfuse;
constexpr double kPi = std::numbers::pi;

TEST(WrapAngle, Examples) {
  EXPECT_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(7.0), 7.0 - 2 * kPi, 1e-15);
  EXPECT_NEAR(wrap_angle(-0.1), 2 * kPi - 0.1, 1e-15);
  EXPECT_NEAR(wrap_angle(7.0), 0.71681469282041, 1e-12);
}

TEST(WrapAngle, RangeAndIdempotence) {
  CounterRng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-1e4, 1e4);
    const double w = wrap_angle(x);
    ASSERT_GE(w, 0.0);
    ASSERT_LT(w, 2 * kPi);
    ASSERT_EQ(wrap_angle(w), w);
    ASSERT_NEAR(std::remainder(w - x, 2 * kPi), 0.0, 1e-9);
  }
  EXPECT_LT(wrap_angle(-1e-18), 2 * kPi);
}

TEST(WrapAngle, RejectsNonFinite) {
  EXPECT_THROW(wrap_angle(std::nan("")), NonFiniteError);
  EXPECT_THROW(wrap_angle(INFINITY), NonFiniteError);
}

TEST(AngleDiff, Examples) {
  EXPECT_NEAR(angle_diff(0.5, 0.2), 0.3, 1e-15);
  EXPECT_NEAR(angle_diff(0.1, 2 * kPi - 0.1), 0.2, 1e-15);
  EXPECT_EQ(angle_diff(0.0, kPi), kPi);
  EXPECT_EQ(angle_diff(kPi, 0.0), kPi);
  EXPECT_THROW(angle_diff(0.0, std::nan("")), NonFiniteError);
}

TEST(AngleDiff, AntisymmetryAwayFromTie) {
  CounterRng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double a = rng.uniform(-20, 20), b = rng.uniform(-20, 20);
    const double d = angle_diff(a, b);
    ASSERT_GT(d, -kPi);
    ASSERT_LE(d, kPi);
    if (std::abs(d) < kPi - 1e-9) ASSERT_NEAR(d, -angle_diff(b, a), 1e-12);
  }
}

TEST(VehicleState, WrapsAndValidates) {
  VehicleState s(1, 2, -3, -0.1);
  EXPECT_NEAR(s.psi(), 2 * kPi - 0.1, 1e-15);
  EXPECT_EQ(s.v(), -3);
  EXPECT_THROW(VehicleState(std::nan(""), 0, 0, 0), NonFiniteError);
  EXPECT_THROW(VehicleState(0, 0, INFINITY, 0), NonFiniteError);
}

TEST(StateResidual, Examples) {
  const VehicleState a(1, 2, 3, 0.1), b(0, 0, 1, 6.2);
  const auto r = state_residual(a, b);
  EXPECT_EQ(r.dx, 1);
  EXPECT_EQ(r.dy, 2);
  EXPECT_EQ(r.dv, 2);
  // 0.1 - 6.2 + 2 pi
  EXPECT_NEAR(r.dpsi, 0.1 - 6.2 + 2 * kPi, 1e-12);
  EXPECT_NEAR(r.dpsi, 0.18318530717958, 1e-12);
  const auto z = state_residual(a, a);
  EXPECT_EQ(z, (StateResidual{0, 0, 0, 0}));
  const auto h = state_residual(VehicleState(0, 0, 0, kPi), VehicleState());
  EXPECT_EQ(h.dpsi, kPi);
}

TEST(StateResidual, ChainsExactly) {
  CounterRng rng(9);
  for (int i = 0; i < 1000; ++i) {
    auto draw = [&] { return VehicleState(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 5), rng.uniform(0, 7)); };
    const auto a = draw(), b = draw(), c = draw();
    const auto ab = state_residual(a, b), bc = state_residual(b, c), ac = state_residual(a, c);
    ASSERT_NEAR(ab.dx + bc.dx, ac.dx, 1e-12);
    ASSERT_NEAR(ab.dy + bc.dy, ac.dy, 1e-12);
    ASSERT_NEAR(ab.dv + bc.dv, ac.dv, 1e-12);
    ASSERT_NEAR(std::remainder(ab.dpsi + bc.dpsi - ac.dpsi, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(CounterRng, DeterministicAndForkable) {
  CounterRng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  CounterRng c = CounterRng(42).fork("x"), d = CounterRng(42).fork("y");
  EXPECT_NE(c.next_u64(), d.next_u64());
  // first values of the key-42 stream are fixed forever
  CounterRng e(42);
  const auto v0 = e.next_u64();
  EXPECT_EQ(v0, splitmix64(splitmix64(42)));
}

TEST(CounterRng, NormalMoments) {
  CounterRng rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
