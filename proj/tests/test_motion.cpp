#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lfuse/motion.hpp"
#include "lfuse/rng.hpp"

using namespace lfuse;
constexpr double kPi = std::numbers::pi;

TEST(ApplyCorrection, Examples) {
  EXPECT_EQ(apply_correction({1, 0, 0}, {0, 0, 0}), (ControlInput{1, 0, 0}));
  const auto u = apply_correction({5, 0.2, 0.1}, {-0.1, 0.05, -0.02});
  EXPECT_NEAR(u.v, 4.9, 1e-15);
  EXPECT_NEAR(u.a, 0.25, 1e-15);
  EXPECT_NEAR(u.omega, 0.08, 1e-15);
  EXPECT_EQ(apply_correction({0, 0, 0}, {0.3, 0, 0}), (ControlInput{0.3, 0, 0}));
  EXPECT_THROW(apply_correction({1e308, 0, 0}, {1e308, 0, 0}), NonFiniteError);
}

TEST(PredictState, Examples) {
  const auto a = predict_state({0, 0, 5, 0}, {5, 0, 0}, 0.01);
  EXPECT_NEAR(a.x(), 0.05, 1e-15);
  EXPECT_EQ(a.y(), 0.0);
  EXPECT_EQ(a.v(), 5.0);
  EXPECT_EQ(a.psi(), 0.0);

  const auto b = predict_state({0, 0, 1, kPi / 2}, {1, 0.5, 0.2}, 0.1);
  EXPECT_NEAR(b.x(), 0.0, 1e-15);
  EXPECT_NEAR(b.y(), 0.1, 1e-15);
  EXPECT_NEAR(b.v(), 1.05, 1e-15);
  EXPECT_NEAR(b.psi(), kPi / 2 + 0.02, 1e-15);

  EXPECT_THROW(predict_state({}, {1, 0, 0}, 0.0), InvalidArgument);
  EXPECT_THROW(predict_state({}, {std::nan(""), 0, 0}, 0.1), NonFiniteError);
}

TEST(PredictState, ZeroControlIsIdentity) {
  const VehicleState s(3.5, -2.25, 4.0, 1.3);
  EXPECT_EQ(predict_state(s, {0, 0, 0}, 0.01), s);
}

TEST(PredictState, StepLengthIsSpeedTimesDt) {
  CounterRng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const VehicleState s(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-5, 5), rng.uniform(0, 6.28));
    const ControlInput u{rng.uniform(-10, 10), rng.uniform(-2, 2), rng.uniform(-1, 1)};
    const auto n = predict_state(s, u, 0.01);
    ASSERT_NEAR(std::hypot(n.x() - s.x(), n.y() - s.y()), std::abs(u.v) * 0.01, 1e-12);
  }
}

TEST(PredictState, CircleCloses) {
  // Euler integration of a constant-turn control; the analytic arc is
  // x = r sin(wt), y = r (1 - cos(wt)) with r = v / w.
  VehicleState s(0, 0, 1, 0);
  const double v = 1.0, w = 0.1, dt = 0.01, r = v / w;
  double worst = 0.0;
  for (int k = 1; k <= 6283; ++k) {
    s = predict_state(s, {v, 0, w}, dt);
    const double t = k * dt;
    const double ax = r * std::sin(w * t), ay = r * (1 - std::cos(w * t));
    worst = std::max(worst, std::hypot(s.x() - ax, s.y() - ay));
    // distance to the circle centred at (0, 10)
    ASSERT_LT(std::abs(std::hypot(s.x(), s.y() - r) - r), 0.05);
  }
  EXPECT_LT(worst, 0.05);
}

TEST(PredictState, GradientMatchesCentralDifferences) {
  const VehicleState s(1.0, 2.0, 3.0, 0.7);
  const ControlInput u{2.0, 0.3, 0.2};
  const double dt = 0.05, h = 1e-5;
  // analytic Jacobian wrt (psi, v_hat)
  const double c = std::cos(s.psi()), sn = std::sin(s.psi());
  const auto fd_psi = [&](int ch) {
    const auto p = predict_state(VehicleState(s.x(), s.y(), s.v(), s.psi() + h), u, dt).to_array();
    const auto m = predict_state(VehicleState(s.x(), s.y(), s.v(), s.psi() - h), u, dt).to_array();
    return (p[ch] - m[ch]) / (2 * h);
  };
  EXPECT_NEAR(fd_psi(0), -sn * u.v * dt, 1e-4 * std::abs(sn * u.v * dt));
  EXPECT_NEAR(fd_psi(1), c * u.v * dt, 1e-4 * std::abs(c * u.v * dt));
  const auto fd_v = [&](int ch) {
    const auto p = predict_state(s, {u.v + h, u.a, u.omega}, dt).to_array();
    const auto m = predict_state(s, {u.v - h, u.a, u.omega}, dt).to_array();
    return (p[ch] - m[ch]) / (2 * h);
  };
  EXPECT_NEAR(fd_v(0), c * dt, 1e-4 * c * dt);
  EXPECT_NEAR(fd_v(1), sn * dt, 1e-4 * sn * dt);
}

TEST(Huber, Examples) {
  EXPECT_EQ(huber(0, 1), 0.0);
  EXPECT_EQ(huber(0.5, 1), 0.125);
  EXPECT_EQ(huber(2, 1), 1.5);
  EXPECT_EQ(huber(-2, 1), 1.5);
  EXPECT_THROW(huber(1, 0), InvalidArgument);
  EXPECT_THROW(huber(1, -1), InvalidArgument);
}

TEST(RelativeStateLoss, Examples) {
  MotionStepConfig cfg;
  const VehicleState a(0, 0, 1, 0.2), b(0.5, 0.1, 1.1, 0.25);
  EXPECT_EQ(relative_state_loss(b, a, b, a, cfg), 0.0);
  // predicted change differs from the true one by (0.001, 0, 0, 0)
  const VehicleState b1(0.501, 0.1, 1.1, 0.25);
  EXPECT_NEAR(relative_state_loss(b1, a, b, a, cfg), 1e3 * 0.001 * 0.001 / 2, 1e-12);
  EXPECT_NEAR(relative_state_loss(b1, a, b, a, cfg), 5e-4, 1e-12);
  const VehicleState b2(0.5, 0.1, 1.1, 0.26);
  EXPECT_NEAR(relative_state_loss(b2, a, b, a, cfg), 5.0, 1e-9);
}

TEST(RelativeStateLoss, NonNegativeAndZeroIffMatch) {
  CounterRng rng(2);
  MotionStepConfig cfg;
  for (int i = 0; i < 500; ++i) {
    auto draw = [&] { return VehicleState(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0, 6)); };
    const auto p0 = draw(), p1 = draw(), g0 = draw(), g1 = draw();
    ASSERT_GE(relative_state_loss(p1, p0, g1, g0, cfg), 0.0);
  }
  const VehicleState s(1, 1, 1, 6.25), t(1.1, 1, 1, 0.01);
  EXPECT_EQ(relative_state_loss(t, s, t, s, cfg), 0.0);
}

TEST(MotionStepConfig, Validates) {
  MotionStepConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dt = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.alpha[2] = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
