#include <gtest/gtest.h>

#include <cmath>

#include "lfuse/ekf.hpp"
#include "lfuse/eval.hpp"
#include "lfuse/sim/generate.hpp"
#include "support/ekf_checks.hpp"

using namespace lfuse;
using namespace lfuse::ekf;

namespace {

EkfState diag_state(const VehicleState& mean, double var) {
  EkfState s;
  s.mean = mean;
  s.cov = Mat4::Identity() * var;
  return s;
}

sim::GnssFrame fix_at(const VehicleState& s, double var) {
  sim::GnssFrame z;
  z.solution = sim::SolutionType::fix;
  z.x = s.x();
  z.y = s.y();
  z.vel = std::abs(s.v());
  z.heading = s.psi();
  z.reported_var = {var, var, var, var};
  return z;
}

double position_rmse(const fusion::EpisodeTrace& tr) { return eval::rmse(eval::trace_errors(tr)).pos; }

sim::Segment whole(const sim::Run& run) { return sim::cut_segment(run, 0, static_cast<long>(run.truth.size()), run.name); }

}  // namespace

TEST(EkfPredict, Examples) {
  EkfConfig cfg;
  cfg.q = {0, 0, 0, 0};
  const auto s = diag_state(VehicleState(1, 2, 3, 0.4), 0.5);
  const auto p = ekf_predict(s, {0, 0, 0}, 0.01, cfg);
  EXPECT_EQ(p.mean, s.mean);
  EXPECT_EQ(p.cov, s.cov);

  const Mat4 F = motion_jacobian(VehicleState(0, 0, 5, 0), {5, 0, 0}, 0.01);
  EXPECT_NEAR(F(0, 3), 0.0, 1e-15);
  EXPECT_NEAR(F(1, 3), 0.05, 1e-15);
}

TEST(EkfPredict, JacobianMatchesFiniteDifferences) {
  const VehicleState s(3, -1, 4, 2.2);
  const ControlInput u{4.5, 0.3, 0.2};
  const double dt = 0.01, h = 1e-6;
  const Mat4 F = motion_jacobian(s, u, dt);
  for (int j = 0; j < 4; ++j) {
    auto a = s.to_array(), b = s.to_array();
    a[j] += h;
    b[j] -= h;
    const auto pa = predict_state(VehicleState::from_array(a), u, dt).to_array();
    const auto pb = predict_state(VehicleState::from_array(b), u, dt).to_array();
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(F(i, j), (pa[i] - pb[i]) / (2 * h), 1e-8) << i << "," << j;
  }
}

TEST(EkfPredict, TraceNonDecreasing) {
  EkfConfig cfg;
  auto s = diag_state(VehicleState(0, 0, 5, 1.0), 0.1);
  CounterRng rng(1);
  for (int k = 0; k < 500; ++k) {
    const double before = s.cov.trace();
    s = ekf_predict(s, {rng.uniform(0, 10), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)}, 0.01, cfg);
    ASSERT_GE(s.cov.trace(), before);
  }
}

TEST(EkfUpdate, Limits) {
  EkfConfig cfg;
  const auto s = diag_state(VehicleState(1, 2, 3, 0.4), 1.0);
  const VehicleState target(2, 1, 3.5, 0.6);
  const auto ignored = ekf_update(s, fix_at(target, 1e12), cfg);
  EXPECT_NEAR(ignored.mean.x(), 1, 1e-6);
  EXPECT_NEAR(ignored.mean.y(), 2, 1e-6);
  EXPECT_NEAR(ignored.mean.v(), 3, 1e-6);
  EXPECT_NEAR(ignored.mean.psi(), 0.4, 1e-6);
  const auto trusted = ekf_update(s, fix_at(target, 1e-12), cfg);
  EXPECT_NEAR(trusted.mean.x(), 2, 1e-9);
  EXPECT_NEAR(trusted.mean.y(), 1, 1e-9);
  EXPECT_NEAR(trusted.mean.v(), 3.5, 1e-9);
  EXPECT_NEAR(trusted.mean.psi(), 0.6, 1e-9);
}

TEST(EkfUpdate, ScalarBayesPerChannel) {
  EkfConfig cfg;
  const auto s = diag_state(VehicleState(0, 0, 0, 1.0), 1.0);
  const auto post = ekf_update(s, fix_at(VehicleState(1, 1, 1, 2.0), 1.0), cfg);
  EXPECT_NEAR(post.mean.x(), 0.5, 1e-12);
  EXPECT_NEAR(post.mean.y(), 0.5, 1e-12);
  EXPECT_NEAR(post.mean.v(), 0.5, 1e-12);
  EXPECT_NEAR(post.mean.psi(), 1.5, 1e-12);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(post.cov(i, i), 0.5, 1e-12);
}

TEST(EkfUpdate, HeadingInnovationWraps) {
  EkfConfig cfg;
  const auto s = diag_state(VehicleState(0, 0, 1, 6.2), 1.0);
  const auto post = ekf_update(s, fix_at(VehicleState(0, 0, 1, 0.1), 1.0), cfg);
  // innovation 0.1 - 6.2 + 2 pi = 0.18318...
  EXPECT_NEAR(angle_diff(post.mean.psi(), 6.2), 0.5 * 0.18318530717958, 1e-12);
}

TEST(EkfUpdate, GateAndErrors) {
  EkfConfig cfg;
  cfg.gate = 9.0;
  const auto s = diag_state(VehicleState(0, 0, 1, 1.0), 1.0);
  UpdateInfo info;
  const auto same = ekf_update(s, fix_at(VehicleState(10, 0, 1, 1.0), 1.0), cfg, &info);
  EXPECT_FALSE(info.accepted);
  EXPECT_NEAR(info.mahalanobis2, 50.0, 1e-9);
  EXPECT_EQ(same.mean, s.mean);
  ekf_update(s, fix_at(VehicleState(1, 0, 1, 1.0), 1.0), cfg, &info);
  EXPECT_TRUE(info.accepted);

  sim::GnssFrame none;
  EXPECT_THROW(ekf_update(s, none, cfg), InvalidArgument);
  EkfState zero;
  zero.cov = Mat4::Zero();
  EXPECT_THROW(ekf_update(zero, fix_at(VehicleState(), 0.0), EkfConfig{}), Error);
}

TEST(EkfLinearOracle, MatchesScalarKalmanFilters) {
  const auto r = lfuse::testing::linear_kalman_oracle();
  EXPECT_EQ(r.steps, 1000);
  EXPECT_LT(r.max_state_error, 1e-8);
  EXPECT_LT(r.max_cov_error, 1e-12);
}

TEST(RunEkf, ZeroNoiseTracksTruth) {
  auto spec = sim::random_scenario(4, 60, sim::GnssProfile::clean, sim::NoiseConfig::zero());
  const auto seg = whole(sim::simulate(spec));
  std::vector<EkfState> states;
  const auto tr = run_ekf(seg, {}, 1, &states);
  EXPECT_LT(position_rmse(tr), 1e-3);
  ASSERT_EQ(states.size(), seg.truth.size());
  for (auto& s : states) {
    ASSERT_LT((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    Eigen::SelfAdjointEigenSolver<Mat4> es(s.cov);
    ASSERT_GE(es.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(RunEkf, CleanAccurateDegradedNot) {
  auto spec = sim::random_scenario(21, 60, sim::GnssProfile::clean);
  const auto clean = position_rmse(run_ekf(whole(sim::simulate(spec)), {}));
  EXPECT_LT(clean, 0.1);
  spec.regimes = {{sim::GnssRegime::degraded, 0, 60}};
  const auto degraded = position_rmse(run_ekf(whole(sim::simulate(spec)), {}));
  EXPECT_GE(degraded, 5 * clean);
}

TEST(RunEkf, UpdatesFollowStrideAndOutages) {
  const auto run = sim::simulate(sim::random_scenario(2, 100, sim::GnssProfile::mixed));
  const auto seg = whole(run);
  const auto t1 = run_ekf(seg, {}, 1);
  const auto t2 = run_ekf(seg, {}, 2);
  int usable = 0;
  for (std::size_t g = 1; g < seg.gnss.size(); ++g) usable += seg.gnss[g].usable();
  EXPECT_EQ(t1.updates, usable);
  EXPECT_LT(t2.updates, t1.updates);
  EXPECT_EQ(t1.method, "ekf");
  for (const auto& f : t1.frames) {
    if (f.regime == sim::GnssRegime::outage && f.t > 0) {
      ASSERT_FALSE(f.updated) << f.t;
    }
  }
}

TEST(RunEkf, NeesIsConsistentOnHonestNoise) {
  const auto r = lfuse::testing::nees_monte_carlo();
  RecordProperty("mean_nees", std::to_string(r.mean));
  EXPECT_GE(r.inside, 45) << "mean NEES " << r.mean;
}
