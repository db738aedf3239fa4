#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "lfuse/ekf.hpp"
#include "lfuse/sim/generate.hpp"

namespace lfuse::testing {

struct OracleResult {
  double max_state_error = 0.0;
  double max_cov_error = 0.0;
  int steps = 0;
};

/// Runs the EKF with zero control speed, where the model is linear with F = I
/// and every channel is an independent scalar Kalman filter, next to that
/// closed-form filter.
inline OracleResult linear_kalman_oracle(std::uint64_t seed = 17, int steps = 1000) {
  ekf::EkfConfig cfg;
  cfg.q = {2e-4, 3e-4, 1e-2, 5e-4};
  ekf::EkfState s;
  s.mean = VehicleState(1, 2, 3, 1.0);
  s.cov = ekf::Mat4::Zero();
  for (int i = 0; i < 4; ++i) s.cov(i, i) = cfg.p0[i];
  std::array<double, 4> m{1, 2, 3, 1.0}, P = cfg.p0;
  CounterRng rng(seed);
  const double dt = 0.01;
  OracleResult r;
  for (int k = 1; k <= steps; ++k) {
    const ControlInput u{0.0, rng.uniform(-1, 1), rng.uniform(-0.1, 0.1)};
    s = ekf::ekf_predict(s, u, dt, cfg);
    m[2] += u.a * dt;
    m[3] += u.omega * dt;
    for (int i = 0; i < 4; ++i) P[i] += cfg.q[i] * dt;
    if (k % 20 == 0) {
      sim::GnssFrame z;
      z.solution = sim::SolutionType::fix;
      z.x = m[0] + rng.normal(0, 0.3);
      z.y = m[1] + rng.normal(0, 0.3);
      z.vel = m[2] + rng.normal(0, 0.1);
      z.heading = m[3] + rng.normal(0, 0.02);
      z.reported_var = {0.09, 0.04, 0.01, 4e-4};
      s = ekf::ekf_update(s, z, cfg);
      const std::array<double, 4> zz{z.x, z.y, z.vel, z.heading};
      for (int i = 0; i < 4; ++i) {
        const double K = P[i] / (P[i] + z.reported_var[i]);
        m[i] += K * (zz[i] - m[i]);
        P[i] = (1 - K) * P[i];
      }
    }
    const auto a = s.mean.to_array();
    for (int i = 0; i < 4; ++i) {
      const double e = i == 3 ? std::abs(angle_diff(a[i], m[i])) : std::abs(a[i] - m[i]);
      r.max_state_error = std::max(r.max_state_error, e);
      r.max_cov_error = std::max(r.max_cov_error, std::abs(s.cov(i, i) - P[i]));
      for (int j = 0; j < 4; ++j)
        if (i != j) r.max_cov_error = std::max(r.max_cov_error, std::abs(s.cov(i, j)));
    }
    ++r.steps;
  }
  return r;
}

struct NeesResult {
  int runs = 0;
  int inside = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Time-averaged NEES over Monte-Carlo runs whose sensor noise matches the
/// filter's process model. Each run contributes 12 samples 5 s apart, so a
/// consistent filter's average follows chi2(48)/12.
inline NeesResult nees_monte_carlo(int runs = 50, std::uint64_t first_seed = 1000) {
  NeesResult r;
  r.runs = runs;
  r.lo = 30.7545 / 12;
  r.hi = 69.0226 / 12;
  for (int k = 0; k < runs; ++k) {
    sim::NoiseConfig noise;
    noise.gyro_bias_sigma = 0.0;
    noise.accel_bias_sigma = 0.0;
    const auto spec = sim::random_scenario(first_seed + k, 60, sim::GnssProfile::clean, noise);
    const auto run = sim::simulate(spec);
    const auto seg = sim::cut_segment(run, 0, static_cast<long>(run.truth.size()), run.name);
    std::vector<ekf::EkfState> states;
    ekf::run_ekf(seg, {}, 1, &states);
    double sum = 0.0;
    for (int j = 1; j <= 12; ++j) {
      const long f = 500L * j - 7;
      const auto& s = states[f];
      const auto& t = seg.truth[f].state;
      const ekf::Vec4 e(s.mean.x() - t.x(), s.mean.y() - t.y(), s.mean.v() - t.v(), angle_diff(s.mean.psi(), t.psi()));
      sum += e.dot(s.cov.ldlt().solve(e));
    }
    const double avg = sum / 12;
    r.mean += avg / runs;
    r.inside += avg >= r.lo && avg <= r.hi;
  }
  return r;
}

}  // namespace lfuse::testing
