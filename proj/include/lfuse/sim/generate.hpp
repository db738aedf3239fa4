#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "lfuse/motion.hpp"
#include "lfuse/rng.hpp"
#include "lfuse/sim/scenario.hpp"
#include "lfuse/sim/types.hpp"

namespace lfuse::sim {

inline double frame_time(long k) { return static_cast<double>(k) / kImuRateHz; }

inline long frame_count(double duration) { return std::lround(duration * kImuRateHz) + 1; }

namespace detail {

/// Heading-rate profile of a maneuver at time t.
inline double maneuver_rate(const Maneuver& m, double t) {
  const double len = m.end - m.start;
  switch (m.kind) {
    case ManeuverKind::left_turn: return (m.angle != 0.0 ? m.angle : std::numbers::pi / 2) / len;
    case ManeuverKind::right_turn: return -(m.angle != 0.0 ? m.angle : std::numbers::pi / 2) / len;
    case ManeuverKind::u_turn: return (m.angle != 0.0 ? m.angle : std::numbers::pi) / len;
    case ManeuverKind::roundabout: {
      // right pi/4 entering, left 3pi/2 around, right pi/4 exiting
      const double u = (t - m.start) / len;
      if (u < 0.2) return -(std::numbers::pi / 4) / (0.2 * len);
      if (u < 0.8) return (1.5 * std::numbers::pi) / (0.6 * len);
      return -(std::numbers::pi / 4) / (0.2 * len);
    }
    default: return 0.0;
  }
}

inline double maneuver_speed(const Maneuver& m) {
  if (m.kind == ManeuverKind::stop) return 0.0;
  if (m.kind == ManeuverKind::reverse) return -std::abs(m.speed);
  return std::abs(m.speed);
}

}  // namespace detail

/// 100 Hz ground truth. Each state is the Euler step of the previous one under
/// the frame's true control (speed after the acceleration step, accel, yaw rate),
/// so the kinematic model reproduces the trajectory exactly.
inline std::vector<TruthFrame> generate_truth(const ScenarioSpec& spec) {
  spec.validate();
  const long n = frame_count(spec.duration);
  const double dt = 1.0 / kImuRateHz;
  std::vector<TruthFrame> out;
  out.reserve(static_cast<std::size_t>(n));
  out.push_back({0.0, spec.initial, {spec.initial.v(), 0.0, 0.0}, {}});
  std::size_t mi = 0;
  for (long k = 1; k < n; ++k) {
    const double t_prev = frame_time(k - 1);
    while (mi + 1 < spec.maneuvers.size() && t_prev >= spec.maneuvers[mi].end - 1e-12) ++mi;
    const Maneuver& m = spec.maneuvers[mi];
    const VehicleState& prev = out.back().state;
    const double target = detail::maneuver_speed(m);
    const double a_max = spec.noise.max_accel;
    double v_next;
    double accel;
    if (std::abs(target - prev.v()) <= a_max * dt) {
      v_next = target;
      accel = (v_next - prev.v()) / dt;
    } else {
      accel = target > prev.v() ? a_max : -a_max;
      v_next = prev.v() + accel * dt;
    }
    // no turning while standing still
    const double omega = v_next == 0.0 ? 0.0 : detail::maneuver_rate(m, t_prev);
    const ControlInput u{v_next, accel, omega};
    out.push_back({frame_time(k), predict_state(prev, u, dt), u, {}});
  }
  return out;
}

struct SensorBiases {
  std::array<double, 3> accel{};
  std::array<double, 3> gyro{};
};

inline SensorBiases draw_biases(const NoiseConfig& noise, std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).fork("bias");
  SensorBiases b;
  for (auto& v : b.accel) v = rng.normal(0.0, noise.accel_bias_sigma);
  for (auto& v : b.gyro) v = rng.normal(0.0, noise.gyro_bias_sigma);
  return b;
}

/// Body-frame IMU: forward accel, centripetal v*omega on the lateral axis,
/// a zero vertical placeholder, and yaw rate on gyro z; constant bias plus white noise.
inline std::vector<ImuFrame> synth_imu(const std::vector<TruthFrame>& truth, const NoiseConfig& noise,
                                       std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).fork("imu");
  const SensorBiases bias = draw_biases(noise, seed);
  std::vector<ImuFrame> out;
  out.reserve(truth.size());
  for (const auto& tf : truth) {
    ImuFrame f;
    f.t = tf.t;
    const double v = tf.state.v();
    const double w = tf.control.omega;
    const std::array<double, 3> accel{tf.control.a, v * w, 0.0};
    const std::array<double, 3> gyro{0.0, 0.0, w};
    for (int i = 0; i < 3; ++i) {
      f.accel[i] = accel[i] + bias.accel[i] + rng.normal(0.0, noise.accel_sigma);
      f.gyro[i] = gyro[i] + bias.gyro[i] + rng.normal(0.0, noise.gyro_sigma);
    }
    out.push_back(f);
  }
  return out;
}

/// Differential wheel speeds v -+ omega * track / 2 (left, right). A vehicle at
/// rest reports exactly zero wheel and nominal speed.
inline std::vector<ChassisFrame> synth_chassis(const std::vector<TruthFrame>& truth, const NoiseConfig& noise,
                                               std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).fork("chassis");
  std::vector<ChassisFrame> out;
  out.reserve(truth.size());
  for (const auto& tf : truth) {
    ChassisFrame f;
    f.t = tf.t;
    const double v = tf.state.v();
    const double w = tf.control.omega;
    f.stationary = v == 0.0;
    const double half = 0.5 * noise.track_width * w;
    const std::array<double, 4> ideal{v - half, v + half, v - half, v + half};
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double n = rng.normal(0.0, noise.wheel_sigma);
      f.wheel_speeds[i] = f.stationary ? 0.0 : ideal[i] + n;
      sum += f.wheel_speeds[i];
    }
    f.nominal_speed = sum / 4.0;
    const double steer = std::abs(v) > 0.1 ? std::atan(noise.wheelbase * w / v) : 0.0;
    f.steering_angle = steer + rng.normal(0.0, noise.steering_sigma);
    f.fwd_accel = tf.control.a + rng.normal(0.0, noise.fwd_accel_sigma);
    f.lat_accel = v * w + rng.normal(0.0, noise.lat_accel_sigma);
    f.heading_rate = w + rng.normal(0.0, noise.heading_rate_sigma);
    out.push_back(f);
  }
  return out;
}

/// 5 Hz GNSS at every 20th truth frame, with regime-dependent quality.
inline std::vector<GnssFrame> synth_gnss(const std::vector<TruthFrame>& truth,
                                         const std::vector<RegimeInterval>& regimes, const NoiseConfig& noise,
                                         std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).fork("gnss");
  std::vector<GnssFrame> out;
  // per-interval parameters, drawn on entry
  int current = -1;
  double dop_base = 1.0;
  double mp_mag_mean = 0.0, mp_mag = 0.0, mp_dir_mean = 0.0, mp_dir = 0.0;
  const double phi = noise.multipath_tau > 0 ? std::exp(-(1.0 / kGnssRateHz) / noise.multipath_tau) : 0.0;
  const double innov = std::sqrt(1.0 - phi * phi);

  for (std::size_t k = 0; k < truth.size(); k += kFramesPerGnss) {
    const auto& tf = truth[k];
    int idx = static_cast<int>(regimes.size()) - 1;
    for (std::size_t i = 0; i < regimes.size(); ++i)
      if (tf.t >= regimes[i].start && tf.t < regimes[i].end) {
        idx = static_cast<int>(i);
        break;
      }
    const GnssRegime regime = regimes[idx].regime;
    if (idx != current) {
      current = idx;
      dop_base = rng.uniform(noise.degraded_dop_min, noise.degraded_dop_max);
      mp_mag_mean = rng.uniform(std::max(noise.multipath_bias_min, 4.0), std::min(noise.multipath_bias_max, 10.0));
      mp_mag = mp_mag_mean;
      mp_dir_mean = rng.uniform(0.0, kTwoPi);
      mp_dir = mp_dir_mean;
    }
    GnssFrame z;
    z.t = tf.t;
    const VehicleState& s = tf.state;
    GnssRegimeNoise sig;
    double bias_x = 0.0, bias_y = 0.0;
    std::array<double, 4> reported{};
    switch (regime) {
      case GnssRegime::clean:
        sig = noise.clean;
        z.solution = SolutionType::fix;
        z.num_sats = static_cast<int>(rng.uniform_int(20, 30));
        z.dop = rng.uniform(0.8, 1.2);
        reported = {sig.pos_sigma * sig.pos_sigma, sig.pos_sigma * sig.pos_sigma, sig.vel_sigma * sig.vel_sigma,
                    sig.heading_sigma * sig.heading_sigma};
        break;
      case GnssRegime::degraded: {
        z.dop = std::clamp(dop_base + rng.uniform(-0.3, 0.3), noise.degraded_dop_min, noise.degraded_dop_max);
        sig = {noise.degraded_per_dop.pos_sigma * z.dop, noise.degraded_per_dop.vel_sigma * z.dop,
               noise.degraded_per_dop.heading_sigma * z.dop};
        z.solution = z.dop < 6.0 ? SolutionType::floating : SolutionType::single;
        z.num_sats = static_cast<int>(rng.uniform_int(6, 12));
        const double f = noise.understate_factor;
        reported = {sig.pos_sigma * sig.pos_sigma / f, sig.pos_sigma * sig.pos_sigma / f,
                    sig.vel_sigma * sig.vel_sigma / f, sig.heading_sigma * sig.heading_sigma / f};
        break;
      }
      case GnssRegime::multipath: {
        sig = noise.multipath;
        z.solution = SolutionType::floating;
        z.num_sats = static_cast<int>(rng.uniform_int(10, 18));
        z.dop = rng.uniform(2.0, 4.0);
        mp_mag = mp_mag_mean + phi * (mp_mag - mp_mag_mean) + innov * 2.0 * rng.normal();
        mp_mag = std::clamp(mp_mag, noise.multipath_bias_min, noise.multipath_bias_max);
        mp_dir = mp_dir_mean + phi * (mp_dir - mp_dir_mean) + innov * 0.3 * rng.normal();
        bias_x = mp_mag * std::cos(mp_dir);
        bias_y = mp_mag * std::sin(mp_dir);
        // the receiver is unaware of the bias
        reported = {sig.pos_sigma * sig.pos_sigma, sig.pos_sigma * sig.pos_sigma, sig.vel_sigma * sig.vel_sigma,
                    sig.heading_sigma * sig.heading_sigma};
        break;
      }
      case GnssRegime::outage:
        z.solution = SolutionType::none;
        z.num_sats = static_cast<int>(rng.uniform_int(0, 3));
        z.dop = 99.0;
        reported = {1e6, 1e6, 1e6, 1e6};
        break;
    }
    if (z.usable()) {
      z.x = s.x() + bias_x + rng.normal(0.0, sig.pos_sigma);
      z.y = s.y() + bias_y + rng.normal(0.0, sig.pos_sigma);
      z.vel = std::abs(s.v()) + rng.normal(0.0, sig.vel_sigma);
      z.heading = wrap_angle(s.psi() + rng.normal(0.0, sig.heading_sigma));
    }
    z.reported_var = reported;
    out.push_back(z);
  }
  return out;
}

/// Writes validity labels into every truth frame from the latest GNSS frame
/// at or before it.
inline void label_truth(std::vector<TruthFrame>& truth, const std::vector<GnssFrame>& gnss,
                        const ValidityThresholds& th = {}) {
  std::size_t g = 0;
  Validity current{};
  for (std::size_t k = 0; k < truth.size(); ++k) {
    while (g < gnss.size() && gnss[g].t <= truth[k].t + 1e-9) {
      // the GNSS frame shares its timestamp with truth frame g * 20
      const std::size_t tk = g * kFramesPerGnss;
      current = label_validity(gnss[g], truth[std::min(tk, truth.size() - 1)].state, th);
      ++g;
    }
    truth[k].validity = current;
  }
}

inline Run simulate(const ScenarioSpec& spec) {
  spec.validate();
  Run run;
  run.name = spec.name;
  run.seed = spec.seed;
  run.duration = spec.duration;
  run.regimes = spec.regimes;
  run.truth = generate_truth(spec);
  run.imu = synth_imu(run.truth, spec.noise, spec.seed);
  run.chassis = synth_chassis(run.truth, spec.noise, spec.seed);
  run.gnss = synth_gnss(run.truth, spec.regimes, spec.noise, spec.seed);
  label_truth(run.truth, run.gnss);
  return run;
}

}  // namespace lfuse::sim
