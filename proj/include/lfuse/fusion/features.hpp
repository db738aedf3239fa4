#pragma once

#include <array>
#include <cmath>
#include <string>

#include "lfuse/core.hpp"
#include "lfuse/sim/types.hpp"

namespace lfuse::fusion {

inline constexpr int kMotionInputs = 16;
inline constexpr int kMeasurementInputs = 28;
/// Largest IMU/chassis timestamp gap accepted as the same instant.
inline constexpr double kAlignTolerance = 0.005;
/// Largest GNSS-to-frame gap before a GNSS frame is dropped.
inline constexpr double kGnssStaleness = 0.015;

inline void require_aligned(const sim::ImuFrame& imu, const sim::ChassisFrame& chassis) {
  if (std::abs(imu.t - chassis.t) > kAlignTolerance)
    throw InvalidArgument("misaligned frames: imu t=" + std::to_string(imu.t) + " chassis t=" + std::to_string(chassis.t));
}

/// Raw control: chassis speed (zero when stationary), chassis forward
/// acceleration and IMU yaw rate.
inline ControlInput assemble_control(const sim::ImuFrame& imu, const sim::ChassisFrame& chassis) {
  ControlInput u{chassis.stationary ? 0.0 : chassis.nominal_speed, chassis.fwd_accel, imu.gyro[2]};
  u.validate();
  return u;
}

/// MotionNet input: IMU (6) and chassis (10) signals with fixed scaling.
inline std::array<double, kMotionInputs> motion_input(const sim::ImuFrame& imu, const sim::ChassisFrame& c) {
  require_aligned(imu, c);
  return {imu.accel[0] / 5.0,
          imu.accel[1] / 5.0,
          imu.accel[2] / 5.0,
          imu.gyro[0],
          imu.gyro[1],
          imu.gyro[2],
          c.nominal_speed / 10.0,
          c.wheel_speeds[0] / 10.0,
          c.wheel_speeds[1] / 10.0,
          c.wheel_speeds[2] / 10.0,
          c.wheel_speeds[3] / 10.0,
          c.steering_angle,
          c.stationary ? 1.0 : 0.0,
          c.fwd_accel / 5.0,
          c.lat_accel / 5.0,
          c.heading_rate};
}

/// MeasurementNet input: the motion input followed by GNSS quality metadata
/// (satellites, log variances, DOP, solution one-hot), the GNSS speed and its
/// disagreement with the chassis speed in m/s.
inline std::array<double, kMeasurementInputs> measurement_input(const sim::ImuFrame& imu, const sim::ChassisFrame& c,
                                                                const sim::GnssFrame& z) {
  const auto m = motion_input(imu, c);
  std::array<double, kMeasurementInputs> out{};
  std::copy(m.begin(), m.end(), out.begin());
  int i = kMotionInputs;
  out[i++] = z.num_sats / 30.0;
  for (double v : z.reported_var) out[i++] = std::log10(std::max(v, 1e-8)) / 4.0;
  out[i++] = z.dop / 10.0;
  out[i++] = z.solution == sim::SolutionType::fix ? 1.0 : 0.0;
  out[i++] = z.solution == sim::SolutionType::floating ? 1.0 : 0.0;
  out[i++] = z.solution == sim::SolutionType::single ? 1.0 : 0.0;
  out[i++] = z.solution == sim::SolutionType::none ? 1.0 : 0.0;
  out[i++] = z.vel / 10.0;
  out[i++] = std::abs(z.vel) - std::abs(c.nominal_speed);
  return out;
}

/// GNSS measurement as a full state. The speed magnitude takes the sign of the
/// predicted speed.
inline std::array<double, 4> measurement_state(const sim::GnssFrame& z, double predicted_v) {
  return {z.x, z.y, predicted_v < 0.0 ? -z.vel : z.vel, z.heading};
}

}  // namespace lfuse::fusion
