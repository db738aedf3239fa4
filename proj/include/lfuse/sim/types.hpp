#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfuse/core.hpp"

namespace lfuse::sim {

inline constexpr double kImuRateHz = 100.0;
inline constexpr double kGnssRateHz = 5.0;
/// IMU/chassis frames per GNSS frame.
inline constexpr int kFramesPerGnss = 20;

struct ImuFrame {
  double t = 0.0;
  std::array<double, 3> accel{};  // body frame: forward, left, up (up carries no gravity)
  std::array<double, 3> gyro{};

  friend bool operator==(const ImuFrame&, const ImuFrame&) = default;
};

struct ChassisFrame {
  double t = 0.0;
  double nominal_speed = 0.0;
  std::array<double, 4> wheel_speeds{};  // FL, FR, RL, RR
  double steering_angle = 0.0;
  bool stationary = false;
  double fwd_accel = 0.0;
  double lat_accel = 0.0;
  double heading_rate = 0.0;

  friend bool operator==(const ChassisFrame&, const ChassisFrame&) = default;
};

enum class SolutionType { fix, floating, single, none };

inline std::string_view to_string(SolutionType s) {
  switch (s) {
    case SolutionType::fix: return "FIX";
    case SolutionType::floating: return "FLOAT";
    case SolutionType::single: return "SINGLE";
    case SolutionType::none: return "NONE";
  }
  return "NONE";
}

inline std::optional<SolutionType> solution_from_string(std::string_view s) {
  if (s == "FIX") return SolutionType::fix;
  if (s == "FLOAT") return SolutionType::floating;
  if (s == "SINGLE") return SolutionType::single;
  if (s == "NONE") return SolutionType::none;
  return std::nullopt;
}

struct GnssFrame {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double vel = 0.0;  // speed magnitude
  double heading = 0.0;
  int num_sats = 0;
  std::array<double, 4> reported_var{};  // x, y, v, psi
  double dop = 1.0;
  SolutionType solution = SolutionType::none;

  bool usable() const noexcept { return solution != SolutionType::none; }
  friend bool operator==(const GnssFrame&, const GnssFrame&) = default;
};

/// Ground-truth label of the current GNSS measurement's quality.
struct Validity {
  bool position = false;
  bool velocity = false;
  bool heading = false;

  std::array<double, 3> as_labels() const { return {position ? 1.0 : 0.0, velocity ? 1.0 : 0.0, heading ? 1.0 : 0.0}; }
  friend bool operator==(const Validity&, const Validity&) = default;
};

/// Thresholds separating valid from invalid GNSS measurements.
struct ValidityThresholds {
  double position_m = 1.0;
  double velocity_mps = 0.5;
  double heading_rad = 0.1;
};

inline Validity label_validity(const GnssFrame& z, const VehicleState& truth, const ValidityThresholds& th = {}) {
  if (!z.usable()) return {};
  Validity v;
  v.position = std::hypot(z.x - truth.x(), z.y - truth.y()) < th.position_m;
  v.velocity = std::abs(z.vel - std::abs(truth.v())) < th.velocity_mps;
  v.heading = std::abs(angle_diff(z.heading, truth.psi())) < th.heading_rad;
  return v;
}

struct TruthFrame {
  double t = 0.0;
  VehicleState state;
  /// True control applied over the step ending at this frame.
  ControlInput control;
  Validity validity;

  friend bool operator==(const TruthFrame&, const TruthFrame&) = default;
};

enum class GnssRegime { clean, degraded, outage, multipath };

inline std::string_view to_string(GnssRegime r) {
  switch (r) {
    case GnssRegime::clean: return "clean";
    case GnssRegime::degraded: return "degraded";
    case GnssRegime::outage: return "outage";
    case GnssRegime::multipath: return "multipath";
  }
  return "clean";
}

inline std::optional<GnssRegime> regime_from_string(std::string_view s) {
  if (s == "clean") return GnssRegime::clean;
  if (s == "degraded") return GnssRegime::degraded;
  if (s == "outage") return GnssRegime::outage;
  if (s == "multipath") return GnssRegime::multipath;
  return std::nullopt;
}

/// Regimes whose intervals feed the short training segments.
inline bool is_poor(GnssRegime r) { return r != GnssRegime::clean; }

struct RegimeInterval {
  GnssRegime regime = GnssRegime::clean;
  double start = 0.0;
  double end = 0.0;

  friend bool operator==(const RegimeInterval&, const RegimeInterval&) = default;
};

/// One simulated drive: aligned 100 Hz truth/IMU/chassis streams plus 5 Hz GNSS.
struct Run {
  std::string name;
  std::uint64_t seed = 0;
  double duration = 0.0;
  std::vector<RegimeInterval> regimes;
  std::vector<TruthFrame> truth;
  std::vector<ImuFrame> imu;
  std::vector<ChassisFrame> chassis;
  std::vector<GnssFrame> gnss;

  friend bool operator==(const Run&, const Run&) = default;
};

inline GnssRegime regime_at(const std::vector<RegimeInterval>& regimes, double t) {
  for (const auto& r : regimes)
    if (t >= r.start && t < r.end) return r.regime;
  if (!regimes.empty() && t >= regimes.back().end) return regimes.back().regime;
  return GnssRegime::clean;
}

}  // namespace lfuse::sim
