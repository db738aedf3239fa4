#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfuse/rng.hpp"
#include "lfuse/sim/types.hpp"

namespace lfuse::sim {

enum class ManeuverKind { straight, left_turn, right_turn, u_turn, roundabout, stop, reverse };

inline std::string_view to_string(ManeuverKind k) {
  switch (k) {
    case ManeuverKind::straight: return "straight";
    case ManeuverKind::left_turn: return "left_turn";
    case ManeuverKind::right_turn: return "right_turn";
    case ManeuverKind::u_turn: return "u_turn";
    case ManeuverKind::roundabout: return "roundabout";
    case ManeuverKind::stop: return "stop";
    case ManeuverKind::reverse: return "reverse";
  }
  return "straight";
}

inline std::optional<ManeuverKind> maneuver_from_string(std::string_view s) {
  for (auto k : {ManeuverKind::straight, ManeuverKind::left_turn, ManeuverKind::right_turn, ManeuverKind::u_turn,
                 ManeuverKind::roundabout, ManeuverKind::stop, ManeuverKind::reverse})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// A maneuver holds over [start, end). `speed` is the target speed magnitude
/// (reverse drives at -speed; stop ignores it). `angle` is the total heading
/// change of a turn in radians; 0 selects the kind's default.
struct Maneuver {
  ManeuverKind kind = ManeuverKind::straight;
  double start = 0.0;
  double end = 0.0;
  double speed = 10.0;
  double angle = 0.0;
};

struct GnssRegimeNoise {
  double pos_sigma = 0.05;
  double vel_sigma = 0.05;
  double heading_sigma = 0.01;
};

/// Sensor noise model. Defaults are matched to the EKF's default process noise
/// (nominal speed sigma 0.1 m/s, forward accel 1 m/s^2, yaw rate 0.1 rad/s at 100 Hz).
struct NoiseConfig {
  double accel_sigma = 0.1;
  double gyro_sigma = 0.1;
  double accel_bias_sigma = 0.05;  // std of the per-run constant bias draw
  double gyro_bias_sigma = 0.003;
  double wheel_sigma = 0.2;
  double steering_sigma = 0.005;
  double fwd_accel_sigma = 1.0;
  double lat_accel_sigma = 0.1;
  double heading_rate_sigma = 0.05;
  double track_width = 1.6;
  double wheelbase = 2.8;
  double max_accel = 2.0;

  GnssRegimeNoise clean{0.05, 0.05, 0.01};
  /// Degraded sigmas are per unit DOP: sigma = dop * value.
  GnssRegimeNoise degraded_per_dop{0.5, 0.3, 0.1};
  double degraded_dop_min = 3.0;
  double degraded_dop_max = 10.0;
  /// Degraded reported variance = true variance / understate_factor.
  double understate_factor = 10.0;
  GnssRegimeNoise multipath{0.3, 0.1, 0.05};
  double multipath_bias_min = 2.0;
  double multipath_bias_max = 15.0;
  double multipath_tau = 10.0;

  static NoiseConfig zero() {
    NoiseConfig n;
    n.accel_sigma = n.gyro_sigma = n.accel_bias_sigma = n.gyro_bias_sigma = 0.0;
    n.wheel_sigma = n.steering_sigma = n.fwd_accel_sigma = n.lat_accel_sigma = n.heading_rate_sigma = 0.0;
    n.clean = {0.0, 0.0, 0.0};
    n.degraded_per_dop = {0.0, 0.0, 0.0};
    n.multipath = {0.0, 0.0, 0.0};
    return n;
  }
};

struct ScenarioSpec {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration = 60.0;
  VehicleState initial;
  std::vector<Maneuver> maneuvers;
  std::vector<RegimeInterval> regimes;
  NoiseConfig noise;

  /// Both schedules must tile [0, duration] without gaps or overlap.
  void validate() const {
    if (!(duration > 0.0)) throw InvalidArgument("scenario.duration must be > 0");
    auto check = [&](const char* what, const auto& items) {
      if (items.empty()) throw InvalidArgument(std::string("scenario.") + what + " is empty");
      double cursor = 0.0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        const std::string where = std::string("scenario.") + what + "[" + std::to_string(i) + "]";
        if (std::abs(it.start - cursor) > 1e-9) throw InvalidArgument(where + ".start leaves a gap or overlaps");
        if (!(it.end > it.start)) throw InvalidArgument(where + ".end must exceed start");
        cursor = it.end;
      }
      if (std::abs(cursor - duration) > 1e-9) throw InvalidArgument(std::string("scenario.") + what + " does not end at duration");
    };
    check("maneuvers", maneuvers);
    check("gnss", regimes);
    for (std::size_t i = 0; i < maneuvers.size(); ++i)
      if (!(maneuvers[i].speed >= 0.0))
        throw InvalidArgument("scenario.maneuvers[" + std::to_string(i) + "].speed must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// JSON document form

namespace detail {

inline double get_number(const nlohmann::json& j, const char* key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ParseError("field " + path + "." + key + " must be a number");
  return v.get<double>();
}

}  // namespace detail

inline nlohmann::json noise_to_json(const NoiseConfig& n) {
  auto regime = [](const GnssRegimeNoise& g) {
    return nlohmann::json{{"pos_sigma", g.pos_sigma}, {"vel_sigma", g.vel_sigma}, {"heading_sigma", g.heading_sigma}};
  };
  return {{"accel_sigma", n.accel_sigma},
          {"gyro_sigma", n.gyro_sigma},
          {"accel_bias_sigma", n.accel_bias_sigma},
          {"gyro_bias_sigma", n.gyro_bias_sigma},
          {"wheel_sigma", n.wheel_sigma},
          {"steering_sigma", n.steering_sigma},
          {"fwd_accel_sigma", n.fwd_accel_sigma},
          {"lat_accel_sigma", n.lat_accel_sigma},
          {"heading_rate_sigma", n.heading_rate_sigma},
          {"track_width", n.track_width},
          {"wheelbase", n.wheelbase},
          {"max_accel", n.max_accel},
          {"clean", regime(n.clean)},
          {"degraded_per_dop", regime(n.degraded_per_dop)},
          {"degraded_dop_min", n.degraded_dop_min},
          {"degraded_dop_max", n.degraded_dop_max},
          {"understate_factor", n.understate_factor},
          {"multipath", regime(n.multipath)},
          {"multipath_bias_min", n.multipath_bias_min},
          {"multipath_bias_max", n.multipath_bias_max},
          {"multipath_tau", n.multipath_tau}};
}

inline NoiseConfig noise_from_json(const nlohmann::json& j, const std::string& path = "noise") {
  if (!j.is_object()) throw ParseError("field " + path + " must be an object");
  NoiseConfig n;
  using detail::get_number;
  n.accel_sigma = get_number(j, "accel_sigma", n.accel_sigma, path);
  n.gyro_sigma = get_number(j, "gyro_sigma", n.gyro_sigma, path);
  n.accel_bias_sigma = get_number(j, "accel_bias_sigma", n.accel_bias_sigma, path);
  n.gyro_bias_sigma = get_number(j, "gyro_bias_sigma", n.gyro_bias_sigma, path);
  n.wheel_sigma = get_number(j, "wheel_sigma", n.wheel_sigma, path);
  n.steering_sigma = get_number(j, "steering_sigma", n.steering_sigma, path);
  n.fwd_accel_sigma = get_number(j, "fwd_accel_sigma", n.fwd_accel_sigma, path);
  n.lat_accel_sigma = get_number(j, "lat_accel_sigma", n.lat_accel_sigma, path);
  n.heading_rate_sigma = get_number(j, "heading_rate_sigma", n.heading_rate_sigma, path);
  n.track_width = get_number(j, "track_width", n.track_width, path);
  n.wheelbase = get_number(j, "wheelbase", n.wheelbase, path);
  n.max_accel = get_number(j, "max_accel", n.max_accel, path);
  auto regime = [&](const char* key, GnssRegimeNoise g) {
    if (!j.contains(key)) return g;
    const auto& r = j.at(key);
    const std::string p = path + "." + key;
    if (!r.is_object()) throw ParseError("field " + p + " must be an object");
    g.pos_sigma = get_number(r, "pos_sigma", g.pos_sigma, p);
    g.vel_sigma = get_number(r, "vel_sigma", g.vel_sigma, p);
    g.heading_sigma = get_number(r, "heading_sigma", g.heading_sigma, p);
    return g;
  };
  n.clean = regime("clean", n.clean);
  n.degraded_per_dop = regime("degraded_per_dop", n.degraded_per_dop);
  n.multipath = regime("multipath", n.multipath);
  n.degraded_dop_min = get_number(j, "degraded_dop_min", n.degraded_dop_min, path);
  n.degraded_dop_max = get_number(j, "degraded_dop_max", n.degraded_dop_max, path);
  n.understate_factor = get_number(j, "understate_factor", n.understate_factor, path);
  n.multipath_bias_min = get_number(j, "multipath_bias_min", n.multipath_bias_min, path);
  n.multipath_bias_max = get_number(j, "multipath_bias_max", n.multipath_bias_max, path);
  n.multipath_tau = get_number(j, "multipath_tau", n.multipath_tau, path);
  if (n.understate_factor <= 0.0) throw ParseError("field " + path + ".understate_factor must be > 0");
  if (n.degraded_dop_min <= 0.0 || n.degraded_dop_max < n.degraded_dop_min)
    throw ParseError("field " + path + ".degraded_dop_min/max must satisfy 0 < min <= max");
  return n;
}

inline nlohmann::json scenario_to_json(const ScenarioSpec& s) {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& x : s.maneuvers)
    m.push_back({{"kind", to_string(x.kind)}, {"start", x.start}, {"end", x.end}, {"speed", x.speed}, {"angle", x.angle}});
  nlohmann::json g = nlohmann::json::array();
  for (const auto& r : s.regimes) g.push_back({{"regime", to_string(r.regime)}, {"start", r.start}, {"end", r.end}});
  return {{"name", s.name},
          {"seed", s.seed},
          {"duration", s.duration},
          {"initial", {{"x", s.initial.x()}, {"y", s.initial.y()}, {"v", s.initial.v()}, {"psi", s.initial.psi()}}},
          {"maneuvers", m},
          {"gnss", g},
          {"noise", noise_to_json(s.noise)}};
}

/// Parses a scenario document; every error names the offending field.
inline ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("scenario document must be a JSON object");
  ScenarioSpec s;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ParseError("field name must be a string");
    s.name = j["name"].get<std::string>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) throw ParseError("field seed must be an integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  s.duration = detail::get_number(j, "duration", s.duration, "scenario");
  if (j.contains("initial")) {
    const auto& i = j["initial"];
    if (!i.is_object()) throw ParseError("field initial must be an object");
    s.initial = VehicleState(detail::get_number(i, "x", 0.0, "initial"), detail::get_number(i, "y", 0.0, "initial"),
                             detail::get_number(i, "v", 0.0, "initial"), detail::get_number(i, "psi", 0.0, "initial"));
  }
  if (!j.contains("maneuvers") || !j["maneuvers"].is_array()) throw ParseError("field maneuvers must be an array");
  for (std::size_t i = 0; i < j["maneuvers"].size(); ++i) {
    const auto& m = j["maneuvers"][i];
    const std::string path = "maneuvers[" + std::to_string(i) + "]";
    if (!m.is_object() || !m.contains("kind") || !m["kind"].is_string())
      throw ParseError("field " + path + ".kind must be a string");
    const auto kind = maneuver_from_string(m["kind"].get<std::string>());
    if (!kind) throw ParseError("field " + path + ".kind has unknown value '" + m["kind"].get<std::string>() + "'");
    Maneuver x;
    x.kind = *kind;
    if (!m.contains("start") || !m.contains("end")) throw ParseError("field " + path + " needs start and end");
    x.start = detail::get_number(m, "start", 0.0, path);
    x.end = detail::get_number(m, "end", 0.0, path);
    x.speed = detail::get_number(m, "speed", x.speed, path);
    x.angle = detail::get_number(m, "angle", 0.0, path);
    s.maneuvers.push_back(x);
  }
  if (!j.contains("gnss") || !j["gnss"].is_array()) throw ParseError("field gnss must be an array");
  for (std::size_t i = 0; i < j["gnss"].size(); ++i) {
    const auto& r = j["gnss"][i];
    const std::string path = "gnss[" + std::to_string(i) + "]";
    if (!r.is_object() || !r.contains("regime") || !r["regime"].is_string())
      throw ParseError("field " + path + ".regime must be a string");
    const auto reg = regime_from_string(r["regime"].get<std::string>());
    if (!reg) throw ParseError("field " + path + ".regime has unknown value '" + r["regime"].get<std::string>() + "'");
    if (!r.contains("start") || !r.contains("end")) throw ParseError("field " + path + " needs start and end");
    s.regimes.push_back({*reg, detail::get_number(r, "start", 0.0, path), detail::get_number(r, "end", 0.0, path)});
  }
  if (j.contains("noise")) s.noise = noise_from_json(j["noise"]);
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Randomized scenarios for corpora

enum class GnssProfile { clean, mixed, poor };

inline std::optional<GnssProfile> profile_from_string(std::string_view s) {
  if (s == "clean") return GnssProfile::clean;
  if (s == "mixed") return GnssProfile::mixed;
  if (s == "poor") return GnssProfile::poor;
  return std::nullopt;
}

/// Random drive with whole-second maneuver and regime boundaries.
/// `mixed` alternates clean stretches with poor intervals of 5-15 s (about 40 %
/// poor); `poor` is about 85 % poor; `clean` has no poor intervals.
inline ScenarioSpec random_scenario(std::uint64_t seed, double duration, GnssProfile profile,
                                    const NoiseConfig& noise = {}) {
  CounterRng rng = CounterRng(seed).fork("scenario");
  ScenarioSpec s;
  s.name = "random-" + std::to_string(seed);
  s.seed = seed;
  s.duration = duration;
  s.noise = noise;
  const double speed0 = std::round(rng.uniform(3.0, 12.0));
  s.initial = VehicleState(0.0, 0.0, speed0, rng.uniform(0.0, kTwoPi));

  double t = 0.0;
  double speed = speed0;
  ManeuverKind last = ManeuverKind::straight;
  while (t < duration - 1e-9) {
    ManeuverKind kind;
    double len;
    if (last == ManeuverKind::stop && rng.bernoulli(0.5)) {
      kind = ManeuverKind::reverse;
      len = static_cast<double>(rng.uniform_int(3, 5));
    } else if (last == ManeuverKind::reverse) {
      kind = ManeuverKind::stop;
      len = static_cast<double>(rng.uniform_int(2, 4));
    } else {
      const double u = rng.uniform();
      if (u < 0.35) kind = ManeuverKind::straight;
      else if (u < 0.52) kind = ManeuverKind::left_turn;
      else if (u < 0.69) kind = ManeuverKind::right_turn;
      else if (u < 0.78) kind = ManeuverKind::u_turn;
      else if (u < 0.88) kind = ManeuverKind::roundabout;
      else kind = ManeuverKind::stop;
      len = static_cast<double>(rng.uniform_int(kind == ManeuverKind::roundabout ? 8 : 4, 12));
    }
    Maneuver m;
    m.kind = kind;
    m.start = t;
    m.end = std::min(duration, t + len);
    if (kind == ManeuverKind::straight) speed = std::round(rng.uniform(3.0, 15.0));
    else if (kind == ManeuverKind::stop) speed = 0.0;
    else if (kind == ManeuverKind::reverse) speed = std::round(rng.uniform(1.0, 3.0));
    else speed = std::round(rng.uniform(3.0, 9.0));
    m.speed = speed;
    s.maneuvers.push_back(m);
    last = kind;
    t = m.end;
  }

  t = 0.0;
  const double poor_share = profile == GnssProfile::clean ? 0.0 : profile == GnssProfile::mixed ? 0.4 : 0.85;
  bool poor_next = profile == GnssProfile::poor ? rng.bernoulli(0.7) : false;
  while (t < duration - 1e-9) {
    RegimeInterval r;
    r.start = t;
    if (profile == GnssProfile::clean) {
      r.regime = GnssRegime::clean;
      r.end = duration;
    } else if (poor_next) {
      const double u = rng.uniform();
      r.regime = u < 0.4 ? GnssRegime::degraded : u < 0.7 ? GnssRegime::multipath : GnssRegime::outage;
      r.end = t + static_cast<double>(rng.uniform_int(5, 15));
    } else {
      // clean stretch sized so the poor share lands near the profile's target
      const double mean_poor = 10.0;
      const double mean_clean = mean_poor * (1.0 - poor_share) / poor_share;
      r.regime = GnssRegime::clean;
      r.end = t + std::max(2.0, std::round(rng.uniform(0.5, 1.5) * mean_clean));
    }
    r.end = std::min(r.end, duration);
    // avoid a sliver at the end of the run
    if (duration - r.end < 2.0) r.end = duration;
    s.regimes.push_back(r);
    poor_next = !poor_next;
    t = r.end;
  }
  s.validate();
  return s;
}

}  // namespace lfuse::sim
