#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lfuse/sim/types.hpp"

namespace lfuse::sim {

inline constexpr int kRunFormatVersion = 1;

namespace detail {

inline void put_num(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

template <std::size_t N>
void put_arr(std::string& out, const std::array<double, N>& a) {
  out += '[';
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    put_num(out, a[i]);
  }
  out += ']';
}

inline void put_key(std::string& out, const char* key) {
  out += ",\"";
  out += key;
  out += "\":";
}

}  // namespace detail

/// JSON Lines: one header line, then one record per sensor frame in time order
/// (truth, imu, chassis, and gnss on every 20th frame). Numbers are printed with
/// 17 significant digits so reading back reproduces every double exactly.
inline std::string format_run(const Run& run) {
  using namespace detail;
  nlohmann::json regimes = nlohmann::json::array();
  for (const auto& r : run.regimes) regimes.push_back({{"regime", to_string(r.regime)}, {"start", r.start}, {"end", r.end}});
  std::string out;
  out.reserve(run.truth.size() * 600);
  out += R"({"format":"lfuse-run","version":)" + std::to_string(kRunFormatVersion);
  out += ",\"name\":" + nlohmann::json(run.name).dump();
  out += ",\"seed\":" + std::to_string(run.seed);
  put_key(out, "duration");
  put_num(out, run.duration);
  out += ",\"regimes\":[";
  for (std::size_t i = 0; i < run.regimes.size(); ++i) {
    const auto& r = run.regimes[i];
    if (i) out += ',';
    out += "{\"regime\":\"" + std::string(to_string(r.regime)) + "\"";
    put_key(out, "start");
    put_num(out, r.start);
    put_key(out, "end");
    put_num(out, r.end);
    out += '}';
  }
  out += "]}\n";

  std::size_t g = 0;
  for (std::size_t k = 0; k < run.truth.size(); ++k) {
    const auto& tf = run.truth[k];
    out += R"({"kind":"truth","t":)";
    put_num(out, tf.t);
    put_key(out, "state");
    put_arr(out, tf.state.to_array());
    put_key(out, "control");
    put_arr(out, std::array<double, 3>{tf.control.v, tf.control.a, tf.control.omega});
    out += ",\"valid\":[" + std::to_string(int(tf.validity.position)) + "," + std::to_string(int(tf.validity.velocity)) +
           "," + std::to_string(int(tf.validity.heading)) + "]}\n";
    if (k < run.imu.size()) {
      const auto& f = run.imu[k];
      out += R"({"kind":"imu","t":)";
      put_num(out, f.t);
      put_key(out, "accel");
      put_arr(out, f.accel);
      put_key(out, "gyro");
      put_arr(out, f.gyro);
      out += "}\n";
    }
    if (k < run.chassis.size()) {
      const auto& f = run.chassis[k];
      out += R"({"kind":"chassis","t":)";
      put_num(out, f.t);
      put_key(out, "speed");
      put_num(out, f.nominal_speed);
      put_key(out, "wheels");
      put_arr(out, f.wheel_speeds);
      put_key(out, "steering");
      put_num(out, f.steering_angle);
      out += std::string(",\"stationary\":") + (f.stationary ? "true" : "false");
      put_key(out, "fwd_accel");
      put_num(out, f.fwd_accel);
      put_key(out, "lat_accel");
      put_num(out, f.lat_accel);
      put_key(out, "heading_rate");
      put_num(out, f.heading_rate);
      out += "}\n";
    }
    while (g < run.gnss.size() && (k + 1 == run.truth.size() || run.gnss[g].t < run.truth[k + 1].t)) {
      const auto& z = run.gnss[g++];
      out += R"({"kind":"gnss","t":)";
      put_num(out, z.t);
      put_key(out, "pos");
      put_arr(out, std::array<double, 2>{z.x, z.y});
      put_key(out, "vel");
      put_num(out, z.vel);
      put_key(out, "heading");
      put_num(out, z.heading);
      out += ",\"sats\":" + std::to_string(z.num_sats);
      put_key(out, "var");
      put_arr(out, z.reported_var);
      put_key(out, "dop");
      put_num(out, z.dop);
      out += ",\"solution\":\"" + std::string(to_string(z.solution)) + "\"}\n";
    }
  }
  return out;
}

namespace detail {

struct LineReader {
  const nlohmann::json& j;
  std::size_t line;

  const nlohmann::json& at(const char* key) const {
    if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
    return j.at(key);
  }
  double num(const char* key) const {
    const auto& v = at(key);
    if (!v.is_number()) throw ParseError(std::string("field '") + key + "' must be a number", line);
    return v.get<double>();
  }
  template <std::size_t N>
  std::array<double, N> arr(const char* key) const {
    const auto& v = at(key);
    if (!v.is_array() || v.size() != N)
      throw ParseError(std::string("field '") + key + "' must be an array of " + std::to_string(N), line);
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) throw ParseError(std::string("field '") + key + "' must hold numbers", line);
      out[i] = v[i].get<double>();
    }
    return out;
  }
};

}  // namespace detail

/// Parses a run document. Malformed lines raise ParseError, decreasing
/// timestamps within one record kind raise MonotonicityError, and an unknown
/// format version raises VersionError; all carry the 1-based line number.
inline Run parse_run(std::istream& in) {
  Run run;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  double last_t[4] = {-1e300, -1e300, -1e300, -1e300};
  auto check_time = [&](int kind, double t) {
    if (!(t > last_t[kind])) throw MonotonicityError("timestamps not strictly increasing", line);
    last_t[kind] = t;
  };
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("record must be a JSON object", line);
    const detail::LineReader r{j, line};
    try {
      if (!header) {
        if (!j.contains("format") || j["format"] != "lfuse-run") throw ParseError("missing lfuse-run header", line);
        if (!j.contains("version") || !j["version"].is_number_integer())
          throw ParseError("header lacks an integer version", line);
        if (j["version"].get<int>() != kRunFormatVersion)
          throw VersionError("unsupported run format version " + j["version"].dump(), line);
        run.name = r.at("name").get<std::string>();
        run.seed = r.at("seed").get<std::uint64_t>();
        run.duration = r.num("duration");
        for (const auto& x : r.at("regimes")) {
          const auto reg = regime_from_string(x.at("regime").get<std::string>());
          if (!reg) throw ParseError("unknown regime " + x.at("regime").dump(), line);
          run.regimes.push_back({*reg, x.at("start").get<double>(), x.at("end").get<double>()});
        }
        header = true;
        continue;
      }
      const std::string kind = r.at("kind").get<std::string>();
      const double t = r.num("t");
      if (kind == "truth") {
        check_time(0, t);
        TruthFrame f;
        f.t = t;
        f.state = VehicleState::from_array(r.arr<4>("state"));
        const auto c = r.arr<3>("control");
        f.control = {c[0], c[1], c[2]};
        const auto v = r.arr<3>("valid");
        f.validity = {v[0] != 0.0, v[1] != 0.0, v[2] != 0.0};
        run.truth.push_back(f);
      } else if (kind == "imu") {
        check_time(1, t);
        run.imu.push_back({t, r.arr<3>("accel"), r.arr<3>("gyro")});
      } else if (kind == "chassis") {
        check_time(2, t);
        ChassisFrame f;
        f.t = t;
        f.nominal_speed = r.num("speed");
        f.wheel_speeds = r.arr<4>("wheels");
        f.steering_angle = r.num("steering");
        if (!r.at("stationary").is_boolean()) throw ParseError("field 'stationary' must be a boolean", line);
        f.stationary = r.at("stationary").get<bool>();
        f.fwd_accel = r.num("fwd_accel");
        f.lat_accel = r.num("lat_accel");
        f.heading_rate = r.num("heading_rate");
        run.chassis.push_back(f);
      } else if (kind == "gnss") {
        check_time(3, t);
        GnssFrame z;
        z.t = t;
        const auto p = r.arr<2>("pos");
        z.x = p[0];
        z.y = p[1];
        z.vel = r.num("vel");
        z.heading = r.num("heading");
        if (!r.at("sats").is_number_integer()) throw ParseError("field 'sats' must be an integer", line);
        z.num_sats = r.at("sats").get<int>();
        z.reported_var = r.arr<4>("var");
        z.dop = r.num("dop");
        const auto sol = solution_from_string(r.at("solution").get<std::string>());
        if (!sol) throw ParseError("unknown solution type " + r.at("solution").dump(), line);
        z.solution = *sol;
        run.gnss.push_back(z);
      } else {
        throw ParseError("unknown record kind '" + kind + "'", line);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field type: ") + e.what(), line);
    } catch (const NonFiniteError& e) {
      throw ParseError(e.what(), line);
    }
  }
  if (!header) throw ParseError("empty run file", line);
  return run;
}

inline void write_run(const std::string& path, const Run& run) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << format_run(run);
  if (!f) throw Error("write to " + path + " failed");
}

inline Run read_run(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return parse_run(f);
}

}  // namespace lfuse::sim
