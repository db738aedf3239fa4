#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "lfuse/error.hpp"

namespace lfuse {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw NonFiniteError(std::string("non-finite ") + what);
}

/// Maps theta into [0, 2pi).
inline double wrap_angle(double theta) {
  require_finite(theta, "angle");
  double r = std::fmod(theta, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a tiny negative number can round up to exactly 2pi
  if (r >= kTwoPi) r = 0.0;
  return r;
}

/// Signed minimal rotation from b to a, in (-pi, pi]. An exact half turn maps to +pi.
inline double angle_diff(double a, double b) {
  require_finite(a, "angle");
  require_finite(b, "angle");
  double d = std::fmod(a - b, kTwoPi);
  if (d > std::numbers::pi) d -= kTwoPi;
  if (d <= -std::numbers::pi) d += kTwoPi;
  return d;
}

/// Planar vehicle state [x, y, v, psi]. psi is kept wrapped to [0, 2pi).
class VehicleState {
 public:
  VehicleState() = default;
  VehicleState(double x, double y, double v, double psi) : x_(x), y_(y), v_(v), psi_(0.0) {
    require_finite(x, "state x");
    require_finite(y, "state y");
    require_finite(v, "state v");
    psi_ = wrap_angle(psi);
  }

  static VehicleState from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  std::array<double, 4> to_array() const { return {x_, y_, v_, psi_}; }

  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }
  double v() const noexcept { return v_; }
  double psi() const noexcept { return psi_; }

  friend bool operator==(const VehicleState&, const VehicleState&) = default;

 private:
  double x_ = 0.0;
  double y_ = 0.0;
  double v_ = 0.0;
  double psi_ = 0.0;
};

/// Control vector u = [v, a, omega]. Also used for the learned correction du.
struct ControlInput {
  double v = 0.0;
  double a = 0.0;
  double omega = 0.0;

  void validate() const {
    require_finite(v, "control v");
    require_finite(a, "control a");
    require_finite(omega, "control omega");
  }
  friend bool operator==(const ControlInput&, const ControlInput&) = default;
};

using ControlCorrection = ControlInput;

/// Difference of two states; dpsi is in (-pi, pi].
struct StateResidual {
  double dx = 0.0;
  double dy = 0.0;
  double dv = 0.0;
  double dpsi = 0.0;

  std::array<double, 4> to_array() const { return {dx, dy, dv, dpsi}; }
  friend bool operator==(const StateResidual&, const StateResidual&) = default;
};

inline StateResidual state_residual(const VehicleState& a, const VehicleState& b) {
  return {a.x() - b.x(), a.y() - b.y(), a.v() - b.v(), angle_diff(a.psi(), b.psi())};
}

}  // namespace lfuse
