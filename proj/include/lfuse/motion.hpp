#pragma once

#include <array>
#include <cmath>

#include "lfuse/core.hpp"

namespace lfuse {

struct MotionStepConfig {
  double dt = 0.01;
  double huber_delta = 1.0;
  /// Relative-state loss weights for (x, y, v, psi).
  std::array<double, 4> alpha{1e3, 1e3, 1e3, 1e5};

  void validate() const {
    if (!(dt > 0.0)) throw InvalidArgument("MotionStepConfig.dt must be > 0");
    if (!(huber_delta > 0.0)) throw InvalidArgument("MotionStepConfig.huber_delta must be > 0");
    for (double a : alpha)
      if (!(a >= 0.0)) throw InvalidArgument("MotionStepConfig.alpha must be >= 0");
  }
};

inline ControlInput apply_correction(const ControlInput& u, const ControlCorrection& du) {
  ControlInput out{u.v + du.v, u.a + du.a, u.omega + du.omega};
  out.validate();
  return out;
}

/// One explicit-Euler step of the planar kinematic model. Position advances
/// along the previous heading with the control speed; v and psi integrate a, omega.
inline VehicleState predict_state(const VehicleState& prev, const ControlInput& u_hat, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("predict_state: dt must be > 0");
  u_hat.validate();
  const double c = std::cos(prev.psi());
  const double s = std::sin(prev.psi());
  return {prev.x() + c * u_hat.v * dt, prev.y() + s * u_hat.v * dt, prev.v() + u_hat.a * dt,
          prev.psi() + u_hat.omega * dt};
}

inline double huber(double x, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("huber: delta must be > 0");
  const double ax = std::abs(x);
  return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
}

/// Derivative of huber with respect to x.
inline double huber_grad(double x, double delta) {
  if (std::abs(x) <= delta) return x;
  return x > 0.0 ? delta : -delta;
}

/// Weighted Huber of the elementwise difference between two residual vectors.
inline double weighted_huber(const StateResidual& diff, const std::array<double, 4>& weights, double delta) {
  const auto d = diff.to_array();
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += weights[i] * huber(d[i], delta);
  return sum;
}

inline double relative_state_loss(const VehicleState& pred_k, const VehicleState& pred_km1, const VehicleState& gt_k,
                                  const VehicleState& gt_km1, const MotionStepConfig& cfg) {
  const auto p = state_residual(pred_k, pred_km1);
  const auto g = state_residual(gt_k, gt_km1);
  // heading term compares the two signed rotations directly
  const StateResidual diff{p.dx - g.dx, p.dy - g.dy, p.dv - g.dv, p.dpsi - g.dpsi};
  return weighted_huber(diff, cfg.alpha, cfg.huber_delta);
}

}  // namespace lfuse
