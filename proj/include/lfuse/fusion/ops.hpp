#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "lfuse/motion.hpp"
#include "lfuse/nn/ops.hpp"
#include "lfuse/sim/types.hpp"
#include "lfuse/fusion/features.hpp"

namespace lfuse::fusion {

/// Per-channel innovation scale c (x, y, v, psi).
struct InnovationConfig {
  std::array<double, 4> c{5.0, 5.0, 2.0, 0.5};

  void validate() const {
    for (double v : c)
      if (!(v > 0.0)) throw InvalidArgument("InnovationConfig.c components must be > 0");
  }
};

struct Innovation {
  StateResidual r;
  std::array<double, 4> r_norm{};
};

/// r = z - pred (heading through angle_diff) and its squashed form tanh(r / c).
/// Callers skip frames without a GNSS solution.
inline Innovation innovation(const sim::GnssFrame& z, const VehicleState& pred, const InnovationConfig& cfg = {}) {
  cfg.validate();
  const auto m = measurement_state(z, pred.v());
  Innovation out;
  out.r = {m[0] - pred.x(), m[1] - pred.y(), m[2] - pred.v(), angle_diff(m[3], pred.psi())};
  const auto r = out.r.to_array();
  for (int i = 0; i < 4; ++i) out.r_norm[i] = std::tanh(r[i] / cfg.c[i]);
  return out;
}

struct FusedUpdate {
  VehicleState upd;
  std::array<double, 4> w{};
};

/// w = sigmoid(o), upd = pred + w * r per channel.
inline FusedUpdate fuse_update(const VehicleState& pred, const StateResidual& r, const std::array<double, 4>& o) {
  FusedUpdate out;
  for (int i = 0; i < 4; ++i) {
    require_finite(o[i], "fusion output");
    out.w[i] = nn::detail::stable_sigmoid(o[i]);
  }
  out.upd = VehicleState(pred.x() + out.w[0] * r.dx, pred.y() + out.w[1] * r.dy, pred.v() + out.w[2] * r.dv,
                         pred.psi() + out.w[3] * r.dpsi);
  return out;
}

inline double absolute_pose_loss(const VehicleState& upd, const VehicleState& gt,
                                 const std::array<double, 4>& beta = {1.0, 1.0, 1.0, 10.0}, double delta = 1.0) {
  return weighted_huber(state_residual(upd, gt), beta, delta);
}

// ---------------------------------------------------------------------------
// Tape nodes. States are 1 x 4 rows [x, y, v, psi].

namespace ops {

using nn::Tape;
using nn::Tensor;
using nn::Var;

/// One motion-model step from `prev` under u + du (du: 1 x 3).
template <typename T>
Var<T> predict(Var<T> prev, Var<T> du, const ControlInput& u, double dt) {
  if (prev.cols() != 4 || du.cols() != 3) throw ShapeMismatch("predict: expected 1x4 state and 1x3 correction");
  if (!(dt > 0.0)) throw InvalidArgument("predict: dt must be > 0");
  const int pi = prev.id, di = du.id;
  return prev.tape->make(
      {pi, di},
      [pi, di, u, dt](Tape<T>& t, Tensor<T>& out) {
        const auto& p = t.value(pi);
        const auto& d = t.value(di);
        const double psi = static_cast<double>(p[3]);
        const double v = u.v + static_cast<double>(d[0]);
        const double a = u.a + static_cast<double>(d[1]);
        const double w = u.omega + static_cast<double>(d[2]);
        out = Tensor<T>(1, 4);
        out[0] = static_cast<T>(static_cast<double>(p[0]) + std::cos(psi) * v * dt);
        out[1] = static_cast<T>(static_cast<double>(p[1]) + std::sin(psi) * v * dt);
        out[2] = static_cast<T>(static_cast<double>(p[2]) + a * dt);
        out[3] = static_cast<T>(wrap_angle(psi + w * dt));
      },
      [pi, di, u, dt](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const double psi = static_cast<double>(t.value(pi)[3]);
        const double v = u.v + static_cast<double>(t.value(di)[0]);
        const double c = std::cos(psi), s = std::sin(psi);
        const double g0 = g[0], g1 = g[1], g2 = g[2], g3 = g[3];
        if (t.requires_grad(pi)) {
          auto& gp = t.grad(pi);
          gp[0] += g[0];
          gp[1] += g[1];
          gp[2] += g[2];
          gp[3] += static_cast<T>(g3 + (-s * g0 + c * g1) * v * dt);
        }
        if (t.requires_grad(di)) {
          auto& gd = t.grad(di);
          gd[0] += static_cast<T>((c * g0 + s * g1) * dt);
          gd[1] += static_cast<T>(g2 * dt);
          gd[2] += static_cast<T>(g3 * dt);
        }
      });
}

/// Relative-state loss of one prediction step. The predicted relative change
/// is evaluated from the step itself (exactly A * u_hat * dt), so it does not
/// lose precision to the magnitude of the absolute coordinates.
template <typename T>
Var<T> step_loss(Var<T> prev, Var<T> du, const ControlInput& u, double dt, const StateResidual& gt_change,
                 const std::array<double, 4>& alpha, double delta) {
  const int pi = prev.id, di = du.id;
  const auto gt = gt_change.to_array();
  auto errors = [u, dt, gt](double psi, double dv, double da, double dw) {
    const double v = u.v + dv;
    return std::array<double, 4>{std::cos(psi) * v * dt - gt[0], std::sin(psi) * v * dt - gt[1],
                                 (u.a + da) * dt - gt[2], (u.omega + dw) * dt - gt[3]};
  };
  return prev.tape->make(
      {pi, di},
      [pi, di, errors, alpha, delta](Tape<T>& t, Tensor<T>& out) {
        const auto& d = t.value(di);
        const auto e = errors(static_cast<double>(t.value(pi)[3]), d[0], d[1], d[2]);
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += alpha[i] * huber(e[i], delta);
        out = Tensor<T>(1, 1, static_cast<T>(s));
      },
      [pi, di, errors, alpha, delta, u, dt](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const double psi = static_cast<double>(t.value(pi)[3]);
        const auto& d = t.value(di);
        const auto e = errors(psi, d[0], d[1], d[2]);
        std::array<double, 4> ge{};
        for (int i = 0; i < 4; ++i) ge[i] = static_cast<double>(g[0]) * alpha[i] * huber_grad(e[i], delta);
        const double c = std::cos(psi), s = std::sin(psi);
        const double v = u.v + static_cast<double>(d[0]);
        if (t.requires_grad(pi)) t.grad(pi)[3] += static_cast<T>((-s * ge[0] + c * ge[1]) * v * dt);
        if (t.requires_grad(di)) {
          auto& gd = t.grad(di);
          gd[0] += static_cast<T>((c * ge[0] + s * ge[1]) * dt);
          gd[1] += static_cast<T>(ge[2] * dt);
          gd[2] += static_cast<T>(ge[3] * dt);
        }
      });
}

/// sign * (a - ref) with the heading channel through angle_diff; a is 1 x 4.
template <typename T>
Var<T> residual(Var<T> a, const std::array<double, 4>& ref, int sign) {
  if (a.cols() != 4 || a.rows() != 1) throw ShapeMismatch("residual: expected a 1x4 state");
  const int ai = a.id;
  const double sg = sign >= 0 ? 1.0 : -1.0;
  return a.tape->make(
      {ai},
      [ai, ref, sg](Tape<T>& t, Tensor<T>& out) {
        const auto& A = t.value(ai);
        out = Tensor<T>(1, 4);
        for (int i = 0; i < 3; ++i) out[i] = static_cast<T>(sg * (static_cast<double>(A[i]) - ref[i]));
        const double psi = static_cast<double>(A[3]);
        out[3] = static_cast<T>(sg > 0 ? angle_diff(psi, ref[3]) : angle_diff(ref[3], psi));
      },
      [ai, sg](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        auto& ga = t.grad(ai);
        for (int i = 0; i < 4; ++i) ga[i] += static_cast<T>(sg * static_cast<double>(g[i]));
      });
}

/// pred + w * r with the heading wrapped.
template <typename T>
Var<T> gated_update(Var<T> pred, Var<T> w, Var<T> r) {
  const int pi = pred.id, wi = w.id, ri = r.id;
  return pred.tape->make(
      {pi, wi, ri},
      [pi, wi, ri](Tape<T>& t, Tensor<T>& out) {
        const auto& P = t.value(pi);
        const auto& W = t.value(wi);
        const auto& R = t.value(ri);
        out = Tensor<T>(1, 4);
        for (int i = 0; i < 4; ++i)
          out[i] = static_cast<T>(static_cast<double>(P[i]) + static_cast<double>(W[i]) * static_cast<double>(R[i]));
        out[3] = static_cast<T>(wrap_angle(static_cast<double>(P[3]) +
                                           static_cast<double>(W[3]) * static_cast<double>(R[3])));
      },
      [pi, wi, ri](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& W = t.value(wi);
        const auto& R = t.value(ri);
        if (t.requires_grad(pi)) {
          auto& gp = t.grad(pi);
          for (int i = 0; i < 4; ++i) gp[i] += g[i];
        }
        if (t.requires_grad(wi)) {
          auto& gw = t.grad(wi);
          for (int i = 0; i < 4; ++i) gw[i] += g[i] * R[i];
        }
        if (t.requires_grad(ri)) {
          auto& gr = t.grad(ri);
          for (int i = 0; i < 4; ++i) gr[i] += g[i] * W[i];
        }
      });
}

template <typename T>
Tensor<T> state_row(const VehicleState& s) {
  const auto a = s.to_array();
  return Tensor<T>(1, 4, std::vector<T>{static_cast<T>(a[0]), static_cast<T>(a[1]), static_cast<T>(a[2]), static_cast<T>(a[3])});
}

}  // namespace ops

}  // namespace lfuse::fusion
