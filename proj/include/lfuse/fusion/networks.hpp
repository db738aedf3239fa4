#pragma once

#include <array>
#include <vector>

#include "lfuse/fusion/model.hpp"
#include "lfuse/fusion/ops.hpp"

namespace lfuse::fusion {

using nn::Mode;
using nn::Tape;
using nn::Tensor;
using nn::Var;

template <typename T>
Tensor<T> to_row(const double* v, int n) {
  Tensor<T> t(1, n);
  for (int i = 0; i < n; ++i) t[i] = static_cast<T>(v[i]);
  return t;
}

/// Dropout settings for one forward pass. `rng` may be null in eval mode.
struct ForwardContext {
  Mode mode = Mode::eval;
  double dropout = 0.0;
  CounterRng* rng = nullptr;
};

template <typename T>
struct MotionNetOutput {
  Var<T> du;       // B x 3, already scaled
  Var<T> feature;  // B x feature
};

/// MotionNet over a batch of frames (one row per frame of `x`, B x 16).
template <typename T>
MotionNetOutput<T> motion_net_forward(Tape<T>& tape, Model<T>& m, Var<T> x, const ForwardContext& ctx) {
  if (x.cols() != kMotionInputs) throw ShapeMismatch("motion_net_forward: expected 16 input columns");
  auto [out, feat] = m.motion.forward(tape, m.params, x, ctx.mode, ctx.dropout, ctx.rng, m.cfg.motion_tap);
  Tensor<T> scale(out.rows(), 3);
  for (int r = 0; r < scale.rows; ++r)
    for (int j = 0; j < 3; ++j) scale(r, j) = static_cast<T>(m.cfg.du_scale[j]);
  return {nn::mul_const(out, scale), feat};
}

/// Single-frame convenience form.
template <typename T>
MotionNetOutput<T> motion_net_forward(Tape<T>& tape, Model<T>& m, const sim::ImuFrame& imu,
                                      const sim::ChassisFrame& chassis, const ForwardContext& ctx = {}) {
  const auto in = motion_input(imu, chassis);
  return motion_net_forward(tape, m, tape.constant(to_row<T>(in.data(), kMotionInputs)), ctx);
}

/// Recurrent state of MeasurementNet. It advances once per GNSS update and
/// refuses to run twice for the same instant.
template <typename T>
struct MeasurementState {
  Var<T> h;
  Var<T> c;
  double last_t = -1e300;

  static MeasurementState zero(Tape<T>& tape, int width) {
    return {tape.constant(Tensor<T>(1, width)), tape.constant(Tensor<T>(1, width)), -1e300};
  }
};

template <typename T>
Var<T> measurement_net_forward(Tape<T>& tape, Model<T>& m, const sim::ImuFrame& imu, const sim::ChassisFrame& chassis,
                               const sim::GnssFrame& z, MeasurementState<T>& st, const ForwardContext& ctx = {}) {
  if (!z.usable()) throw InvalidArgument("measurement_net_forward: GNSS frame has no solution");
  if (!(z.t > st.last_t)) throw InvalidArgument("measurement_net_forward: called twice without a new GNSS frame");
  const auto in = measurement_input(imu, chassis, z);
  auto [x, unused] = m.measurement.forward(tape, m.params, tape.constant(to_row<T>(in.data(), kMeasurementInputs)),
                                           ctx.mode, ctx.dropout, ctx.rng);
  auto [h, c] = m.measurement_lstm.step(tape, m.params, x, st.h, st.c);
  st.h = h;
  st.c = c;
  st.last_t = z.t;
  return h;
}

/// Validity logits (position, velocity, heading).
template <typename T>
Var<T> classify_validity(Tape<T>& tape, Model<T>& m, Var<T> feature, const ForwardContext& ctx = {}) {
  return m.classifier.forward(tape, m.params, feature, ctx.mode, ctx.dropout, ctx.rng).first;
}

template <typename T>
Var<T> aux_loss(Var<T> logits, const sim::Validity& labels) {
  const auto l = labels.as_labels();
  return nn::binary_cross_entropy(logits, std::vector<double>(l.begin(), l.end()));
}

template <typename T>
struct FusionState {
  Var<T> h;
  Var<T> c;

  static FusionState zero(Tape<T>& tape, int width) {
    return {tape.constant(Tensor<T>(1, width)), tape.constant(Tensor<T>(1, width))};
  }
};

/// FusionNet on [R | window (oldest first) | r_norm]. Returns the 1 x 4 gate logits o.
template <typename T>
Var<T> fusion_net_forward(Tape<T>& tape, Model<T>& m, Var<T> R, Var<T> window, Var<T> r_norm, FusionState<T>& st,
                          const ForwardContext& ctx = {}) {
  if (window.cols() != m.cfg.window * m.cfg.feature)
    throw ShapeMismatch("fusion_net_forward: window must hold " + std::to_string(m.cfg.window) + " features");
  if (R.cols() != m.cfg.feature || r_norm.cols() != 4) throw ShapeMismatch("fusion_net_forward: bad input widths");
  const Var<T> in = nn::concat_cols<T>({R, window, r_norm});
  auto [e, unused] = m.encoder.forward(tape, m.params, in, ctx.mode, ctx.dropout, ctx.rng);
  auto [h, c] = m.fusion_lstm.step(tape, m.params, e, st.h, st.c);
  st.h = h;
  st.c = c;
  return m.decoder.forward(tape, m.params, h, ctx.mode, ctx.dropout, ctx.rng).first;
}

}  // namespace lfuse::fusion
