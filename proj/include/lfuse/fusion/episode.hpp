#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "lfuse/fusion/networks.hpp"
#include "lfuse/sim/segment.hpp"

namespace lfuse::fusion {

struct LossWeights {
  std::array<double, 4> alpha{1e3, 1e3, 1e3, 1e5};
  std::array<double, 4> beta{1.0, 1.0, 1.0, 10.0};
  double huber_delta = 1.0;
};

/// One row per 100 Hz frame. Update fields are meaningful when `updated`.
struct TraceFrame {
  double t = 0.0;
  VehicleState truth;
  VehicleState pred;
  bool updated = false;
  VehicleState upd;
  std::array<double, 4> w{};
  std::array<double, 4> r{};
  std::array<double, 4> r_norm{};
  std::array<double, 3> logits{};
  sim::Validity labels;
  sim::GnssRegime regime = sim::GnssRegime::clean;
  double d = 0.0;
  double e = 0.0;
  double f = 0.0;

  /// Best estimate at this frame: the update if one happened, else the prediction.
  const VehicleState& estimate() const { return updated ? upd : pred; }
};

struct EpisodeTrace {
  std::string segment_id;
  std::string method = "fused";
  int stride = 1;
  bool has_losses = false;
  int updates = 0;
  int gnss_consumed = 0;
  int dropped_gnss = 0;
  std::vector<TraceFrame> frames;
};

struct EpisodeOptions {
  Mode mode = Mode::eval;
  int stride = 1;
  std::uint64_t seed = 0;  // dropout stream
  bool compute_losses = true;
  LossWeights loss;
  InnovationConfig innovation;

  void validate() const {
    if (stride < 1) throw InvalidArgument("episode stride must be >= 1");
    innovation.validate();
  }
};

/// Drives the asynchronous predict/update loop of one segment on a tape.
///
/// Frames are processed in cycles: MotionNet runs batched over the frames up to
/// the next retained GNSS epoch, the motion model is stepped frame by frame,
/// and a usable GNSS frame at the cycle end triggers the update. The chain
/// continues from the updated state. States on the tape are relative to the
/// segment's initial position.
template <typename T>
class EpisodeRunner {
 public:
  EpisodeRunner(const sim::Segment& seg, Model<T>& model, Tape<T>& tape, const EpisodeOptions& opt)
      : seg_(seg), model_(model), tape_(tape), opt_(opt), rng_(CounterRng(opt.seed).fork("dropout")) {
    opt_.validate();
    if (seg.truth.size() < 2) throw InvalidArgument("run_episode: segment " + seg.id + " has no frames to predict");
    if (seg.imu.size() != seg.truth.size() || seg.chassis.size() != seg.truth.size())
      throw InvalidArgument("run_episode: segment " + seg.id + " streams are not aligned");
    ox_ = seg.truth[0].state.x();
    oy_ = seg.truth[0].state.y();
    ctx_ = {opt_.mode, opt_.mode == Mode::train ? model.cfg.dropout : 0.0, &rng_};

    const long K = seg.frames() - 1;
    trace_.segment_id = seg.id;
    trace_.stride = opt_.stride;
    trace_.has_losses = opt_.compute_losses;
    trace_.frames.resize(seg.truth.size());
    for (long k = 0; k <= K; ++k) {
      auto& f = trace_.frames[k];
      f.t = seg.truth[k].t;
      f.truth = seg.truth[k].state;
      f.regime = seg.regime(f.t);
    }
    trace_.frames[0].pred = seg.truth[0].state;

    // pair GNSS frames with the latest 100 Hz frame; keep every stride-th epoch
    gnss_at_.assign(seg.truth.size(), -1);
    int ordinal = 0;
    for (std::size_t g = 0; g < seg.gnss.size(); ++g) {
      const auto& z = seg.gnss[g];
      const long k = static_cast<long>(std::floor((z.t - seg.t0) * sim::kImuRateHz + 1e-6));
      if (k < 0 || k > K || z.t - seg.truth[k].t > kGnssStaleness) {
        ++trace_.dropped_gnss;
        continue;
      }
      if (ordinal++ % opt_.stride == 0 && k > 0) gnss_at_[k] = static_cast<int>(g);
    }
    cycle_ends_.clear();
    for (long k = 1; k <= K; ++k)
      if (gnss_at_[k] >= 0 || k == K) cycle_ends_.push_back(k);

    state_ = tape.constant(ops::state_row<T>(local(seg.truth[0].state)));
    meas_ = MeasurementState<T>::zero(tape, model.cfg.feature);
    fusion_ = FusionState<T>::zero(tape, model.cfg.feature);
    features_.assign(seg.truth.size(), {-1, -1});
  }

  std::size_t cycles() const noexcept { return cycle_ends_.size(); }
  bool done() const noexcept { return next_cycle_ >= cycle_ends_.size(); }

  /// Predictions up to the next cycle end, then the update there if GNSS is usable.
  void step_cycle() {
    if (done()) throw Error("EpisodeRunner: no cycles left");
    const long a = next_frame_;
    const long b = cycle_ends_[next_cycle_++];
    predict_range(a, b);
    const int g = gnss_at_[b];
    if (g >= 0) {
      const auto& z = seg_.gnss[g];
      if (z.usable()) update(b, z);
    }
    next_frame_ = b + 1;
  }

  EpisodeTrace& trace() { return trace_; }

  /// Sum of all recorded loss terms (d, then e and f in frame order).
  Var<T> loss() {
    if (!opt_.compute_losses) throw Error("run_episode: losses were not recorded");
    if (terms_.empty()) return tape_.constant(Tensor<T>(1, 1));
    return nn::add_n(terms_, tape_);
  }

 private:
  VehicleState local(const VehicleState& s) const { return {s.x() - ox_, s.y() - oy_, s.v(), s.psi()}; }
  VehicleState global(const Tensor<T>& row) const {
    return {static_cast<double>(row[0]) + ox_, static_cast<double>(row[1]) + oy_, static_cast<double>(row[2]),
            static_cast<double>(row[3])};
  }

  void predict_range(long a, long b) {
    const int n = static_cast<int>(b - a + 1);
    Tensor<T> x(n, kMotionInputs);
    for (int i = 0; i < n; ++i) {
      const auto in = motion_input(seg_.imu[a + i], seg_.chassis[a + i]);
      for (int j = 0; j < kMotionInputs; ++j) x(i, j) = static_cast<T>(in[j]);
    }
    const auto mo = motion_net_forward(tape_, model_, tape_.constant(std::move(x)), ctx_);
    for (long k = a; k <= b; ++k) {
      const int i = static_cast<int>(k - a);
      features_[k] = {mo.feature.id, i};
      const Var<T> du = nn::row(mo.du, i);
      const ControlInput u = assemble_control(seg_.imu[k], seg_.chassis[k]);
      const double dt = seg_.truth[k].t - seg_.truth[k - 1].t;
      auto& tf = trace_.frames[k];
      if (opt_.compute_losses) {
        const auto gt = state_residual(seg_.truth[k].state, seg_.truth[k - 1].state);
        const Var<T> d = ops::step_loss(state_, du, u, dt, gt, opt_.loss.alpha, opt_.loss.huber_delta);
        terms_.push_back(d);
        tf.d = static_cast<double>(d.scalar());
      }
      state_ = ops::predict(state_, du, u, dt);
      tf.pred = global(state_.value());
    }
  }

  Var<T> window(long k) {
    const int m = model_.cfg.window;
    const int width = model_.cfg.feature;
    std::vector<Var<T>> parts;
    long j = k - m + 1;
    if (j < 1) {
      parts.push_back(tape_.constant(Tensor<T>(1, static_cast<int>(1 - j) * width)));
      j = 1;
    }
    while (j <= k) {
      const auto [node, row0] = features_[j];
      long run = 1;
      while (j + run <= k && features_[j + run].first == node) ++run;
      parts.push_back(nn::rows_flat(Var<T>{&tape_, node}, row0, static_cast<int>(run)));
      j += run;
    }
    return parts.size() == 1 ? parts.front() : nn::concat_cols<T>(parts);
  }

  void update(long k, const sim::GnssFrame& z) {
    auto& tf = trace_.frames[k];
    const Var<T> R = measurement_net_forward(tape_, model_, seg_.imu[k], seg_.chassis[k], z, meas_, ctx_);
    const Var<T> logits = classify_validity(tape_, model_, R, ctx_);
    tf.labels = seg_.truth[k].validity;
    for (int i = 0; i < 3; ++i) tf.logits[i] = static_cast<double>(logits.value()[i]);

    const auto zs = measurement_state(z, static_cast<double>(state_.value()[2]));
    const Var<T> r = ops::residual(state_, {zs[0] - ox_, zs[1] - oy_, zs[2], zs[3]}, -1);
    Tensor<T> inv_c(1, 4);
    for (int i = 0; i < 4; ++i) inv_c[i] = static_cast<T>(1.0 / opt_.innovation.c[i]);
    const Var<T> rn = nn::tanh(nn::mul_const(r, inv_c));
    const Var<T> o = fusion_net_forward(tape_, model_, R, window(k), rn, fusion_, ctx_);
    const Var<T> w = nn::sigmoid(o);
    const Var<T> upd = ops::gated_update(state_, w, r);

    for (int i = 0; i < 4; ++i) {
      tf.w[i] = static_cast<double>(w.value()[i]);
      tf.r[i] = static_cast<double>(r.value()[i]);
      tf.r_norm[i] = static_cast<double>(rn.value()[i]);
    }
    tf.updated = true;
    tf.upd = global(upd.value());
    if (opt_.compute_losses) {
      const Var<T> e = aux_loss(logits, tf.labels);
      const auto gt = local(seg_.truth[k].state).to_array();
      const Var<T> f = nn::weighted_huber(ops::residual(upd, gt, +1),
                                          std::vector<double>(opt_.loss.beta.begin(), opt_.loss.beta.end()),
                                          opt_.loss.huber_delta);
      terms_.push_back(e);
      terms_.push_back(f);
      tf.e = static_cast<double>(e.scalar());
      tf.f = static_cast<double>(f.scalar());
    }
    ++trace_.updates;
    ++trace_.gnss_consumed;
    state_ = upd;
  }

  const sim::Segment& seg_;
  Model<T>& model_;
  Tape<T>& tape_;
  EpisodeOptions opt_;
  CounterRng rng_;
  ForwardContext ctx_;
  double ox_ = 0.0, oy_ = 0.0;
  EpisodeTrace trace_;
  std::vector<int> gnss_at_;
  std::vector<long> cycle_ends_;
  std::size_t next_cycle_ = 0;
  long next_frame_ = 1;
  Var<T> state_;
  MeasurementState<T> meas_;
  FusionState<T> fusion_;
  std::vector<std::pair<int, int>> features_;
  std::vector<Var<T>> terms_;
};

template <typename T>
struct EpisodeResult {
  EpisodeTrace trace;
  Var<T> loss;  // valid when losses were computed
};

/// Runs the learned filter over a whole segment. In train mode the returned
/// loss is the segment's total loss on `tape`, ready for backward().
template <typename T>
EpisodeResult<T> run_episode(const sim::Segment& seg, Model<T>& model, Tape<T>& tape, const EpisodeOptions& opt) {
  EpisodeRunner<T> runner(seg, model, tape, opt);
  while (!runner.done()) runner.step_cycle();
  EpisodeResult<T> out;
  if (opt.compute_losses) out.loss = runner.loss();
  out.trace = std::move(runner.trace());
  return out;
}

/// Inference-only convenience wrapper.
template <typename T>
EpisodeTrace run_episode(const sim::Segment& seg, Model<T>& model, int stride = 1, bool compute_losses = true) {
  Tape<T> tape(false);
  EpisodeOptions opt;
  opt.stride = stride;
  opt.compute_losses = compute_losses;
  return run_episode(seg, model, tape, opt).trace;
}

}  // namespace lfuse::fusion
