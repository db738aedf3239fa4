#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lfuse/nn/ops.hpp"

namespace lfuse::nn {

enum class Mode { train, eval };

/// Indices of one affine layer's weight (out x in) and bias (1 x out).
struct DenseLayer {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;

  template <typename T>
  static DenseLayer create(ParamSet<T>& ps, const std::string& name, int in, int out) {
    DenseLayer d;
    d.in = in;
    d.out = out;
    d.weight = ps.add(name + ".weight", out, in);
    d.bias = ps.add(name + ".bias", 1, out);
    return d;
  }

  /// Weights and bias uniform in +-1/sqrt(fan_in).
  template <typename T>
  void init(ParamSet<T>& ps, CounterRng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    ps.init_uniform(weight, bound, rng);
    ps.init_uniform(bias, bound, rng);
  }

  template <typename T>
  Var<T> forward(Tape<T>& tape, ParamSet<T>& ps, Var<T> x) const {
    return dense(x, tape.param(ps, weight), tape.param(ps, bias));
  }
};

/// Stack of dense layers with tanh between them and dropout after every
/// hidden activation. The last layer is linear unless `activate_last`.
struct Mlp {
  std::vector<DenseLayer> layers;
  bool activate_last = false;

  /// `dims` = {in, h1, ..., out}; one layer per consecutive pair.
  template <typename T>
  static Mlp create(ParamSet<T>& ps, const std::string& name, const std::vector<int>& dims, bool activate_last = false) {
    if (dims.size() < 2) throw InvalidArgument("Mlp: need at least input and output width");
    Mlp m;
    m.activate_last = activate_last;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      m.layers.push_back(DenseLayer::create(ps, name + "." + std::to_string(i), dims[i], dims[i + 1]));
    return m;
  }

  template <typename T>
  void init(ParamSet<T>& ps, CounterRng& rng) const {
    for (const auto& l : layers) l.init(ps, rng);
  }

  int in() const { return layers.front().in; }
  int out() const { return layers.back().out; }

  /// Returns the final output and, when `tap >= 0`, the post-activation
  /// output of hidden layer `tap` (0-based, taken before dropout).
  template <typename T>
  std::pair<Var<T>, Var<T>> forward(Tape<T>& tape, ParamSet<T>& ps, Var<T> x, Mode mode, double dropout_rate,
                                    CounterRng* rng, int tap = -1) const {
    if (layers.empty()) throw InvalidArgument("Mlp: empty layer stack");
    if (tap >= static_cast<int>(layers.size()) || (tap >= 0 && tap == static_cast<int>(layers.size()) - 1 && !activate_last))
      throw InvalidArgument("Mlp: tapped layer index " + std::to_string(tap) + " out of range");
    Var<T> h = x;
    Var<T> tapped;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(tape, ps, h);
      const bool last = i + 1 == layers.size();
      if (!last || activate_last) {
        h = nn::tanh(h);
        if (static_cast<int>(i) == tap) tapped = h;
        if (mode == Mode::train && dropout_rate > 0.0) {
          if (rng == nullptr) throw InvalidArgument("Mlp: train-mode dropout needs an RNG");
          h = dropout(h, 1.0 - dropout_rate, *rng);
        }
      }
    }
    return {h, tapped};
  }
};

/// Single LSTM cell. Packed weights (4H x (in + H)) over [x, h]; gate order i, f, g, o.
struct Lstm {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int hidden = 0;

  template <typename T>
  static Lstm create(ParamSet<T>& ps, const std::string& name, int in, int hidden) {
    Lstm l;
    l.in = in;
    l.hidden = hidden;
    l.weight = ps.add(name + ".weight", 4 * hidden, in + hidden);
    l.bias = ps.add(name + ".bias", 1, 4 * hidden);
    return l;
  }

  /// Uniform +-1/sqrt(fan_in), forget-gate bias +1.
  template <typename T>
  void init(ParamSet<T>& ps, CounterRng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in + hidden));
    ps.init_uniform(weight, bound, rng);
    ps.init_uniform(bias, bound, rng);
    for (int j = hidden; j < 2 * hidden; ++j) ps[bias].values[j] = T(1);
  }

  /// One step: returns (h', c'). x, h, c are 1 x width.
  template <typename T>
  std::pair<Var<T>, Var<T>> step(Tape<T>& tape, ParamSet<T>& ps, Var<T> x, Var<T> h, Var<T> c) const {
    if (x.cols() != in) throw ShapeMismatch("lstm_step: input width mismatch");
    if (h.cols() != hidden || c.cols() != hidden) throw ShapeMismatch("lstm_step: state width mismatch");
    const Var<T> z = dense(concat_cols<T>({x, h}), tape.param(ps, weight), tape.param(ps, bias));
    const Var<T> i = sigmoid(slice_cols(z, 0, hidden));
    const Var<T> f = sigmoid(slice_cols(z, hidden, hidden));
    const Var<T> g = nn::tanh(slice_cols(z, 2 * hidden, hidden));
    const Var<T> o = sigmoid(slice_cols(z, 3 * hidden, hidden));
    const Var<T> c_next = add(mul(f, c), mul(i, g));
    const Var<T> h_next = mul(o, nn::tanh(c_next));
    return {h_next, c_next};
  }
};

}  // namespace lfuse::nn
