#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lfuse/nn/tensor.hpp"

namespace lfuse::nn {

struct AdamWConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig cfg;
  long step = 0;
  /// Moments are stored in 32 bits so checkpoints restore them exactly.
  std::vector<Buffer<float>> m;
  std::vector<Buffer<float>> v;

  template <typename T>
  void init_for(const ParamSet<T>& ps) {
    m.clear();
    v.clear();
    for (const auto& p : ps) {
      m.emplace_back(p.size(), 0.0f);
      v.emplace_back(p.size(), 0.0f);
    }
    step = 0;
  }
};

/// Decoupled weight decay followed by a bias-corrected Adam step.
template <typename T>
void adamw_step(ParamSet<T>& ps, const GradSet<T>& grads, OptimizerState& st) {
  if (st.step < 0) throw InvalidArgument("adamw_step: negative step counter");
  if (st.m.size() != static_cast<std::size_t>(ps.size())) st.init_for(ps);
  for (int i = 0; i < ps.size(); ++i) {
    if (grads.grads[i].size() != ps[i].size() || st.m[i].size() != ps[i].size())
      throw ShapeMismatch("adamw_step: moment/gradient shape mismatch for " + ps[i].name);
    for (T g : grads.grads[i])
      if (!std::isfinite(static_cast<double>(g))) throw NonFiniteError("adamw_step: non-finite gradient in " + ps[i].name);
  }
  ++st.step;
  const auto& c = st.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (int i = 0; i < ps.size(); ++i) {
    auto& p = ps[i].values;
    const auto& g = grads.grads[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double pj = static_cast<double>(p[j]);
      const double gj = static_cast<double>(g[j]);
      pj -= c.lr * c.weight_decay * pj;
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      pj -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      p[j] = static_cast<T>(pj);
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_global_norm(GradSet<T>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip_global_norm: max_norm must be > 0");
  const double norm = grads.global_norm();
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads.grads)
      for (auto& v : g) v = static_cast<T>(static_cast<double>(v) * s);
  }
  return norm;
}

}  // namespace lfuse::nn
