#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lfuse/ekf.hpp"
#include "lfuse/fusion/episode.hpp"

namespace lfuse::eval {

using fusion::EpisodeTrace;

struct ErrorSeries {
  std::vector<double> pos;      // planar distance, m
  std::vector<double> vel;      // m/s
  std::vector<double> heading;  // signed, rad

  void append(const ErrorSeries& o) {
    pos.insert(pos.end(), o.pos.begin(), o.pos.end());
    vel.insert(vel.end(), o.vel.begin(), o.vel.end());
    heading.insert(heading.end(), o.heading.begin(), o.heading.end());
  }
};

inline void add_error(ErrorSeries& s, const VehicleState& est, const VehicleState& truth, bool speed_magnitude = false) {
  s.pos.push_back(std::hypot(est.x() - truth.x(), est.y() - truth.y()));
  s.vel.push_back(speed_magnitude ? est.v() - std::abs(truth.v()) : est.v() - truth.v());
  s.heading.push_back(angle_diff(est.psi(), truth.psi()));
}

/// Errors of the per-frame estimate (update if present, else prediction) over frames k >= 1.
inline ErrorSeries trace_errors(const EpisodeTrace& tr) {
  ErrorSeries s;
  const bool magnitude = tr.method == "gnss";
  for (std::size_t k = 1; k < tr.frames.size(); ++k) add_error(s, tr.frames[k].estimate(), tr.frames[k].truth, magnitude);
  return s;
}

struct Rmse {
  double pos = 0.0;
  double vel = 0.0;
  double heading = 0.0;
};

inline double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline Rmse rmse(const ErrorSeries& s) {
  if (s.pos.empty() || s.vel.size() != s.pos.size() || s.heading.size() != s.pos.size())
    throw InvalidArgument("rmse: empty or ragged error series");
  std::vector<double> h(s.heading.size());
  // heading errors may arrive unwrapped
  std::transform(s.heading.begin(), s.heading.end(), h.begin(), [](double e) { return angle_diff(e, 0.0); });
  return {rms(s.pos), rms(s.vel), rms(h)};
}

inline const std::vector<double>& position_edges() {
  static const std::vector<double> e{0, 0.1, 0.3, 0.5, 1, 2, 5, std::numeric_limits<double>::infinity()};
  return e;
}
inline const std::vector<double>& heading_edges() {
  static const std::vector<double> e{0, 0.01, 0.03, 0.05, 0.1, 0.3, std::numeric_limits<double>::infinity()};
  return e;
}

/// Counts per [edges[i], edges[i+1]); values at or beyond a finite last edge
/// land in `overflow`, values below the first in `underflow`.
struct Histogram {
  std::vector<double> edges;
  std::vector<long> counts;
  long underflow = 0;
  long overflow = 0;

  long total() const {
    long n = underflow + overflow;
    for (long c : counts) n += c;
    return n;
  }
};

inline Histogram error_histogram(const std::vector<double>& values, const std::vector<double>& edges) {
  if (edges.size() < 2) throw InvalidArgument("error_histogram: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw InvalidArgument("error_histogram: edges must be strictly increasing");
  Histogram h;
  h.edges = edges;
  h.counts.assign(edges.size() - 1, 0);
  for (double v : values) {
    if (v < edges.front()) {
      ++h.underflow;
      continue;
    }
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    const auto bin = static_cast<std::size_t>(it - edges.begin()) - 1;
    if (bin >= h.counts.size()) ++h.overflow;
    else ++h.counts[bin];
  }
  return h;
}

struct MetricReport {
  std::string method;
  std::string corpus;
  int stride = 1;
  long frames = 0;
  Rmse rmse;
  ErrorSeries errors;
  Histogram pos_hist;
  Histogram heading_hist;
  double mean_loss = std::numeric_limits<double>::quiet_NaN();  // learned method only
};

inline MetricReport make_report(const std::string& method, const std::string& corpus, int stride,
                                const std::vector<EpisodeTrace>& traces) {
  MetricReport r;
  r.method = method;
  r.corpus = corpus;
  r.stride = stride;
  for (const auto& t : traces) r.errors.append(trace_errors(t));
  r.frames = static_cast<long>(r.errors.pos.size());
  r.rmse = rmse(r.errors);
  r.pos_hist = error_histogram(r.errors.pos, position_edges());
  std::vector<double> ah(r.errors.heading.size());
  std::transform(r.errors.heading.begin(), r.errors.heading.end(), ah.begin(), [](double e) { return std::abs(e); });
  r.heading_hist = error_histogram(ah, heading_edges());
  bool losses = !traces.empty();
  for (const auto& t : traces) losses = losses && t.has_losses;
  if (losses) {
    double s = 0.0;
    for (const auto& t : traces)
      for (const auto& f : t.frames) s += f.d + f.e + f.f;
    r.mean_loss = s / static_cast<double>(traces.size());
  }
  return r;
}

/// Raw GNSS passthrough: every frame reports the latest usable fix, held through
/// outages (starting from the fix before the segment). Speed is unsigned.
inline EpisodeTrace run_raw_gnss(const sim::Segment& seg, int stride = 1) {
  EpisodeTrace tr;
  tr.segment_id = seg.id;
  tr.method = "gnss";
  tr.stride = stride;
  tr.frames.resize(seg.truth.size());
  std::optional<sim::GnssFrame> held = seg.prior_fix;
  std::size_t g = 0;
  int ordinal = 0;
  for (std::size_t k = 0; k < seg.truth.size(); ++k) {
    auto& f = tr.frames[k];
    f.t = seg.truth[k].t;
    f.truth = seg.truth[k].state;
    f.regime = seg.regime(f.t);
    while (g < seg.gnss.size() && seg.gnss[g].t <= f.t + 1e-9) {
      const auto& z = seg.gnss[g++];
      if (ordinal++ % stride == 0 && z.usable()) {
        held = z;
        ++tr.gnss_consumed;
      }
    }
    if (k == 0 || !held) f.pred = seg.truth[0].state;
    else f.pred = VehicleState(held->x, held->y, held->vel, held->heading);
  }
  return tr;
}

inline std::vector<EpisodeTrace> run_fused_corpus(const std::vector<sim::Segment>& segs, fusion::Model<float>& model,
                                                  int stride) {
  std::vector<EpisodeTrace> out;
  out.reserve(segs.size());
  for (const auto& s : segs) out.push_back(fusion::run_episode<float>(s, model, stride));
  return out;
}

/// Evaluates the trained model at each stride without retraining.
inline std::vector<MetricReport> ablate_update_frequency(const std::vector<sim::Segment>& segs,
                                                         fusion::Model<float>& model, const std::vector<int>& strides,
                                                         const std::string& corpus = "corpus") {
  std::vector<MetricReport> out;
  for (int s : strides) out.push_back(make_report("fused", corpus, s, run_fused_corpus(segs, model, s)));
  return out;
}

struct Comparison {
  std::vector<MetricReport> reports;
  std::vector<EpisodeTrace> traces;
};

/// Runs the requested methods (gnss, ekf, fused) on identical segments.
inline Comparison compare_methods(const std::vector<sim::Segment>& segs, const std::string& corpus,
                                  const ekf::EkfConfig& ekf_cfg, fusion::Model<float>* model,
                                  const std::vector<std::string>& methods = {"gnss", "ekf", "fused"}, int stride = 1) {
  Comparison c;
  for (const auto& m : methods) {
    std::vector<EpisodeTrace> traces;
    for (const auto& s : segs) {
      if (m == "gnss") traces.push_back(run_raw_gnss(s, stride));
      else if (m == "ekf") traces.push_back(ekf::run_ekf(s, ekf_cfg, stride));
      else if (m == "fused") {
        if (!model) throw InvalidArgument("compare_methods: fused method needs a model");
        traces.push_back(fusion::run_episode<float>(s, *model, stride));
      } else {
        throw InvalidArgument("compare_methods: unknown method '" + m + "'");
      }
    }
    c.reports.push_back(make_report(m, corpus, stride, traces));
    c.traces.insert(c.traces.end(), traces.begin(), traces.end());
  }
  return c;
}

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  int cycles = 0;
};

inline LatencyStats summarize_latency(std::vector<double> ms) {
  if (ms.empty()) throw InvalidArgument("summarize_latency: no samples");
  std::sort(ms.begin(), ms.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(ms.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, ms.size() - 1);
    return ms[lo] + (ms[hi] - ms[lo]) * (pos - static_cast<double>(lo));
  };
  return {q(0.5), q(0.95), static_cast<int>(ms.size())};
}

struct RuntimeReport {
  LatencyStats fused;
  LatencyStats ekf;
};

/// Wall time per update cycle (20 predictions and one update) in eval mode.
/// The segment is replayed until `cycles` timed cycles follow `warmup` discarded ones.
inline RuntimeReport runtime_benchmark(fusion::Model<float>& model, const sim::Segment& seg, int cycles = 200,
                                       int warmup = 10, const ekf::EkfConfig& ekf_cfg = {}) {
  using clock = std::chrono::steady_clock;
  if (cycles < 1 || warmup < 0) throw InvalidArgument("runtime_benchmark: bad cycle counts");
  std::vector<double> fused_ms, ekf_ms;
  int seen = 0;
  fusion::EpisodeOptions opt;
  opt.compute_losses = false;
  while (static_cast<int>(fused_ms.size()) < cycles) {
    nn::Tape<float> tape(false);
    fusion::EpisodeRunner<float> runner(seg, model, tape, opt);
    if (runner.cycles() == 0) throw InvalidArgument("runtime_benchmark: segment has no update cycles");
    while (!runner.done() && static_cast<int>(fused_ms.size()) < cycles) {
      const auto t0 = clock::now();
      runner.step_cycle();
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      if (seen++ >= warmup) fused_ms.push_back(ms);
    }
  }

  ekf_cfg.validate();
  seen = 0;
  while (static_cast<int>(ekf_ms.size()) < cycles) {
    ekf::EkfState s;
    s.mean = seg.truth[0].state;
    s.cov = ekf::Mat4::Identity() * 1e-4;
    std::size_t g = 0;
    long k = 1;
    const long K = seg.frames() - 1;
    while (k <= K && static_cast<int>(ekf_ms.size()) < cycles) {
      const auto t0 = clock::now();
      const long end = std::min(K, k + sim::kFramesPerGnss - 1);
      for (; k <= end; ++k)
        s = ekf::ekf_predict(s, fusion::assemble_control(seg.imu[k], seg.chassis[k]),
                             seg.truth[k].t - seg.truth[k - 1].t, ekf_cfg);
      while (g < seg.gnss.size() && seg.gnss[g].t <= seg.truth[end].t + 1e-9) {
        if (seg.gnss[g].t > seg.truth[end].t - 1e-9 && seg.gnss[g].usable()) s = ekf::ekf_update(s, seg.gnss[g], ekf_cfg);
        ++g;
      }
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      if (seen++ >= warmup) ekf_ms.push_back(ms);
    }
  }
  return {summarize_latency(fused_ms), summarize_latency(ekf_ms)};
}

/// Table-style report: one row per method and corpus.
inline std::string format_report(const std::vector<MetricReport>& reports) {
  std::string out = "# lfuse-report 1\nmethod\tcorpus\tstride\tframes\tpos_rmse_m\tvel_rmse_mps\theading_rmse_rad\tmean_loss\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%d\t%ld\t%.9g\t%.9g\t%.9g\t%.17g\n", r.method.c_str(), r.corpus.c_str(),
                  r.stride, r.frames, r.rmse.pos, r.rmse.vel, r.rmse.heading, r.mean_loss);
    out += buf;
  }
  return out;
}

/// Stacked-chart data: one row per (method, corpus, bin).
inline std::string format_histograms(const std::vector<MetricReport>& reports) {
  std::string out = "# lfuse-histogram 1\nmethod\tcorpus\tstride\tquantity\tlower\tupper\tcount\n";
  char buf[256];
  for (const auto& r : reports) {
    for (const auto* h : {&r.pos_hist, &r.heading_hist}) {
      const char* q = h == &r.pos_hist ? "position" : "heading";
      for (std::size_t i = 0; i < h->counts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s\t%s\t%d\t%s\t%g\t%g\t%ld\n", r.method.c_str(), r.corpus.c_str(), r.stride, q,
                      h->edges[i], h->edges[i + 1], h->counts[i]);
        out += buf;
      }
    }
  }
  return out;
}

}  // namespace lfuse::eval
