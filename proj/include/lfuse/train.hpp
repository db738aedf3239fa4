#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iterator>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lfuse/fusion/episode.hpp"
#include "lfuse/nn/optim.hpp"

namespace lfuse::train {

using fusion::EpisodeTrace;
using fusion::Model;

struct StageConfig {
  double duration = 5.0;  // seconds; selects segments of this length
  int epochs = 200;
};

struct TrainConfig {
  std::vector<StageConfig> stages{{5.0, 200}, {20.0, 50}};
  double lr = 0.01;
  double weight_decay = 0.01;
  // segments per optimizer step
  int batch_size = 8;
  fusion::LossWeights loss;
  fusion::InnovationConfig innovation;
  fusion::NetworkConfig network;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  int threads = 1;
  /// Write a checkpoint every this many epochs (0: only at stage ends).
  int checkpoint_every = 0;
  bool halve_lr_on_plateau = false;
  int plateau_patience = 10;
  /// Also train each stage on longer segments cut into pieces of its duration.
  bool split_longer = true;

  void validate() const {
    if (stages.empty()) throw InvalidArgument("train.stages must not be empty");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (!(stages[i].duration > 0.0)) throw InvalidArgument("train.stages[" + std::to_string(i) + "].duration must be > 0");
      if (stages[i].epochs <= 0) throw InvalidArgument("train.stages[" + std::to_string(i) + "].epochs must be > 0");
    }
    if (!(lr >= 0.0)) throw InvalidArgument("train.lr must be >= 0");
    if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
    if (!(clip_norm > 0.0)) throw InvalidArgument("train.clip_norm must be > 0");
    if (threads < 1) throw InvalidArgument("train.threads must be >= 1");
    network.validate();
    innovation.validate();
  }
};

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) stages.push_back({{"duration", s.duration}, {"epochs", s.epochs}});
  return {{"stages", stages},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"alpha", c.loss.alpha},
          {"beta", c.loss.beta},
          {"huber_delta", c.loss.huber_delta},
          {"innovation_scale", c.innovation.c},
          {"network", fusion::network_to_json(c.network)},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"threads", c.threads},
          {"checkpoint_every", c.checkpoint_every},
          {"halve_lr_on_plateau", c.halve_lr_on_plateau},
          {"plateau_patience", c.plateau_patience},
          {"split_longer", c.split_longer}};
}

/// Overlays the keys present in `j` onto `base`.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw ParseError("train config must be a JSON object");
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw ParseError(std::string("field ") + key + " has the wrong type");
    }
  };
  if (j.contains("stages")) {
    if (!j["stages"].is_array()) throw ParseError("field stages must be an array");
    base.stages.clear();
    for (std::size_t i = 0; i < j["stages"].size(); ++i) {
      const auto& s = j["stages"][i];
      if (!s.is_object() || !s.contains("duration") || !s.contains("epochs") || !s["duration"].is_number() ||
          !s["epochs"].is_number_integer())
        throw ParseError("field stages[" + std::to_string(i) + "] needs numeric duration and integer epochs");
      base.stages.push_back({s["duration"].get<double>(), s["epochs"].get<int>()});
    }
  }
  field("lr", base.lr);
  field("weight_decay", base.weight_decay);
  field("batch_size", base.batch_size);
  field("alpha", base.loss.alpha);
  field("beta", base.loss.beta);
  field("huber_delta", base.loss.huber_delta);
  field("innovation_scale", base.innovation.c);
  field("clip_norm", base.clip_norm);
  field("seed", base.seed);
  field("threads", base.threads);
  field("checkpoint_every", base.checkpoint_every);
  field("halve_lr_on_plateau", base.halve_lr_on_plateau);
  field("plateau_patience", base.plateau_patience);
  field("split_longer", base.split_longer);
  if (j.contains("network")) base.network = fusion::network_from_json(j["network"]);
  try {
    base.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return base;
}

/// l = sum of d_k + e_n + f_n recorded in the trace.
inline double total_loss(const EpisodeTrace& tr) {
  if (!tr.has_losses) throw InvalidArgument("total_loss: trace " + tr.segment_id + " carries no loss terms");
  double s = 0.0;
  for (const auto& f : tr.frames) s += f.d + f.e + f.f;
  return s;
}

struct LossParts {
  double d = 0.0, e = 0.0, f = 0.0;
  double total() const { return d + e + f; }
};

inline LossParts loss_parts(const EpisodeTrace& tr) {
  LossParts p;
  for (const auto& f : tr.frames) {
    p.d += f.d;
    p.e += f.e;
    p.f += f.f;
  }
  return p;
}

/// Result of one segment's forward/backward pass.
struct SegmentGrad {
  nn::GradSet<float> grads;
  LossParts loss;
  double tape_loss = 0.0;
};

inline std::uint64_t dropout_seed(std::uint64_t seed, int stage, int epoch, const std::string& segment_id) {
  return splitmix64(seed ^ fnv1a64(segment_id, fnv1a64(std::to_string(stage) + ":" + std::to_string(epoch))));
}

/// Forward and backward of one training episode. Reads the model only.
inline SegmentGrad segment_gradient(const sim::Segment& seg, Model<float>& model, const TrainConfig& cfg,
                                    std::uint64_t dropout) {
  nn::Tape<float> tape(true);
  fusion::EpisodeOptions opt;
  opt.mode = nn::Mode::train;
  opt.seed = dropout;
  opt.loss = cfg.loss;
  opt.innovation = cfg.innovation;
  fusion::EpisodeResult<float> res;
  try {
    res = fusion::run_episode<float>(seg, model, tape, opt);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("segment " + seg.id + ": " + e.what());
  }
  SegmentGrad out;
  out.tape_loss = static_cast<double>(res.loss.scalar());
  out.loss = loss_parts(res.trace);
  if (!std::isfinite(out.tape_loss)) throw NonFiniteError("non-finite loss on segment " + seg.id);
  tape.backward(res.loss);
  out.grads = nn::GradSet<float>(model.params);
  tape.accumulate_param_grads(model.params, out.grads);
  return out;
}

/// Mean gradient over a batch. Episodes may run on several threads; the
/// reduction always follows batch order, so the result does not depend on
/// the thread count.
inline nn::GradSet<float> batch_gradient(const std::vector<const sim::Segment*>& batch, Model<float>& model,
                                         const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                         LossParts* loss_sum = nullptr) {
  std::vector<SegmentGrad> parts(batch.size());
  const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) parts[i] = segment_gradient(*batch[i], model, cfg, seeds[i]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < batch.size(); i += workers) parts[i] = segment_gradient(*batch[i], model, cfg, seeds[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  nn::GradSet<float> total(model.params);
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const auto& p : parts) {
    total.accumulate(p.grads, inv);
    if (loss_sum) {
      loss_sum->d += p.loss.d;
      loss_sum->e += p.loss.e;
      loss_sum->f += p.loss.f;
    }
  }
  return total;
}

struct EpochMetrics {
  int stage = 0;
  int epoch = 0;  // 0-based within the stage
  long segments = 0;
  long steps = 0;
  LossParts mean;  // per segment
  double grad_norm = 0.0;  // mean pre-clip norm
  double lr = 0.0;
  double wall_s = 0.0;
};

inline std::string metrics_header() {
  return "# lfuse-metrics 1\nstage\tepoch\tsegments\tsteps\tmean_d\tmean_e\tmean_f\tmean_l\tgrad_norm\tlr\twall_s\n";
}

inline std::string format_metrics(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d\t%d\t%ld\t%ld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f\n", m.stage, m.epoch,
                m.segments, m.steps, m.mean.d, m.mean.e, m.mean.f, m.mean.total(), m.grad_norm, m.lr, m.wall_s);
  return buf;
}

/// Segments whose duration matches `duration`.
inline std::vector<const sim::Segment*> filter_duration(const std::vector<sim::Segment>& corpus, double duration) {
  std::vector<const sim::Segment*> out;
  for (const auto& s : corpus)
    if (std::abs(s.duration - duration) < 1e-6) out.push_back(&s);
  return out;
}

/// Training set of one stage: the corpus segments of its duration and, with
/// `split_longer`, every longer segment cut into pieces of that duration.
struct StageSet {
  std::vector<sim::Segment> pieces;
  std::vector<const sim::Segment*> segments;
};

inline StageSet stage_segments(const std::vector<sim::Segment>& corpus, double duration, bool split_longer) {
  StageSet out;
  out.segments = filter_duration(corpus, duration);
  if (!split_longer) return out;
  for (const auto& s : corpus)
    if (s.duration > duration + 1e-6) {
      auto parts = sim::split_segment(s, duration);
      std::move(parts.begin(), parts.end(), std::back_inserter(out.pieces));
    }
  for (const auto& p : out.pieces) out.segments.push_back(&p);
  return out;
}

using EpochHook = std::function<void(const EpochMetrics&)>;

/// Epochs [start_epoch, stage.epochs) of one stage: seeded shuffle, batched
/// gradient, global-norm clip and AdamW step.
inline std::vector<EpochMetrics> train_stage(const std::vector<sim::Segment>& corpus, int stage_index,
                                             const TrainConfig& cfg, Model<float>& model, nn::OptimizerState& opt,
                                             int start_epoch = 0, const EpochHook& hook = {}) {
  cfg.validate();
  const auto& stage = cfg.stages.at(stage_index);
  const StageSet set = stage_segments(corpus, stage.duration, cfg.split_longer);
  const auto& segs = set.segments;
  if (segs.empty())
    throw InvalidArgument("train_stage: no " + std::to_string(stage.duration) + " s segments in the corpus");
  if (opt.m.size() != static_cast<std::size_t>(model.params.size())) opt.init_for(model.params);
  opt.cfg.weight_decay = cfg.weight_decay;
  if (opt.cfg.lr != cfg.lr && !cfg.halve_lr_on_plateau) opt.cfg.lr = cfg.lr;

  std::vector<EpochMetrics> log;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = start_epoch; epoch < stage.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(segs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng shuffle = CounterRng(cfg.seed).fork("shuffle").fork(static_cast<std::uint64_t>(stage_index) * 1000003u + epoch);
    shuffle.shuffle(order);

    EpochMetrics m;
    m.stage = stage_index;
    m.epoch = epoch;
    LossParts sum;
    double norm_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const sim::Segment*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        batch.push_back(segs[order[i]]);
        seeds.push_back(dropout_seed(cfg.seed, stage_index, epoch, segs[order[i]]->id));
      }
      auto grads = batch_gradient(batch, model, cfg, seeds, &sum);
      norm_sum += nn::clip_global_norm(grads, cfg.clip_norm);
      nn::adamw_step(model.params, grads, opt);
      ++m.steps;
    }
    m.segments = static_cast<long>(segs.size());
    const double n = static_cast<double>(segs.size());
    m.mean = {sum.d / n, sum.e / n, sum.f / n};
    m.grad_norm = norm_sum / static_cast<double>(m.steps);
    m.lr = opt.cfg.lr;
    m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.halve_lr_on_plateau) {
      if (m.mean.total() < best) {
        best = m.mean.total();
        since_best = 0;
      } else if (++since_best >= cfg.plateau_patience) {
        opt.cfg.lr *= 0.5;
        since_best = 0;
      }
    }
    log.push_back(m);
    if (hook) hook(m);
  }
  return log;
}

/// Where a schedule starts (for --resume): the first stage and epoch not yet run.
struct Progress {
  int stage = 0;
  int epoch = 0;
};

using StageHook = std::function<void(int stage, const Progress& next)>;

/// Runs every stage in order on the same weights and optimizer state.
/// `epoch_hook` sees every epoch; `stage_hook` fires after each stage.
inline std::vector<EpochMetrics> two_stage_schedule(const std::vector<sim::Segment>& corpus, const TrainConfig& cfg,
                                                    Model<float>& model, nn::OptimizerState& opt, Progress start = {},
                                                    const EpochHook& epoch_hook = {},
                                                    const StageHook& stage_hook = {}) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.stages.size(); ++i)
    if (stage_segments(corpus, cfg.stages[i].duration, cfg.split_longer).segments.empty())
      throw InvalidArgument("two_stage_schedule: corpus has no " + std::to_string(cfg.stages[i].duration) +
                            " s segments for stage " + std::to_string(i));
  std::vector<EpochMetrics> log;
  for (int s = start.stage; s < static_cast<int>(cfg.stages.size()); ++s) {
    const int first = s == start.stage ? start.epoch : 0;
    auto part = train_stage(corpus, s, cfg, model, opt, first, epoch_hook);
    log.insert(log.end(), part.begin(), part.end());
    if (stage_hook) stage_hook(s, {s + 1, 0});
  }
  return log;
}

}  // namespace lfuse::train
