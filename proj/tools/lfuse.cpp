// lfuse: simulate corpora, train the learned filter, evaluate and benchmark.
//
// Exit codes
//   0  success
//   2  bad command line
//   3  invalid input (scenario, config, corpus or trace file)
//   4  cannot write outputs
//   5  checkpoint incompatible (architecture, version or mode)
//   6  non-finite loss during training
//   1  any other failure

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "lfuse/ekf.hpp"
#include "lfuse/eval.hpp"
#include "lfuse/fusion/trace_io.hpp"
#include "lfuse/nn/checkpoint.hpp"
#include "lfuse/sim/generate.hpp"
#include "lfuse/sim/run_io.hpp"
#include "lfuse/sim/scenario.hpp"
#include "lfuse/sim/segment.hpp"
#include "lfuse/train.hpp"

#ifndef LFUSE_VERSION
#define LFUSE_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lfuse;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kBadInput = 3, kIo = 4, kIncompatible = 5, kNonFinite = 6 };

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CliError(kBadInput, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  const auto text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw CliError(kBadInput, p.string() + ": " + e.what());
  }
}

/// Files written by one command. Each lands under a temporary name first;
/// rollback() removes everything if the command fails midway.
class OutputSet {
 public:
  void write(const fs::path& p, const std::string& content) {
    std::error_code ec;
    if (p.has_parent_path()) {
      const auto parent = p.parent_path();
      if (!fs::exists(parent)) {
        make_dirs(parent);
      }
    }
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw CliError(kIo, "cannot write " + p.string());
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!out) {
        fs::remove(tmp, ec);
        throw CliError(kIo, "write to " + p.string() + " failed");
      }
    }
    fs::rename(tmp, p, ec);
    if (ec) {
      fs::remove(tmp, ec);
      throw CliError(kIo, "cannot write " + p.string());
    }
    files_.push_back(p);
  }

  void track(const fs::path& p) { files_.push_back(p); }

  void make_dirs(const fs::path& dir) {
    std::vector<fs::path> fresh;
    for (fs::path d = dir; !d.empty() && !fs::exists(d); d = d.parent_path()) {
      fresh.push_back(d);
      if (d == d.parent_path()) break;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw CliError(kIo, "cannot create " + dir.string() + ": " + ec.message());
    dirs_.insert(dirs_.end(), fresh.begin(), fresh.end());
  }

  void rollback() noexcept {
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (const auto& d : dirs_) fs::remove(d, ec);
    files_.clear();
    dirs_.clear();
  }

  const std::vector<fs::path>& files() const { return files_; }

 private:
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
};

int default_threads() {
  if (const char* env = std::getenv("LFUSE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
    throw CliError(kUsage, std::string("LFUSE_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  int threads = 1;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  json to_json() const {
    return {{"schema", "lfuse-manifest"},
            {"version", 1},
            {"command", command},
            {"tool_version", LFUSE_VERSION},
            {"argv", argv},
            {"config", config},
            {"config_hash", hex64(fnv1a64(config.dump()))},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"threads", threads},
            {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  }
};

// ---------------------------------------------------------------------------
// corpus files

struct SegmentEntry {
  std::string id;
  std::string run;
  long first = 0;
  long count = 0;
  double duration = 0.0;
  std::string kind;
};

json segment_index(const std::vector<SegmentEntry>& entries) {
  json segs = json::array();
  for (const auto& e : entries)
    segs.push_back({{"id", e.id}, {"run", e.run}, {"first", e.first}, {"count", e.count}, {"duration", e.duration}, {"kind", e.kind}});
  return {{"schema", "lfuse-segments"}, {"version", 1}, {"segments", segs}};
}

std::vector<sim::Segment> load_corpus(const fs::path& dir, std::optional<double> duration = std::nullopt) {
  const fs::path index_path = dir / "segments.json";
  if (!fs::exists(index_path)) throw CliError(kBadInput, "corpus " + dir.string() + " has no segments.json");
  const auto index = read_json(index_path);
  if (index.value("schema", "") != "lfuse-segments") throw CliError(kBadInput, index_path.string() + ": not a segment index");
  if (index.value("version", 0) != 1)
    throw CliError(kBadInput, index_path.string() + ": unsupported version " + index["version"].dump());
  std::map<std::string, sim::Run> runs;
  std::vector<sim::Segment> out;
  const auto& segs = index.at("segments");
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    const std::string where = index_path.string() + ": segments[" + std::to_string(i) + "]";
    SegmentEntry e;
    try {
      e.id = s.at("id").get<std::string>();
      e.run = s.at("run").get<std::string>();
      e.first = s.at("first").get<long>();
      e.count = s.at("count").get<long>();
      e.duration = s.at("duration").get<double>();
    } catch (const json::exception& ex) {
      throw CliError(kBadInput, where + ": " + ex.what());
    }
    if (duration && std::abs(e.duration - *duration) > 1e-6) continue;
    auto it = runs.find(e.run);
    if (it == runs.end()) {
      try {
        it = runs.emplace(e.run, sim::read_run((dir / e.run).string())).first;
      } catch (const Error& ex) {
        throw CliError(kBadInput, (dir / e.run).string() + ": " + ex.what());
      }
    }
    try {
      out.push_back(sim::cut_segment(it->second, e.first, e.count, e.id));
    } catch (const Error& ex) {
      throw CliError(kBadInput, where + ": " + ex.what());
    }
  }
  if (out.empty()) throw CliError(kBadInput, "corpus " + dir.string() + " has no matching segments");
  return out;
}

std::string file_safe(std::string id) {
  for (auto& c : id)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return id;
}

// ---------------------------------------------------------------------------
// simulate

struct GeneratorSpec {
  sim::GnssProfile profile = sim::GnssProfile::mixed;
  std::string profile_name = "mixed";
  int runs = 1;
  double duration = 120.0;
  std::uint64_t seed = 1;
  std::string name = "run";
  sim::NoiseConfig noise;
};

json generator_to_json(const GeneratorSpec& g) {
  return {{"profile", g.profile_name}, {"runs", g.runs},     {"duration", g.duration},
          {"seed", g.seed},            {"name", g.name},     {"noise", sim::noise_to_json(g.noise)}};
}

GeneratorSpec generator_from_json(const json& j, const std::string& file) {
  GeneratorSpec g;
  auto bad = [&](const std::string& field, const std::string& why) {
    return CliError(kBadInput, file + ": field generator." + field + " " + why);
  };
  if (!j.is_object()) throw CliError(kBadInput, file + ": field generator must be an object");
  if (j.contains("profile")) {
    if (!j["profile"].is_string()) throw bad("profile", "must be a string");
    g.profile_name = j["profile"].get<std::string>();
    const auto p = sim::profile_from_string(g.profile_name);
    if (!p) throw bad("profile", "must be clean, mixed or poor");
    g.profile = *p;
  }
  if (j.contains("runs")) {
    if (!j["runs"].is_number_integer() || j["runs"].get<int>() < 1) throw bad("runs", "must be a positive integer");
    g.runs = j["runs"].get<int>();
  }
  if (j.contains("duration")) {
    if (!j["duration"].is_number() || !(j["duration"].get<double>() > 0)) throw bad("duration", "must be a positive number");
    g.duration = j["duration"].get<double>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw bad("seed", "must be a non-negative integer");
    g.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw bad("name", "must be a string");
    g.name = j["name"].get<std::string>();
  }
  if (j.contains("noise")) {
    try {
      g.noise = sim::noise_from_json(j["noise"], "generator.noise");
    } catch (const Error& e) {
      throw CliError(kBadInput, file + ": " + e.what());
    }
  }
  return g;
}

int cmd_simulate(const fs::path& scenario_path, const fs::path& out, std::optional<std::uint64_t> seed,
                 double long_s, double short_s, Manifest& man) {
  const auto doc = read_json(scenario_path);
  std::vector<sim::ScenarioSpec> specs;
  if (doc.is_object() && doc.contains("generator")) {
    auto g = generator_from_json(doc["generator"], scenario_path.string());
    if (seed) g.seed = *seed;
    for (int i = 0; i < g.runs; ++i) {
      auto s = sim::random_scenario(g.seed + static_cast<std::uint64_t>(i), g.duration, g.profile, g.noise);
      s.name = g.name + "-" + std::to_string(i);
      specs.push_back(std::move(s));
    }
    man.config = {{"generator", generator_to_json(g)}};
    man.seed = g.seed;
  } else {
    sim::ScenarioSpec s;
    try {
      s = sim::scenario_from_json(doc);
    } catch (const Error& e) {
      throw CliError(kBadInput, scenario_path.string() + ": " + e.what());
    }
    if (seed) s.seed = *seed;
    man.config = {{"scenario", sim::scenario_to_json(s)}};
    man.seed = s.seed;
    specs.push_back(std::move(s));
  }
  man.config["segments"] = {{"long", long_s}, {"short", short_s}};
  man.inputs = {scenario_path.string()};

  OutputSet files;
  try {
    if (!fs::exists(out)) files.make_dirs(out);
    std::vector<SegmentEntry> entries;
    for (const auto& spec : specs) {
      const auto run = sim::simulate(spec);
      const std::string rel = "runs/" + file_safe(run.name) + ".run";
      files.write(out / rel, sim::format_run(run));
      sim::SegmentSet set;
      try {
        set = sim::segment_dataset(run, {long_s, short_s});
      } catch (const InvalidArgument& e) {
        throw CliError(kBadInput, scenario_path.string() + ": " + e.what());
      }
      auto add = [&](const std::vector<sim::Segment>& segs, const char* kind) {
        for (const auto& s : segs)
          entries.push_back({s.id, rel, std::lround(s.t0 * sim::kImuRateHz), s.frames(), s.duration, kind});
      };
      add(set.long_segments, "long");
      add(set.short_segments, "short");
      std::cerr << "simulated " << run.name << ": " << set.long_segments.size() << " long, " << set.short_segments.size()
                << " short segments\n";
    }
    files.write(out / "segments.json", segment_index(entries).dump(1) + "\n");
    for (const auto& f : files.files()) man.outputs.push_back(f.string());
    files.write(out / "manifest.json", man.to_json().dump(2) + "\n");
  } catch (...) {
    files.rollback();
    throw;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// train

json config_for_hash(const train::TrainConfig& cfg) {
  auto j = train::config_to_json(cfg);
  j.erase("threads");
  return j;
}

void rewrite_metrics(const fs::path& path, const train::Progress& keep_before) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("stage", 0) == 0) {
      kept += line + "\n";
      continue;
    }
    int stage = 0, epoch = 0;
    if (std::sscanf(line.c_str(), "%d\t%d", &stage, &epoch) == 2 &&
        (stage < keep_before.stage || (stage == keep_before.stage && epoch < keep_before.epoch)))
      kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

int cmd_train(const fs::path& corpus_dir, const std::optional<fs::path>& config_path, const fs::path& out,
              const json& flag_overrides, bool resume, Manifest& man) {
  train::TrainConfig cfg;
  if (config_path) {
    try {
      cfg = train::config_from_json(read_json(*config_path));
    } catch (const ParseError& e) {
      throw CliError(kBadInput, config_path->string() + ": " + e.what());
    }
  }
  try {
    cfg = train::config_from_json(flag_overrides, cfg);
  } catch (const ParseError& e) {
    throw CliError(kUsage, std::string("command line: ") + e.what());
  }
  const auto resolved = config_for_hash(cfg);
  const std::string hash = hex64(fnv1a64(resolved.dump()));

  std::vector<sim::Segment> corpus = load_corpus(corpus_dir);
  std::vector<sim::Segment> used;
  for (auto& s : corpus)
    for (const auto& st : cfg.stages)
      if (std::abs(s.duration - st.duration) < 1e-6) {
        used.push_back(std::move(s));
        break;
      }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i)
    if (train::stage_segments(used, cfg.stages[i].duration, cfg.split_longer).segments.empty())
      throw CliError(kBadInput, "corpus " + corpus_dir.string() + " has no " + std::to_string(cfg.stages[i].duration) +
                                    " s segments for stage " + std::to_string(i));

  fusion::Model<float> model(cfg.network);
  model.init(cfg.seed);
  nn::OptimizerState opt;
  opt.cfg.lr = cfg.lr;
  opt.cfg.weight_decay = cfg.weight_decay;
  train::Progress start;
  const fs::path metrics_path = out.string() + ".metrics.tsv";

  if (out.has_parent_path() && !fs::exists(out.parent_path())) {
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    if (ec) throw CliError(kIo, "cannot create " + out.parent_path().string());
  }

  if (resume && fs::exists(out)) {
    nn::CheckpointMeta meta;
    try {
      meta = nn::load_checkpoint(out.string(), model.params, &opt);
    } catch (const Error& e) {
      throw CliError(kIncompatible, "cannot resume from " + out.string() + ": " + e.what());
    }
    if (meta.extra.value("config_hash", "") != hash)
      throw CliError(kIncompatible, out.string() + " was written with config hash " + meta.extra.value("config_hash", "?") +
                                        ", current config hashes to " + hash);
    if (meta.mode != "train") {
      std::cerr << out.string() << " already holds a finished schedule\n";
      return kOk;
    }
    start.stage = meta.progress.value("stage", 0);
    start.epoch = meta.progress.value("epoch", 0);
    rewrite_metrics(metrics_path, start);
    std::cerr << "resuming at stage " << start.stage << " epoch " << start.epoch << "\n";
  } else {
    std::ofstream m(metrics_path, std::ios::trunc);
    if (!m) throw CliError(kIo, "cannot write " + metrics_path.string());
    m << train::metrics_header();
  }

  auto save = [&](const std::string& path, const std::string& mode, const train::Progress& p) {
    nn::CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.mode = mode;
    meta.network = fusion::network_to_json(cfg.network);
    meta.progress = {{"stage", p.stage}, {"epoch", p.epoch}};
    meta.extra = {{"config_hash", hash}, {"config", resolved}};
    try {
      nn::save_checkpoint(path, model.params, meta, &opt);
    } catch (const std::exception& e) {
      throw CliError(kIo, e.what());
    }
  };

  std::vector<std::string> stage_files;
  auto epoch_hook = [&](const train::EpochMetrics& m) {
    std::ofstream(metrics_path, std::ios::app) << train::format_metrics(m);
    std::cerr << "stage " << m.stage << " epoch " << m.epoch << " loss " << m.mean.total() << " (" << m.wall_s << " s)\n";
    if (cfg.checkpoint_every > 0 && (m.epoch + 1) % cfg.checkpoint_every == 0 &&
        m.epoch + 1 < cfg.stages[m.stage].epochs)
      save(out.string(), "train", {m.stage, m.epoch + 1});
  };
  auto stage_hook = [&](int stage, const train::Progress& next) {
    const std::string p = out.string() + ".stage" + std::to_string(stage);
    save(p, "eval", next);
    stage_files.push_back(p);
    save(out.string(), "train", next);
  };
  try {
    train::two_stage_schedule(used, cfg, model, opt, start, epoch_hook, stage_hook);
  } catch (const NonFiniteError& e) {
    throw CliError(kNonFinite, std::string("training aborted: ") + e.what());
  }
  save(out.string(), "eval", {static_cast<int>(cfg.stages.size()), 0});

  man.config = train::config_to_json(cfg);
  man.config.erase("threads");
  man.seed = cfg.seed;
  man.inputs = {corpus_dir.string()};
  if (config_path) man.inputs.push_back(config_path->string());
  man.outputs = {out.string(), out.string() + ".bin", metrics_path.string()};
  for (const auto& s : stage_files) man.outputs.push_back(s);
  OutputSet files;
  files.write(out.string() + ".manifest.json", man.to_json().dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------------------
// eval and bench

ekf::EkfConfig ekf_from_json(const json& j, const std::string& file) {
  ekf::EkfConfig c;
  auto arr4 = [&](const char* key, std::array<double, 4>& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::array<double, 4>>();
    } catch (const json::exception&) {
      throw CliError(kBadInput, file + ": field ekf." + key + " must be an array of 4 numbers");
    }
  };
  arr4("q", c.q);
  arr4("p0", c.p0);
  arr4("fixed_var", c.fixed_var);
  if (j.contains("gate")) {
    if (!j["gate"].is_number()) throw CliError(kBadInput, file + ": field ekf.gate must be a number");
    c.gate = j["gate"].get<double>();
  }
  if (j.contains("noise_source")) {
    const auto s = j["noise_source"].get<std::string>();
    if (s == "reported") c.noise_source = ekf::MeasurementNoise::reported;
    else if (s == "fixed") c.noise_source = ekf::MeasurementNoise::fixed;
    else throw CliError(kBadInput, file + ": field ekf.noise_source must be reported or fixed");
  }
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw CliError(kBadInput, file + ": " + e.what());
  }
  return c;
}

json ekf_to_json(const ekf::EkfConfig& c) {
  json j = {{"q", c.q}, {"p0", c.p0}, {"fixed_var", c.fixed_var},
            {"noise_source", c.noise_source == ekf::MeasurementNoise::reported ? "reported" : "fixed"}};
  j["gate"] = c.gate ? json(*c.gate) : json(nullptr);
  return j;
}

/// Loads a checkpoint into a model whose architecture comes from `network`,
/// or from the checkpoint itself when no config names one.
fusion::Model<float> load_model(const fs::path& ckpt, const std::optional<json>& network, nn::CheckpointMeta* meta_out) {
  json man;
  try {
    man = nn::read_checkpoint_manifest(ckpt.string());
  } catch (const VersionError& e) {
    throw CliError(kIncompatible, e.what());
  } catch (const Error& e) {
    throw CliError(kBadInput, e.what());
  }
  fusion::NetworkConfig net;
  try {
    net = fusion::network_from_json(network ? *network : man.at("network"));
  } catch (const std::exception& e) {
    throw CliError(kBadInput, ckpt.string() + ": bad network description: " + e.what());
  }
  fusion::Model<float> model(net);
  try {
    auto meta = nn::load_checkpoint(ckpt.string(), model.params);
    if (meta_out) *meta_out = meta;
  } catch (const ShapeMismatch& e) {
    throw CliError(kIncompatible, std::string("architecture does not match checkpoint: ") + e.what());
  } catch (const Error& e) {
    throw CliError(kBadInput, e.what());
  }
  return model;
}

template <typename F>
std::vector<fusion::EpisodeTrace> parallel_traces(const std::vector<sim::Segment>& segs, int threads, F run_one) {
  std::vector<fusion::EpisodeTrace> out(segs.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(segs.size())));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](int w) {
    try {
      for (std::size_t i = w; i < segs.size(); i += workers) out[i] = run_one(segs[i]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<std::string> split_methods(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const fs::path& corpus_dir, const std::optional<fs::path>& ckpt, const std::optional<fs::path>& config_path,
             const std::string& methods_arg, int stride, std::optional<double> duration, std::string corpus_name,
             const fs::path& out, int threads, Manifest& man) {
  const auto methods = split_methods(methods_arg);
  if (methods.empty()) throw CliError(kUsage, "--methods is empty");
  for (const auto& m : methods)
    if (m != "gnss" && m != "ekf" && m != "fused")
      throw CliError(kUsage, "--methods: unknown method '" + m + "' (expected gnss, ekf or fused)");
  if (stride < 1) throw CliError(kUsage, "--stride must be >= 1");
  const bool fused = std::find(methods.begin(), methods.end(), "fused") != methods.end();
  if (fused && !ckpt) throw CliError(kUsage, "--checkpoint is required for the fused method");

  ekf::EkfConfig ekf_cfg;
  std::optional<json> network;
  if (config_path) {
    const auto doc = read_json(*config_path);
    if (doc.contains("ekf")) ekf_cfg = ekf_from_json(doc["ekf"], config_path->string());
    if (doc.contains("network")) network = doc["network"];
  }
  std::optional<fusion::Model<float>> model;
  if (fused) model = load_model(*ckpt, network, nullptr);

  const auto segs = load_corpus(corpus_dir, duration);
  if (corpus_name.empty()) corpus_name = corpus_dir.filename().string();

  std::vector<eval::MetricReport> reports;
  OutputSet files;
  try {
    if (!fs::exists(out)) files.make_dirs(out);
    json summary = json::array();
    for (const auto& m : methods) {
      std::vector<fusion::EpisodeTrace> traces;
      if (m == "gnss")
        traces = parallel_traces(segs, threads, [&](const sim::Segment& s) { return eval::run_raw_gnss(s, stride); });
      else if (m == "ekf")
        traces = parallel_traces(segs, threads, [&](const sim::Segment& s) { return ekf::run_ekf(s, ekf_cfg, stride); });
      else
        traces = parallel_traces(segs, threads,
                                 [&](const sim::Segment& s) { return fusion::run_episode<float>(s, *model, stride); });
      for (const auto& t : traces)
        files.write(out / "traces" / m / (file_safe(t.segment_id) + ".trace"), fusion::format_trace(t));
      reports.push_back(eval::make_report(m, corpus_name, stride, traces));
      const auto& r = reports.back();
      summary.push_back({{"method", m},
                         {"stride", stride},
                         {"segments", segs.size()},
                         {"frames", r.frames},
                         {"pos_rmse_m", r.rmse.pos},
                         {"vel_rmse_mps", r.rmse.vel},
                         {"heading_rmse_rad", r.rmse.heading}});
    }
    files.write(out / "report.tsv", eval::format_report(reports));
    files.write(out / "histograms.tsv", eval::format_histograms(reports));
    files.write(out / "summary.json", json({{"schema", "lfuse-summary"}, {"version", 1}, {"reports", summary}}).dump(2) + "\n");

    man.config = {{"methods", methods}, {"stride", stride}, {"ekf", ekf_to_json(ekf_cfg)}, {"corpus_name", corpus_name}};
    if (duration) man.config["duration"] = *duration;
    if (model) man.config["network"] = fusion::network_to_json(model->cfg);
    man.inputs = {corpus_dir.string()};
    if (ckpt) man.inputs.push_back(ckpt->string());
    if (config_path) man.inputs.push_back(config_path->string());
    man.outputs = {(out / "report.tsv").string(), (out / "histograms.tsv").string(), (out / "summary.json").string(),
                   (out / "traces").string()};
    files.write(out / "manifest.json", man.to_json().dump(2) + "\n");
  } catch (...) {
    files.rollback();
    throw;
  }
  std::cout << eval::format_report(reports);
  return kOk;
}

int cmd_bench(const fs::path& ckpt, const std::optional<fs::path>& config_path, const fs::path& corpus_dir,
              const std::string& segment_id, int cycles, int warmup, const std::optional<fs::path>& out, Manifest& man) {
  std::optional<json> network;
  ekf::EkfConfig ekf_cfg;
  if (config_path) {
    const auto doc = read_json(*config_path);
    if (doc.contains("ekf")) ekf_cfg = ekf_from_json(doc["ekf"], config_path->string());
    if (doc.contains("network")) network = doc["network"];
  }
  nn::CheckpointMeta meta;
  auto model = load_model(ckpt, network, &meta);
  if (meta.mode != "eval")
    throw CliError(kIncompatible, ckpt.string() + " is a mid-training checkpoint (mode '" + meta.mode +
                                      "', dropout active); benchmark a finished checkpoint");
  const auto segs = load_corpus(corpus_dir);
  const sim::Segment* seg = nullptr;
  for (const auto& s : segs)
    if (segment_id.empty() ? s.frames() > sim::kFramesPerGnss * 10 : s.id == segment_id) {
      seg = &s;
      break;
    }
  if (!seg) throw CliError(kBadInput, "corpus " + corpus_dir.string() + " has no segment '" + segment_id + "'");
  const auto r = eval::runtime_benchmark(model, *seg, cycles, warmup, ekf_cfg);
  auto stats = [](const eval::LatencyStats& s) { return json{{"median_ms", s.median_ms}, {"p95_ms", s.p95_ms}, {"cycles", s.cycles}}; };
  const json result = {{"schema", "lfuse-bench"}, {"version", 1}, {"segment", seg->id},
                       {"fused", stats(r.fused)},  {"ekf", stats(r.ekf)}};
  std::cout << result.dump(2) << "\n";
  if (out) {
    man.config = {{"cycles", cycles}, {"warmup", warmup}, {"segment", seg->id}, {"ekf", ekf_to_json(ekf_cfg)}};
    man.seed = meta.seed;
    man.inputs = {ckpt.string(), corpus_dir.string()};
    man.outputs = {out->string()};
    OutputSet files;
    try {
      files.write(*out, result.dump(2) + "\n");
      files.write(out->string() + ".manifest.json", man.to_json().dump(2) + "\n");
    } catch (...) {
      files.rollback();
      throw;
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int run(std::vector<std::string> args);

int cmd_replay(const fs::path& manifest_path, const std::string& out) {
  const auto man = read_json(manifest_path);
  if (man.value("schema", "") != "lfuse-manifest") throw CliError(kBadInput, manifest_path.string() + ": not an lfuse manifest");
  if (!man.contains("argv") || !man["argv"].is_array()) throw CliError(kBadInput, manifest_path.string() + ": field argv missing");
  auto argv = man["argv"].get<std::vector<std::string>>();
  if (!argv.empty() && argv[0] == "replay") throw CliError(kBadInput, manifest_path.string() + ": cannot replay a replay");
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < argv.size(); ++i)
    if (argv[i] == "--out") {
      argv[i + 1] = out;
      replaced = true;
    }
  if (!replaced) throw CliError(kBadInput, manifest_path.string() + ": recorded command has no --out");
  const int rc = run(argv);
  if (rc == kOk) {
    const auto fresh_path = argv[0] == "train" ? fs::path(out + ".manifest.json")
                          : argv[0] == "bench" ? fs::path(out + ".manifest.json")
                                               : fs::path(out) / "manifest.json";
    if (fs::exists(fresh_path)) {
      const auto fresh = read_json(fresh_path);
      if (fresh.value("config_hash", "") != man.value("config_hash", ""))
        throw CliError(kFailure, "replay resolved a different config (hash " + fresh.value("config_hash", "") + " vs " +
                                     man.value("config_hash", "") + ")");
    }
  }
  return rc;
}

int run(std::vector<std::string> args) {
  CLI::App app{"lfuse: learned GNSS/IMU/chassis fusion pipeline"};
  app.set_version_flag("--version", LFUSE_VERSION);
  app.require_subcommand(1);

  Manifest man;
  man.argv = args;
  int threads = 0;

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate runs and cut segments");
  std::string scenario, sim_out;
  std::optional<std::uint64_t> sim_seed;
  double long_s = 20.0, short_s = 5.0;
  sim_cmd->add_option("--scenario", scenario, "Scenario or generator JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim_out, "Output corpus directory")->required();
  sim_cmd->add_option("--seed", sim_seed, "Override the scenario seed");
  sim_cmd->add_option("--long", long_s, "Long segment duration, s")->capture_default_str();
  sim_cmd->add_option("--short", short_s, "Short segment duration, s")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Run the two-stage training schedule");
  std::string train_corpus, train_out;
  std::optional<std::string> train_config;
  std::optional<double> lr;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> batch;
  std::vector<int> epochs;
  bool resume = false;
  train_cmd->add_option("--corpus", train_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--config", train_config, "Training config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Output checkpoint path")->required();
  train_cmd->add_option("--lr", lr, "Learning rate");
  train_cmd->add_option("--seed", train_seed, "Seed for init, shuffling and dropout");
  train_cmd->add_option("--batch-size", batch, "Segments per optimizer step");
  train_cmd->add_option("--epochs", epochs, "Epochs per stage, in stage order");
  train_cmd->add_option("--threads", threads, "Worker threads (default: LFUSE_THREADS or 1)");
  train_cmd->add_flag("--resume", resume, "Continue from the checkpoint at --out");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate methods on a corpus");
  std::string eval_corpus, eval_out, methods = "gnss,ekf,fused", corpus_name;
  std::optional<std::string> eval_ckpt, eval_config;
  std::optional<double> eval_duration;
  int stride = 1;
  eval_cmd->add_option("--corpus", eval_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", eval_config, "Config JSON (network, ekf sections)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--methods", methods, "Comma-separated subset of gnss,ekf,fused")->capture_default_str();
  eval_cmd->add_option("--stride", stride, "Use every stride-th GNSS frame")->capture_default_str();
  eval_cmd->add_option("--duration", eval_duration, "Only segments of this duration, s");
  eval_cmd->add_option("--name", corpus_name, "Corpus label in reports");
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  eval_cmd->add_option("--threads", threads, "Worker threads (default: LFUSE_THREADS or 1)");

  auto* bench_cmd = app.add_subcommand("bench", "Time update cycles of the learned filter and the EKF");
  std::string bench_ckpt, bench_corpus, segment_id;
  std::optional<std::string> bench_config, bench_out;
  int cycles = 200, warmup = 10;
  bench_cmd->add_option("--checkpoint", bench_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--config", bench_config, "Config JSON (network, ekf sections)")->check(CLI::ExistingFile);
  bench_cmd->add_option("--corpus", bench_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  bench_cmd->add_option("--segment", segment_id, "Segment id (default: first segment of at least 10 cycles)");
  bench_cmd->add_option("--cycles", cycles, "Timed cycles")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", warmup, "Discarded cycles")->capture_default_str()->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--out", bench_out, "Write the JSON result here too");

  auto* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  std::string replay_manifest, replay_out;
  replay_cmd->add_option("--manifest", replay_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", replay_out, "New output path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (threads == 0) threads = default_threads();
  if (threads < 1) throw CliError(kUsage, "--threads must be >= 1");
  man.threads = threads;

  if (*sim_cmd) {
    man.command = "simulate";
    return cmd_simulate(scenario, sim_out, sim_seed, long_s, short_s, man);
  }
  if (*train_cmd) {
    man.command = "train";
    json flags = json::object();
    if (lr) flags["lr"] = *lr;
    if (train_seed) flags["seed"] = *train_seed;
    if (batch) flags["batch_size"] = *batch;
    flags["threads"] = threads;
    if (!epochs.empty()) {
      train::TrainConfig base;
      if (train_config) {
        try {
          base = train::config_from_json(read_json(*train_config));
        } catch (const ParseError& e) {
          throw CliError(kBadInput, *train_config + ": " + e.what());
        }
      }
      if (epochs.size() != base.stages.size())
        throw CliError(kUsage, "--epochs needs one value per stage (" + std::to_string(base.stages.size()) + ")");
      json stages = json::array();
      for (std::size_t i = 0; i < epochs.size(); ++i)
        stages.push_back({{"duration", base.stages[i].duration}, {"epochs", epochs[i]}});
      flags["stages"] = stages;
    }
    std::optional<fs::path> cfg_path;
    if (train_config) cfg_path = *train_config;
    return cmd_train(train_corpus, cfg_path, train_out, flags, resume, man);
  }
  if (*eval_cmd) {
    man.command = "eval";
    std::optional<fs::path> ck, cf;
    if (eval_ckpt) ck = *eval_ckpt;
    if (eval_config) cf = *eval_config;
    return cmd_eval(eval_corpus, ck, cf, methods, stride, eval_duration, corpus_name, eval_out, threads, man);
  }
  if (*bench_cmd) {
    man.command = "bench";
    std::optional<fs::path> cf, o;
    if (bench_config) cf = *bench_config;
    if (bench_out) o = *bench_out;
    return cmd_bench(bench_ckpt, cf, bench_corpus, segment_id, cycles, warmup, o, man);
  }
  return cmd_replay(replay_manifest, replay_out);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNonFinite;
  } catch (const ShapeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIncompatible;
  } catch (const VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIncompatible;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
