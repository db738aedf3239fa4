#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lfuse/fusion/trace_io.hpp"
#include "lfuse/sim/run_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(LFUSE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("lfuse_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const fs::path kSource = LFUSE_SOURCE_DIR;

const char* kTinyConfig = R"({
  "stages": [{"duration": 5, "epochs": 2}, {"duration": 20, "epochs": 1}],
  "lr": 0.003, "batch_size": 4, "seed": 3,
  "network": {"feature": 6, "hidden": 8, "motion_layers": 3, "motion_tap": 1, "measurement_layers": 2,
              "classifier_layers": 2, "decoder_layers": 2, "window": 4, "dropout": 0.1}
})";

/// Small shared corpus plus a trained tiny checkpoint, built once.
class Pipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = scratch("pipeline");
    spit(dir / "gen.json", R"({"generator": {"name": "t", "profile": "mixed", "runs": 1, "duration": 60, "seed": 9}})");
    spit(dir / "tiny.json", kTinyConfig);
    auto r = cli("simulate --scenario " + q(dir / "gen.json") + " --out " + q(dir / "corpus"));
    ASSERT_EQ(r.code, 0) << r.output;
    r = cli("train --corpus " + q(dir / "corpus") + " --config " + q(dir / "tiny.json") + " --out " + q(dir / "model.ckpt"));
    ASSERT_EQ(r.code, 0) << r.output;
  }
};

fs::path Pipeline::dir;

}  // namespace

TEST(CliSimulate, BundledScenarioHasOutage) {
  const auto d = scratch("sim_bundled");
  const auto r = cli("simulate --scenario " + q(kSource / "scenarios/urban_mixed.json") + " --out " + q(d / "out"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto run = lfuse::sim::read_run((d / "out/runs/urban_mixed.run").string());
  int outages = 0;
  for (const auto& i : run.regimes) outages += i.regime == lfuse::sim::GnssRegime::outage;
  EXPECT_GE(outages, 1);
  const auto index = json::parse(slurp(d / "out/segments.json"));
  EXPECT_EQ(index["schema"], "lfuse-segments");
  EXPECT_FALSE(index["segments"].empty());
  const auto man = json::parse(slurp(d / "out/manifest.json"));
  EXPECT_EQ(man["command"], "simulate");
  EXPECT_EQ(man["seed"], 2024);
  EXPECT_EQ(man["config_hash"].get<std::string>().size(), 16u);
}

TEST(CliSimulate, SameSeedIsByteIdentical) {
  const auto d = scratch("sim_repeat");
  const auto s = q(kSource / "scenarios/urban_mixed.json");
  ASSERT_EQ(cli("simulate --scenario " + s + " --seed 5 --out " + q(d / "a")).code, 0);
  ASSERT_EQ(cli("simulate --scenario " + s + " --seed 5 --out " + q(d / "b")).code, 0);
  ASSERT_EQ(cli("simulate --scenario " + s + " --seed 6 --out " + q(d / "c")).code, 0);
  EXPECT_EQ(slurp(d / "a/runs/urban_mixed.run"), slurp(d / "b/runs/urban_mixed.run"));
  EXPECT_EQ(slurp(d / "a/segments.json"), slurp(d / "b/segments.json"));
  EXPECT_NE(slurp(d / "a/runs/urban_mixed.run"), slurp(d / "c/runs/urban_mixed.run"));
}

TEST(CliSimulate, BadScenarioNamesField) {
  const auto d = scratch("sim_bad");
  auto doc = json::parse(slurp(kSource / "scenarios/urban_mixed.json"));
  doc["maneuvers"][1]["kind"] = "hover";
  spit(d / "bad.json", doc.dump());
  auto r = cli("simulate --scenario " + q(d / "bad.json") + " --out " + q(d / "out"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("maneuvers[1].kind"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("bad.json"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(d / "out"));

  spit(d / "gen.json", R"({"generator": {"profile": "foggy"}})");
  r = cli("simulate --scenario " + q(d / "gen.json") + " --out " + q(d / "out"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("generator.profile"), std::string::npos) << r.output;
}

TEST(CliSimulate, UnwritableOutputLeavesNothing) {
  const auto d = scratch("sim_unwritable");
  spit(d / "blocker", "not a directory");
  const auto r = cli("simulate --scenario " + q(kSource / "scenarios/urban_mixed.json") + " --out " + q(d / "blocker/out"));
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_EQ(slurp(d / "blocker"), "not a directory");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d)) ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("simulate").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
  const auto r = cli("simulate --scenario " + q(kSource / "scenarios/urban_mixed.json") + " --out /tmp/x", "LFUSE_THREADS=zero");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("LFUSE_THREADS"), std::string::npos);
}

TEST_F(Pipeline, TrainWritesCheckpointsMetricsAndManifest) {
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "model.ckpt.bin"));
  EXPECT_TRUE(fs::exists(dir / "model.ckpt.stage0"));
  EXPECT_TRUE(fs::exists(dir / "model.ckpt.stage1"));
  const auto ck = json::parse(slurp(dir / "model.ckpt"));
  EXPECT_EQ(ck["mode"], "eval");
  const auto man = json::parse(slurp(dir / "model.ckpt.manifest.json"));
  EXPECT_EQ(man["command"], "train");
  EXPECT_EQ(man["config"]["lr"], 0.003);
  EXPECT_EQ(man["config"]["alpha"], json({1000.0, 1000.0, 1000.0, 100000.0}));
  EXPECT_EQ(man["config"]["beta"], json({1.0, 1.0, 1.0, 10.0}));
  EXPECT_EQ(man["seed"], 3);

  std::ifstream metrics(dir / "model.ckpt.metrics.tsv");
  std::string line;
  int rows = 0;
  while (std::getline(metrics, line))
    if (!line.empty() && line[0] != '#' && line.rfind("stage", 0) != 0) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST_F(Pipeline, TrainIsDeterministicAndThreadIndependent) {
  const auto d = scratch("train_repeat");
  const auto base = "train --corpus " + q(dir / "corpus") + " --config " + q(dir / "tiny.json");
  ASSERT_EQ(cli(base + " --out " + q(d / "a.ckpt")).code, 0);
  ASSERT_EQ(cli(base + " --out " + q(d / "b.ckpt"), "LFUSE_THREADS=2").code, 0);
  EXPECT_EQ(slurp(d / "a.ckpt.bin"), slurp(dir / "model.ckpt.bin"));
  EXPECT_EQ(slurp(d / "b.ckpt.bin"), slurp(dir / "model.ckpt.bin"));
  const auto ma = json::parse(slurp(d / "a.ckpt.manifest.json"));
  const auto mb = json::parse(slurp(d / "b.ckpt.manifest.json"));
  EXPECT_EQ(ma["config_hash"], mb["config_hash"]);
  EXPECT_EQ(mb["threads"], 2);
}

TEST_F(Pipeline, ResumeContinuesWithOptimizerState) {
  const auto d = scratch("train_resume");
  fs::copy_file(dir / "model.ckpt.stage0", d / "m.ckpt");
  fs::copy_file(dir / "model.ckpt.stage0.bin", d / "m.ckpt.bin");
  auto man = json::parse(slurp(d / "m.ckpt"));
  man["mode"] = "train";
  spit(d / "m.ckpt", man.dump(2));
  const auto r = cli("train --corpus " + q(dir / "corpus") + " --config " + q(dir / "tiny.json") + " --out " +
                     q(d / "m.ckpt") + " --resume");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("resuming at stage 1 epoch 0"), std::string::npos) << r.output;
  EXPECT_EQ(slurp(d / "m.ckpt.bin"), slurp(dir / "model.ckpt.bin"));

  man["mode"] = "train";
  spit(d / "m.ckpt", man.dump(2));
  const auto mismatch = cli("train --corpus " + q(dir / "corpus") + " --config " + q(dir / "tiny.json") +
                            " --lr 0.1 --out " + q(d / "m.ckpt") + " --resume");
  EXPECT_EQ(mismatch.code, 5) << mismatch.output;
}

TEST_F(Pipeline, EvalReportsAndTraces) {
  const auto d = scratch("eval");
  auto r = cli("eval --corpus " + q(dir / "corpus") + " --checkpoint " + q(dir / "model.ckpt") + " --duration 20 --out " +
               q(d / "all"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream rep(d / "all/report.tsv");
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(rep, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("method", 0) == 0) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    rows.push_back(cols);
  }
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2][0], "fused");

  double resum = 0.0;
  int traces = 0;
  for (const auto& e : fs::directory_iterator(d / "all/traces/fused")) {
    const auto tr = lfuse::fusion::read_trace(e.path().string());
    for (const auto& f : tr.frames) resum += f.d + f.e + f.f;
    ++traces;
  }
  ASSERT_GT(traces, 0);
  const double mean_loss = std::stod(rows[2][7]);
  EXPECT_NEAR(resum / traces, mean_loss, 1e-6 * std::max(1.0, mean_loss));

  r = cli("eval --corpus " + q(dir / "corpus") + " --methods ekf --stride 2 --out " + q(d / "ekf"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto summary = json::parse(slurp(d / "ekf/summary.json"));
  ASSERT_EQ(summary["reports"].size(), 1u);
  EXPECT_EQ(summary["reports"][0]["method"], "ekf");
  EXPECT_EQ(summary["reports"][0]["stride"], 2);
  EXPECT_EQ(cli("eval --corpus " + q(dir / "corpus") + " --methods ekf,magic --out " + q(d / "x")).code, 2);
  EXPECT_EQ(cli("eval --corpus " + q(dir / "corpus") + " --methods fused --out " + q(d / "x")).code, 2);
}

TEST_F(Pipeline, EvalRejectsArchitectureMismatch) {
  const auto d = scratch("eval_mismatch");
  auto cfg = json::parse(kTinyConfig);
  cfg["network"]["hidden"] = 9;
  spit(d / "other.json", cfg.dump());
  const auto r = cli("eval --corpus " + q(dir / "corpus") + " --checkpoint " + q(dir / "model.ckpt") + " --config " +
                     q(d / "other.json") + " --out " + q(d / "out"));
  EXPECT_EQ(r.code, 5) << r.output;
  EXPECT_NE(r.output.find("architecture"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(d / "out"));
}

TEST_F(Pipeline, BenchReportsBothMethodsAndRefusesTrainMode) {
  const auto d = scratch("bench");
  auto r = cli("bench --checkpoint " + q(dir / "model.ckpt") + " --corpus " + q(dir / "corpus") +
               " --cycles 30 --out " + q(d / "bench.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto b = json::parse(slurp(d / "bench.json"));
  for (const char* m : {"fused", "ekf"}) {
    EXPECT_EQ(b[m]["cycles"], 30);
    EXPECT_GE(b[m]["p95_ms"].get<double>(), b[m]["median_ms"].get<double>());
  }
  EXPECT_TRUE(fs::exists(d / "bench.json.manifest.json"));

  fs::copy_file(dir / "model.ckpt", d / "mid.ckpt");
  fs::copy_file(dir / "model.ckpt.bin", d / "mid.ckpt.bin");
  auto man = json::parse(slurp(d / "mid.ckpt"));
  man["mode"] = "train";
  spit(d / "mid.ckpt", man.dump(2));
  r = cli("bench --checkpoint " + q(d / "mid.ckpt") + " --corpus " + q(dir / "corpus"));
  EXPECT_EQ(r.code, 5) << r.output;
  EXPECT_NE(r.output.find("dropout"), std::string::npos) << r.output;
}

TEST_F(Pipeline, ReplayFromManifestReproducesOutputs) {
  const auto d = scratch("replay");
  auto r = cli("replay --manifest " + q(dir / "corpus/manifest.json") + " --out " + q(d / "corpus"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(d / "corpus/segments.json"), slurp(dir / "corpus/segments.json"));
  r = cli("replay --manifest " + q(dir / "model.ckpt.manifest.json") + " --out " + q(d / "m.ckpt"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(d / "m.ckpt.bin"), slurp(dir / "model.ckpt.bin"));
}
