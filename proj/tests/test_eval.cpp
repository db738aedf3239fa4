#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lfuse/eval.hpp"
#include "lfuse/sim/generate.hpp"
#include "support/builders.hpp"

using namespace lfuse;
using namespace lfuse::eval;

namespace {

ErrorSeries series(std::vector<double> pos, std::vector<double> heading = {}) {
  ErrorSeries s;
  s.pos = pos;
  s.vel.assign(pos.size(), 0.0);
  s.heading = heading.empty() ? std::vector<double>(pos.size(), 0.0) : heading;
  return s;
}

sim::Segment whole(const sim::Run& run) { return sim::cut_segment(run, 0, static_cast<long>(run.truth.size()), run.name); }

fusion::NetworkConfig tiny() {
  fusion::NetworkConfig c;
  c.feature = 4;
  c.hidden = 5;
  c.motion_layers = 3;
  c.motion_tap = 1;
  c.measurement_layers = 2;
  c.classifier_layers = 2;
  c.decoder_layers = 2;
  c.window = 3;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(Rmse, Examples) {
  const auto zero = rmse(series({0, 0, 0}));
  EXPECT_EQ(zero.pos, 0);
  EXPECT_EQ(zero.vel, 0);
  EXPECT_EQ(zero.heading, 0);
  EXPECT_NEAR(rmse(series({3, 4})).pos, std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(rmse(series({0, 0}, {0.1, 2 * std::numbers::pi - 0.1})).heading, 0.1, 1e-12);
  EXPECT_THROW(rmse(ErrorSeries{}), InvalidArgument);
}

TEST(Rmse, ConstantOffsetAndWrapInvariance) {
  EXPECT_NEAR(rmse(series(std::vector<double>(37, 0.42))).pos, 0.42, 1e-15);
  CounterRng rng(3);
  std::vector<double> h(50), shifted(50);
  for (int i = 0; i < 50; ++i) {
    h[i] = rng.uniform(-1, 1);
    shifted[i] = h[i] + (i % 3 == 0 ? 2 * std::numbers::pi : 0.0);
  }
  EXPECT_NEAR(rmse(series(std::vector<double>(50, 0), h)).heading,
              rmse(series(std::vector<double>(50, 0), shifted)).heading, 1e-12);
}

TEST(Rmse, PositionErrorIsPlanarDistance) {
  ErrorSeries s;
  add_error(s, VehicleState(3, 4, 1, 0.2), VehicleState(0, 0, 0.5, 0.1));
  EXPECT_DOUBLE_EQ(s.pos[0], 5.0);
  EXPECT_DOUBLE_EQ(s.vel[0], 0.5);
  EXPECT_NEAR(s.heading[0], 0.1, 1e-15);
}

TEST(Histogram, Examples) {
  const auto h = error_histogram({0.2, 0.7, 5}, {0, 0.5, 1, INFINITY});
  EXPECT_EQ(h.counts, (std::vector<long>{1, 1, 1}));
  EXPECT_EQ(h.overflow, 0);
  EXPECT_EQ(h.total(), 3);
  const auto o = error_histogram({-1, 0.2, 3}, {0, 0.5, 1});
  EXPECT_EQ(o.underflow, 1);
  EXPECT_EQ(o.overflow, 1);
  EXPECT_THROW(error_histogram({1}, {0, 0}), InvalidArgument);
  EXPECT_THROW(error_histogram({1}, {1, 0.5}), InvalidArgument);
}

TEST(Histogram, TotalConserved) {
  CounterRng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(rng.uniform_int(0, 300));
    for (auto& x : v) x = std::abs(rng.normal(0, 2));
    EXPECT_EQ(error_histogram(v, position_edges()).total(), static_cast<long>(v.size()));
  }
}

TEST(Histogram, ExportSchema) {
  const auto run = sim::simulate(sim::random_scenario(3, 20, sim::GnssProfile::clean));
  const auto seg = whole(run);
  auto rep = make_report("ekf", "c", 1, {ekf::run_ekf(seg, {})});
  const auto text = format_histograms({rep});
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# lfuse-histogram 1");
  std::getline(in, line);
  EXPECT_EQ(line, "method\tcorpus\tstride\tquantity\tlower\tupper\tcount");
  long pos_total = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream f(line);
    std::string method, corpus, stride, quantity, lower, upper;
    long count = 0;
    f >> method >> corpus >> stride >> quantity >> lower >> upper >> count;
    ASSERT_FALSE(f.fail()) << line;
    if (quantity == "position") pos_total += count;
  }
  EXPECT_EQ(pos_total, rep.frames);
  EXPECT_GE(rows, static_cast<int>(position_edges().size() + heading_edges().size() - 2));
}

TEST(RawGnss, HoldsLastFixThroughOutage) {
  auto spec = lfuse::testing::straight_with_regimes(
      30, 8.0, {{sim::GnssRegime::clean, 0, 10}, {sim::GnssRegime::outage, 10, 20}, {sim::GnssRegime::clean, 20, 30}});
  const auto run = sim::simulate(spec);
  const auto seg = whole(run);
  const auto tr = run_raw_gnss(seg);
  EXPECT_EQ(tr.method, "gnss");
  // 10 s of outage at 8 m/s: the held fix falls up to 80 m behind
  const auto& late = tr.frames[1999];
  EXPECT_GT(std::hypot(late.pred.x() - late.truth.x(), late.pred.y() - late.truth.y()), 70.0);
  const auto& held = tr.frames[1500].pred;
  EXPECT_EQ(held, tr.frames[1100].pred);
  EXPECT_LT(std::hypot(tr.frames[2100].pred.x() - tr.frames[2100].truth.x(),
                       tr.frames[2100].pred.y() - tr.frames[2100].truth.y()),
            2.0);
}

TEST(RawGnss, StrideHalvesConsumption) {
  const auto seg = whole(sim::simulate(sim::random_scenario(8, 40, sim::GnssProfile::clean)));
  const auto t1 = run_raw_gnss(seg, 1), t2 = run_raw_gnss(seg, 2);
  EXPECT_EQ(t1.gnss_consumed, 201);
  EXPECT_EQ(t2.gnss_consumed, 101);
  const auto e1 = ekf::run_ekf(seg, {}, 1), e2 = ekf::run_ekf(seg, {}, 2);
  EXPECT_EQ(e1.gnss_consumed, 200);
  EXPECT_EQ(e2.gnss_consumed, 100);
}

TEST(CompareMethods, RowsAndOutageOrdering) {
  std::vector<sim::Segment> segs;
  for (int i = 0; i < 2; ++i) {
    auto spec = lfuse::testing::straight_with_regimes(
        30, 10.0, {{sim::GnssRegime::clean, 0, 10}, {sim::GnssRegime::outage, 10, 25}, {sim::GnssRegime::clean, 25, 30}},
        40 + i);
    segs.push_back(whole(sim::simulate(spec)));
  }
  fusion::Model<float> model(tiny());
  model.init(1);
  const auto c = compare_methods(segs, "outage", {}, &model);
  ASSERT_EQ(c.reports.size(), 3u);
  EXPECT_EQ(c.traces.size(), 6u);
  EXPECT_EQ(c.reports[0].method, "gnss");
  EXPECT_EQ(c.reports[1].method, "ekf");
  EXPECT_EQ(c.reports[2].method, "fused");
  EXPECT_GT(c.reports[0].rmse.pos, 10 * c.reports[1].rmse.pos);
  EXPECT_TRUE(std::isnan(c.reports[1].mean_loss));
  EXPECT_FALSE(std::isnan(c.reports[2].mean_loss));
  for (const auto& r : c.reports) EXPECT_EQ(r.pos_hist.total(), r.frames);

  const auto ekf_only = compare_methods(segs, "outage", {}, nullptr, {"ekf"});
  ASSERT_EQ(ekf_only.reports.size(), 1u);
  EXPECT_EQ(ekf_only.reports[0].rmse.pos, c.reports[1].rmse.pos);
  EXPECT_THROW(compare_methods(segs, "x", {}, nullptr, {"fused"}), InvalidArgument);
  EXPECT_THROW(compare_methods(segs, "x", {}, nullptr, {"kalman"}), InvalidArgument);

  const auto again = compare_methods(segs, "outage", {}, &model);
  EXPECT_EQ(format_report(again.reports), format_report(c.reports));
}

TEST(Ablation, OneReportPerStride) {
  const auto seg = whole(sim::simulate(sim::random_scenario(12, 20, sim::GnssProfile::clean)));
  fusion::Model<float> model(tiny());
  model.init(2);
  const auto reps = ablate_update_frequency({seg}, model, {1, 2, 5});
  ASSERT_EQ(reps.size(), 3u);
  EXPECT_EQ(reps[1].stride, 2);
  EXPECT_EQ(reps[2].frames, reps[0].frames);
}

TEST(Report, FormatColumns) {
  MetricReport r;
  r.method = "ekf";
  r.corpus = "clean";
  r.frames = 10;
  r.rmse = {0.5, 0.25, 0.125};
  const auto text = format_report({r});
  EXPECT_EQ(text.rfind("# lfuse-report 1\n", 0), 0u);
  EXPECT_NE(text.find("ekf\tclean\t1\t10\t0.5\t0.25\t0.125\tnan"), std::string::npos) << text;
}

TEST(Latency, Summary) {
  const auto s = summarize_latency({5, 1, 3, 2, 4});
  EXPECT_DOUBLE_EQ(s.median_ms, 3);
  EXPECT_DOUBLE_EQ(s.p95_ms, 4.8);
  EXPECT_EQ(s.cycles, 5);
  EXPECT_THROW(summarize_latency({}), InvalidArgument);
}

TEST(Latency, BenchmarkOrdering) {
  const auto seg = whole(sim::simulate(sim::random_scenario(6, 10, sim::GnssProfile::clean)));
  fusion::Model<float> model(tiny());
  model.init(3);
  const auto r = runtime_benchmark(model, seg, 60, 10);
  EXPECT_EQ(r.fused.cycles, 60);
  EXPECT_EQ(r.ekf.cycles, 60);
  EXPECT_GE(r.fused.p95_ms, r.fused.median_ms);
  EXPECT_GE(r.ekf.p95_ms, r.ekf.median_ms);
}
