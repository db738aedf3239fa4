#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lfuse/fusion/episode.hpp"

namespace lfuse::fusion {

inline constexpr int kTraceFormatVersion = 1;

inline const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols = {
      "t",      "truth_x", "truth_y", "truth_v", "truth_psi", "pred_x",    "pred_y",   "pred_v",    "pred_psi",
      "updated", "upd_x",  "upd_y",   "upd_v",   "upd_psi",   "w_x",       "w_y",      "w_v",       "w_psi",
      "r_x",    "r_y",     "r_v",     "r_psi",   "rn_x",      "rn_y",      "rn_v",     "rn_psi",    "logit_pos",
      "logit_vel", "logit_head", "label_pos", "label_vel", "label_head", "regime", "d", "e", "f"};
  return cols;
}

/// Tab-separated trace: a `# lfuse-trace <version> key=value...` line, a column
/// header, then one row per frame. Numbers use 17 significant digits.
inline std::string format_trace(const EpisodeTrace& tr) {
  std::string out = "# lfuse-trace " + std::to_string(kTraceFormatVersion) + " segment=" + tr.segment_id +
                    " method=" + tr.method + " stride=" + std::to_string(tr.stride) +
                    " losses=" + (tr.has_losses ? "1" : "0") + " updates=" + std::to_string(tr.updates) +
                    " dropped_gnss=" + std::to_string(tr.dropped_gnss) + "\n";
  const auto& cols = trace_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "\t" : "") + cols[i];
  out += '\n';
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
    out += '\t';
  };
  for (const auto& f : tr.frames) {
    num(f.t);
    for (double v : f.truth.to_array()) num(v);
    for (double v : f.pred.to_array()) num(v);
    out += f.updated ? "1\t" : "0\t";
    for (double v : f.upd.to_array()) num(v);
    for (double v : f.w) num(v);
    for (double v : f.r) num(v);
    for (double v : f.r_norm) num(v);
    for (double v : f.logits) num(v);
    for (double v : f.labels.as_labels()) num(v);
    out += std::string(sim::to_string(f.regime)) + "\t";
    num(f.d);
    num(f.e);
    std::snprintf(buf, sizeof buf, "%.17g", f.f);
    out += buf;
    out += '\n';
  }
  return out;
}

inline void write_trace(const std::string& path, const EpisodeTrace& tr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << format_trace(tr);
  if (!f) throw Error("write to " + path + " failed");
}

inline EpisodeTrace parse_trace(std::istream& in) {
  EpisodeTrace tr;
  std::string text;
  std::size_t line = 0;
  if (!std::getline(in, text)) throw ParseError("empty trace file");
  ++line;
  {
    std::istringstream hs(text);
    std::string hash, magic;
    int version = 0;
    hs >> hash >> magic >> version;
    if (hash != "#" || magic != "lfuse-trace") throw ParseError("missing lfuse-trace header", line);
    if (version != kTraceFormatVersion) throw VersionError("unsupported trace version " + std::to_string(version), line);
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      if (k == "segment") tr.segment_id = v;
      else if (k == "method") tr.method = v;
      else if (k == "stride") tr.stride = std::stoi(v);
      else if (k == "losses") tr.has_losses = v == "1";
      else if (k == "updates") tr.updates = std::stoi(v);
      else if (k == "dropped_gnss") tr.dropped_gnss = std::stoi(v);
    }
  }
  if (!std::getline(in, text)) throw ParseError("trace lacks a column header", line + 1);
  ++line;
  const std::size_t ncols = trace_columns().size();
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto tab = text.find('\t', start);
      cells.push_back(text.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cells.size() != ncols) throw ParseError("trace row has " + std::to_string(cells.size()) + " columns", line);
    std::size_t c = 0;
    auto num = [&]() {
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing characters");
        ++c;
        return v;
      } catch (const std::exception&) {
        throw ParseError("bad number in column " + trace_columns()[c], line);
      }
    };
    auto state = [&]() {
      const double x = num(), y = num(), v = num(), p = num();
      return VehicleState(x, y, v, p);
    };
    TraceFrame f;
    f.t = num();
    f.truth = state();
    f.pred = state();
    f.updated = num() != 0.0;
    f.upd = state();
    for (auto& v : f.w) v = num();
    for (auto& v : f.r) v = num();
    for (auto& v : f.r_norm) v = num();
    for (auto& v : f.logits) v = num();
    f.labels.position = num() != 0.0;
    f.labels.velocity = num() != 0.0;
    f.labels.heading = num() != 0.0;
    const auto reg = sim::regime_from_string(cells[c++]);
    if (!reg) throw ParseError("unknown regime in trace", line);
    f.regime = *reg;
    f.d = num();
    f.e = num();
    f.f = num();
    tr.frames.push_back(f);
  }
  return tr;
}

inline EpisodeTrace read_trace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return parse_trace(f);
}

}  // namespace lfuse::fusion
