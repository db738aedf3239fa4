#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfuse/nn/optim.hpp"

namespace lfuse::nn {

inline constexpr int kCheckpointVersion = 1;

/// Everything stored next to the weights.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string mode = "eval";  // "train" while a schedule is still running
  nlohmann::json network = nlohmann::json::object();
  nlohmann::json progress = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

inline void append_floats(std::string& blob, const Buffer<float>& v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");
  const auto* p = reinterpret_cast<const char*>(v.data());
  blob.append(p, v.size() * sizeof(float));
}

}  // namespace detail

/// Writes `<path>` (JSON manifest) and `<path>.bin` (little-endian float32
/// values, then Adam moments when `opt` is given).
inline void save_checkpoint(const std::string& path, const ParamSet<float>& ps, const CheckpointMeta& meta,
                            const OptimizerState* opt = nullptr) {
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, int rows, int cols, const Buffer<float>& v) {
    tensors.push_back({{"name", name}, {"shape", {rows, cols}}, {"offset", blob.size()}});
    detail::append_floats(blob, v);
  };
  for (const auto& p : ps) put(p.name, p.rows, p.cols, p.values);
  if (opt) {
    if (opt->m.size() != static_cast<std::size_t>(ps.size())) throw ShapeMismatch("save_checkpoint: optimizer state does not match parameters");
    for (int i = 0; i < ps.size(); ++i) put("adam.m/" + ps[i].name, ps[i].rows, ps[i].cols, opt->m[i]);
    for (int i = 0; i < ps.size(); ++i) put("adam.v/" + ps[i].name, ps[i].rows, ps[i].cols, opt->v[i]);
  }
  nlohmann::json man = {{"format", "lfuse-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"seed", meta.seed},
                        {"mode", meta.mode},
                        {"network", meta.network},
                        {"progress", meta.progress},
                        {"extra", meta.extra},
                        {"blob", std::string(std::filesystem::path(path).filename()) + ".bin"},
                        {"blob_bytes", blob.size()},
                        {"tensors", tensors}};
  if (opt) {
    man["optimizer"] = {{"lr", opt->cfg.lr},           {"beta1", opt->cfg.beta1},
                        {"beta2", opt->cfg.beta2},     {"eps", opt->cfg.eps},
                        {"weight_decay", opt->cfg.weight_decay}, {"step", opt->step}};
  }
  {
    std::ofstream b(path + ".bin.tmp", std::ios::binary);
    if (!b) throw Error("cannot open " + path + ".bin.tmp for writing");
    b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!b) throw Error("write to " + path + ".bin.tmp failed");
  }
  {
    std::ofstream m(path + ".tmp");
    if (!m) throw Error("cannot open " + path + ".tmp for writing");
    m << man.dump(2) << '\n';
    if (!m) throw Error("write to " + path + ".tmp failed");
  }
  std::filesystem::rename(path + ".bin.tmp", path + ".bin");
  std::filesystem::rename(path + ".tmp", path);
}

inline nlohmann::json read_checkpoint_manifest(const std::string& path) {
  std::ifstream m(path);
  if (!m) throw Error("cannot open checkpoint " + path);
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(m);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  if (!man.is_object() || man.value("format", "") != "lfuse-checkpoint")
    throw ParseError("checkpoint " + path + ": not an lfuse checkpoint manifest");
  if (man.value("version", -1) != kCheckpointVersion)
    throw VersionError("checkpoint " + path + ": unsupported version " + man["version"].dump());
  return man;
}

/// Loads values into `ps`, whose names and shapes must match the manifest
/// exactly. Restores Adam moments into `opt` when both sides have them.
inline CheckpointMeta load_checkpoint(const std::string& path, ParamSet<float>& ps, OptimizerState* opt = nullptr) {
  const auto man = read_checkpoint_manifest(path);
  std::ifstream b(path + ".bin", std::ios::binary);
  if (!b) throw Error("cannot open checkpoint blob " + path + ".bin");
  std::string blob((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  if (blob.size() != man.at("blob_bytes").get<std::size_t>())
    throw ParseError("checkpoint " + path + ": blob size does not match manifest");

  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : man.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  auto read = [&](const std::string& name, int rows, int cols, Buffer<float>& dst) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw ShapeMismatch("checkpoint " + path + ": missing tensor " + name);
    const auto shape = it->second.at("shape");
    if (shape.at(0).get<int>() != rows || shape.at(1).get<int>() != cols)
      throw ShapeMismatch("checkpoint " + path + ": tensor " + name + " has shape " + shape.dump() + ", expected [" +
                          std::to_string(rows) + "," + std::to_string(cols) + "]");
    const auto off = it->second.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(rows) * cols * sizeof(float);
    if (off + bytes > blob.size()) throw ParseError("checkpoint " + path + ": tensor " + name + " overruns the blob");
    dst.resize(static_cast<std::size_t>(rows) * cols);
    std::memcpy(dst.data(), blob.data() + off, bytes);
  };
  for (auto& p : ps) read(p.name, p.rows, p.cols, p.values);
  for (const auto& [name, e] : entries)
    if (name.rfind("adam.", 0) != 0 && ps.index_of(name) < 0)
      throw ShapeMismatch("checkpoint " + path + ": unexpected tensor " + name);
  if (opt && man.contains("optimizer")) {
    const auto& o = man["optimizer"];
    opt->cfg.lr = o.at("lr").get<double>();
    opt->cfg.beta1 = o.at("beta1").get<double>();
    opt->cfg.beta2 = o.at("beta2").get<double>();
    opt->cfg.eps = o.at("eps").get<double>();
    opt->cfg.weight_decay = o.at("weight_decay").get<double>();
    opt->step = o.at("step").get<long>();
    opt->m.assign(ps.size(), {});
    opt->v.assign(ps.size(), {});
    for (int i = 0; i < ps.size(); ++i) {
      read("adam.m/" + ps[i].name, ps[i].rows, ps[i].cols, opt->m[i]);
      read("adam.v/" + ps[i].name, ps[i].rows, ps[i].cols, opt->v[i]);
    }
  }
  CheckpointMeta meta;
  meta.seed = man.value("seed", std::uint64_t{0});
  meta.mode = man.value("mode", std::string("eval"));
  meta.network = man.value("network", nlohmann::json::object());
  meta.progress = man.value("progress", nlohmann::json::object());
  meta.extra = man.value("extra", nlohmann::json::object());
  return meta;
}

}  // namespace lfuse::nn
