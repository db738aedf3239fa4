#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfuse/fusion/features.hpp"
#include "lfuse/nn/layers.hpp"

namespace lfuse::fusion {

struct NetworkConfig {
  int feature = 64;  // motion/measurement feature and LSTM widths
  int hidden = 64;   // interior MLP width
  int motion_layers = 7;
  int motion_tap = 4;  // 0-based hidden layer whose activation is the motion feature
  int measurement_layers = 4;
  int classifier_layers = 2;
  int decoder_layers = 3;
  int window = 20;
  double dropout = 0.1;
  /// MotionNet output scaling for (dv, da, domega).
  std::array<double, 3> du_scale{0.1, 1.0, 0.1};

  void validate() const {
    if (feature <= 0 || hidden <= 0) throw InvalidArgument("network widths must be > 0");
    if (motion_layers < 1 || motion_tap < 0 || motion_tap >= motion_layers)
      throw InvalidArgument("network.motion_tap must index one of the motion hidden layers");
    if (measurement_layers < 1 || classifier_layers < 1 || decoder_layers < 1)
      throw InvalidArgument("network layer counts must be >= 1");
    if (window < 1) throw InvalidArgument("network.window must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("network.dropout must be in [0, 1)");
  }

  int fusion_input() const { return feature + window * feature + 4; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline nlohmann::json network_to_json(const NetworkConfig& c) {
  return {{"feature", c.feature},
          {"hidden", c.hidden},
          {"motion_layers", c.motion_layers},
          {"motion_tap", c.motion_tap},
          {"measurement_layers", c.measurement_layers},
          {"classifier_layers", c.classifier_layers},
          {"decoder_layers", c.decoder_layers},
          {"window", c.window},
          {"dropout", c.dropout},
          {"du_scale", c.du_scale}};
}

inline NetworkConfig network_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.feature = j.value("feature", c.feature);
    c.hidden = j.value("hidden", c.hidden);
    c.motion_layers = j.value("motion_layers", c.motion_layers);
    c.motion_tap = j.value("motion_tap", c.motion_tap);
    c.measurement_layers = j.value("measurement_layers", c.measurement_layers);
    c.classifier_layers = j.value("classifier_layers", c.classifier_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.window = j.value("window", c.window);
    c.dropout = j.value("dropout", c.dropout);
    c.du_scale = j.value("du_scale", c.du_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("field network: ") + e.what());
  }
  c.validate();
  return c;
}

/// Parameters and layer layout of MotionNet, MeasurementNet, the validity
/// classifier and FusionNet.
template <typename T>
struct Model {
  NetworkConfig cfg;
  nn::ParamSet<T> params;
  nn::Mlp motion;
  nn::Mlp measurement;
  nn::Lstm measurement_lstm;
  nn::Mlp classifier;
  nn::Mlp encoder;
  nn::Lstm fusion_lstm;
  nn::Mlp decoder;

  Model() : Model(NetworkConfig{}) {}

  explicit Model(const NetworkConfig& c) : cfg(c) {
    cfg.validate();
    std::vector<int> md{kMotionInputs};
    for (int i = 0; i < cfg.motion_layers; ++i) md.push_back(i == cfg.motion_tap ? cfg.feature : cfg.hidden);
    md.push_back(3);
    motion = nn::Mlp::create(params, "motion", md);

    std::vector<int> ed{kMeasurementInputs};
    for (int i = 0; i < cfg.measurement_layers; ++i) ed.push_back(cfg.hidden);
    measurement = nn::Mlp::create(params, "measurement", ed, true);
    measurement_lstm = nn::Lstm::create(params, "measurement.lstm", cfg.hidden, cfg.feature);

    std::vector<int> cd{cfg.feature};
    for (int i = 1; i < cfg.classifier_layers; ++i) cd.push_back(cfg.hidden);
    cd.push_back(3);
    classifier = nn::Mlp::create(params, "classifier", cd);

    encoder = nn::Mlp::create(params, "fusion.encoder", {cfg.fusion_input(), cfg.hidden}, true);
    fusion_lstm = nn::Lstm::create(params, "fusion.lstm", cfg.hidden, cfg.feature);
    std::vector<int> dd{cfg.feature};
    for (int i = 1; i < cfg.decoder_layers; ++i) dd.push_back(cfg.hidden);
    dd.push_back(4);
    decoder = nn::Mlp::create(params, "fusion.decoder", dd);
  }

  Model(const Model& o) : Model(o.cfg) { copy_values_from(o.params); }
  Model& operator=(const Model& o) {
    if (this != &o) {
      if (!(cfg == o.cfg)) throw ShapeMismatch("Model: assignment between different architectures");
      copy_values_from(o.params);
    }
    return *this;
  }

  void init(std::uint64_t seed) {
    CounterRng rng = CounterRng(seed).fork("init");
    motion.init(params, rng);
    measurement.init(params, rng);
    measurement_lstm.init(params, rng);
    classifier.init(params, rng);
    encoder.init(params, rng);
    fusion_lstm.init(params, rng);
    decoder.init(params, rng);
  }

  template <typename U>
  void copy_values_from(const nn::ParamSet<U>& src) {
    if (src.size() != params.size()) throw ShapeMismatch("Model: parameter count mismatch");
    for (int i = 0; i < params.size(); ++i) {
      if (src[i].name != params[i].name || src[i].rows != params[i].rows || src[i].cols != params[i].cols)
        throw ShapeMismatch("Model: parameter " + params[i].name + " does not match " + src[i].name);
      for (std::size_t j = 0; j < params[i].size(); ++j) params[i].values[j] = static_cast<T>(src[i].values[j]);
    }
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(cfg);
    out.copy_values_from(params);
    return out;
  }
};

}  // namespace lfuse::fusion
