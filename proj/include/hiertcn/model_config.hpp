// SPDX-License-Identifier: Apache-2.0
//
// Model configuration: architecture selection, layer shapes, and the
// hierarchy's connection/aggregation modes, with JSON round-tripping and
// parameter-count equalization across architectures.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiertcn/common.hpp"

namespace hiertcn {

enum class Arch { Tcn, Gru, HierGru, HierTcn, Hrnn };
enum class ConnectionMode { Init, Full };
enum class AggMode { Mean, LastHidden };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::Tcn: return "tcn";
    case Arch::Gru: return "gru";
    case Arch::HierGru: return "hiergru";
    case Arch::HierTcn: return "hiertcn";
    case Arch::Hrnn: return "hrnn";
  }
  return "?";
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "tcn") return Arch::Tcn;
  if (s == "gru") return Arch::Gru;
  if (s == "hiergru") return Arch::HierGru;
  if (s == "hiertcn") return Arch::HierTcn;
  if (s == "hrnn") return Arch::Hrnn;
  throw ConfigError("unknown architecture: " + s);
}

inline std::string to_string(ConnectionMode m) {
  return m == ConnectionMode::Init ? "init" : "full";
}

inline ConnectionMode connection_from_string(const std::string& s) {
  if (s == "init") return ConnectionMode::Init;
  if (s == "full") return ConnectionMode::Full;
  throw ConfigError("unknown connection mode: " + s);
}

inline std::string to_string(AggMode m) { return m == AggMode::Mean ? "mean" : "last_hidden"; }

inline AggMode agg_from_string(const std::string& s) {
  if (s == "mean") return AggMode::Mean;
  if (s == "last_hidden") return AggMode::LastHidden;
  throw ConfigError("unknown aggregation mode: " + s);
}

struct ModelConfig {
  Arch arch = Arch::HierTcn;
  std::size_t embed_dim = 16;  // d

  // low level, TCN form
  std::size_t k = 5;
  std::size_t channels = 16;
  std::vector<std::size_t> dilations = {1, 2, 4, 8};

  // low level, GRU form
  std::size_t low_layers = 4;
  std::size_t low_hidden = 16;

  // high level (hierarchical architectures)
  std::size_t high_layers = 4;
  std::size_t high_hidden = 16;
  ConnectionMode connection = ConnectionMode::Full;
  AggMode agg = AggMode::Mean;

  std::size_t head_hidden = 32;
  double dropout = 0.0;
  bool batchnorm = false;
  bool gru_bias = false;

  bool hierarchical() const {
    return arch == Arch::HierGru || arch == Arch::HierTcn || arch == Arch::Hrnn;
  }
  bool low_is_tcn() const { return arch == Arch::Tcn || arch == Arch::HierTcn; }

  // Input width of the low-level model.  Single-level architectures get a
  // session-indicator channel; Full connection concatenates the high state.
  std::size_t low_input_dim() const {
    if (!hierarchical()) return embed_dim + 1;
    return connection == ConnectionMode::Full ? embed_dim + high_hidden : embed_dim;
  }

  std::size_t low_output_dim() const { return low_is_tcn() ? channels : low_hidden; }

  std::size_t high_input_dim() const {
    return agg == AggMode::Mean ? embed_dim : low_hidden;
  }

  void validate() const {
    if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
    if (head_hidden < 1) throw ConfigError("model: head_hidden must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    if (low_is_tcn()) {
      if (k < 1) throw ConfigError("model: filter width k must be >= 1");
      if (channels < 1) throw ConfigError("model: channels must be >= 1");
      if (dilations.empty()) throw ConfigError("model: dilation schedule is empty");
      for (auto d : dilations)
        if (d < 1) throw ConfigError("model: dilation entries must be >= 1");
    } else {
      if (low_layers < 1 || low_hidden < 1)
        throw ConfigError("model: GRU low level needs layers and hidden >= 1");
    }
    if (hierarchical()) {
      if (high_layers < 1 || high_hidden < 1)
        throw ConfigError("model: high level needs layers and hidden >= 1");
      if (agg == AggMode::LastHidden && low_is_tcn())
        throw ConfigError("model: last_hidden aggregation requires a GRU low level");
      if (connection == ConnectionMode::Init) {
        if (low_is_tcn() && high_hidden != embed_dim)
          throw ConfigError("model: init connection with a TCN low level requires "
                            "high_hidden == embed_dim (state becomes the start token)");
        if (!low_is_tcn() && high_hidden != low_hidden)
          throw ConfigError("model: init connection requires high_hidden == low_hidden");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["arch"] = to_string(arch);
    j["embed_dim"] = embed_dim;
    j["k"] = k;
    j["channels"] = channels;
    j["dilations"] = dilations;
    j["low_layers"] = low_layers;
    j["low_hidden"] = low_hidden;
    j["high_layers"] = high_layers;
    j["high_hidden"] = high_hidden;
    j["connection"] = to_string(connection);
    j["agg"] = to_string(agg);
    j["head_hidden"] = head_hidden;
    j["dropout"] = dropout;
    j["batchnorm"] = batchnorm;
    j["gru_bias"] = gru_bias;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      if (j.contains("arch")) c.arch = arch_from_string(j.at("arch").get<std::string>());
      if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<std::size_t>();
      if (j.contains("k")) c.k = j.at("k").get<std::size_t>();
      if (j.contains("channels")) c.channels = j.at("channels").get<std::size_t>();
      if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<std::size_t>>();
      if (j.contains("low_layers")) c.low_layers = j.at("low_layers").get<std::size_t>();
      if (j.contains("low_hidden")) c.low_hidden = j.at("low_hidden").get<std::size_t>();
      if (j.contains("high_layers")) c.high_layers = j.at("high_layers").get<std::size_t>();
      if (j.contains("high_hidden")) c.high_hidden = j.at("high_hidden").get<std::size_t>();
      if (j.contains("connection"))
        c.connection = connection_from_string(j.at("connection").get<std::string>());
      if (j.contains("agg")) c.agg = agg_from_string(j.at("agg").get<std::string>());
      if (j.contains("head_hidden")) c.head_hidden = j.at("head_hidden").get<std::size_t>();
      if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
      if (j.contains("batchnorm")) c.batchnorm = j.at("batchnorm").get<bool>();
      if (j.contains("gru_bias")) c.gru_bias = j.at("gru_bias").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
  }

  std::string canonical_json() const { return to_json().dump(); }
  std::uint64_t fingerprint() const { return fnv1a(canonical_json()); }
};

// Mirrors the published layouts, scaled by width: the single-level TCN
// runs 6 blocks with dilations 1..32; the hierarchical variants pair a
// 4-layer high GRU with a 4-block TCN or 4-layer GRU low level.
inline ModelConfig preset_config(Arch arch, std::size_t d, std::size_t width) {
  ModelConfig c;
  c.arch = arch;
  c.embed_dim = d;
  c.k = 5;
  c.head_hidden = 2 * d;
  switch (arch) {
    case Arch::Tcn:
      c.channels = width;
      c.dilations = {1, 2, 4, 8, 16, 32};
      break;
    case Arch::Gru:
      c.low_layers = 4;
      c.low_hidden = width;
      break;
    case Arch::HierTcn:
      c.channels = width;
      c.dilations = {1, 2, 4, 8};
      c.high_layers = 4;
      c.high_hidden = width;
      c.connection = ConnectionMode::Full;
      c.agg = AggMode::Mean;
      break;
    case Arch::HierGru:
      c.low_layers = 4;
      c.low_hidden = width;
      c.high_layers = 4;
      c.high_hidden = width;
      c.connection = ConnectionMode::Full;
      c.agg = AggMode::Mean;
      break;
    case Arch::Hrnn:
      c.low_layers = 4;
      c.low_hidden = width;
      c.high_layers = 4;
      c.high_hidden = width;
      c.connection = ConnectionMode::Init;
      c.agg = AggMode::LastHidden;
      break;
  }
  c.validate();
  return c;
}

// Trainable parameter count implied by a config (no model instantiation).
inline std::size_t config_param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t bias3 = cfg.gru_bias ? 3 : 0;
  auto gru_count = [&](std::size_t input, std::size_t hidden, std::size_t layers) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = l == 0 ? input : hidden;
      n += 3 * hidden * in + 3 * hidden * hidden + bias3 * hidden;
    }
    return n;
  };
  std::size_t n = 0;
  if (cfg.low_is_tcn()) {
    std::size_t in = cfg.low_input_dim();
    for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
      n += cfg.k * in * cfg.channels;            // conv1
      n += cfg.k * cfg.channels * cfg.channels;  // conv2
      if (in != cfg.channels) n += in * cfg.channels;  // 1x1 skip
      in = cfg.channels;
    }
  } else {
    n += gru_count(cfg.low_input_dim(), cfg.low_hidden, cfg.low_layers);
  }
  if (cfg.hierarchical()) n += gru_count(cfg.high_input_dim(), cfg.high_hidden, cfg.high_layers);
  // head
  n += cfg.head_hidden * cfg.low_output_dim() + cfg.head_hidden;
  n += cfg.embed_dim * cfg.head_hidden + cfg.embed_dim;
  if (cfg.batchnorm) n += 2 * cfg.low_input_dim();
  return n;
}

// Adjusts the width knob (channels or hidden sizes) and then fine-tunes
// head_hidden so the config's parameter count lands within `tol` of
// target.  Mirrors the published protocol of comparing architectures at
// "very similar" parameter counts.
inline ModelConfig equalize_param_count(ModelConfig cfg, std::size_t target, double tol = 0.02) {
  auto with_width = [&](std::size_t w) {
    ModelConfig c = cfg;
    switch (c.arch) {
      case Arch::Tcn:
      case Arch::HierTcn:
        c.channels = w;
        break;
      case Arch::Gru:
        c.low_hidden = w;
        break;
      case Arch::HierGru:
        c.low_hidden = w;
        c.high_hidden = w;
        break;
      case Arch::Hrnn:
        c.low_hidden = w;
        c.high_hidden = w;
        break;
    }
    return c;
  };

  // Coarse: largest width that stays at or under target.
  std::size_t best_w = 1;
  for (std::size_t w = 1; w <= 8192; ++w) {
    ModelConfig c = with_width(w);
    if (config_param_count(c) > target) break;
    best_w = w;
  }
  ModelConfig c = with_width(best_w);

  // Fine: head_hidden moves the count by (low_out + embed + 1) per unit.
  const std::size_t unit = c.low_output_dim() + c.embed_dim + 1;
  const std::size_t have = config_param_count(c);
  if (have < target) {
    const std::size_t extra = (target - have) / unit;
    c.head_hidden += extra;
  }
  c.validate();
  const std::size_t got = config_param_count(c);
  const double rel = got > target ? static_cast<double>(got - target) / target
                                  : static_cast<double>(target - got) / target;
  if (rel > tol)
    throw ConfigError("equalize_param_count: cannot reach target within tolerance for " +
                      to_string(cfg.arch));
  return c;
}

}  // namespace hiertcn
