// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoint file: versioned header with the config as canonical
// JSON, then named parameter tensors as raw little-endian float32.
// Batch-norm running statistics ride along as extra named tensors so a
// reloaded model serves identically.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hiertcn/io.hpp"
#include "hiertcn/model.hpp"

namespace hiertcn {

inline constexpr char kCheckpointMagic[8] = {'H', 'T', 'C', 'N', 'C', 'K', 'P', '1'};

// Running stats as [T x C] tensors (T may be zero before any training).
inline Tensor<float> bn_stats_tensor(const std::vector<std::vector<float>>& stats,
                                     std::size_t channels) {
  Tensor<float> t({stats.size(), channels});
  for (std::size_t i = 0; i < stats.size(); ++i)
    for (std::size_t c = 0; c < channels; ++c) t.at(i, c) = stats[i][c];
  return t;
}

inline void save_checkpoint(Model<float>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_pod<std::uint32_t>(os, 1);
  io::write_string(os, model.cfg.canonical_json());

  std::vector<std::pair<std::string, Tensor<float>*>> named;
  model.visit([&](const std::string& name, Tensor<float>& t) { named.emplace_back(name, &t); });
  Tensor<float> rm, rv;
  if (model.cfg.batchnorm) {
    rm = bn_stats_tensor(model.bn.run_mean, model.bn.channels);
    rv = bn_stats_tensor(model.bn.run_var, model.bn.channels);
    named.emplace_back("bn.run_mean_stats", &rm);
    named.emplace_back("bn.run_var_stats", &rv);
  }
  io::write_pod<std::uint64_t>(os, named.size());
  for (auto& [name, t] : named) io::write_tensor(os, name, *t);
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

inline Model<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto version = io::read_pod<std::uint32_t>(is, "checkpoint version");
  if (version != 1) throw DataError("unsupported checkpoint version");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(io::read_string(is, "config")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config json in checkpoint: ") + e.what());
  }
  auto model = Model<float>::build(cfg);

  std::map<std::string, Tensor<float>> loaded;
  const auto n = io::read_pod<std::uint64_t>(is, "tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, t] = io::read_tensor(is);
    loaded.emplace(std::move(name), std::move(t));
  }

  model.visit([&](const std::string& name, Tensor<float>& t) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw DataError("checkpoint missing tensor " + name);
    if (it->second.shape != t.shape) throw DataError("checkpoint shape mismatch for " + name);
    t = std::move(it->second);
    loaded.erase(it);
  });
  if (cfg.batchnorm) {
    for (const char* key : {"bn.run_mean_stats", "bn.run_var_stats"}) {
      auto it = loaded.find(key);
      if (it == loaded.end()) throw DataError(std::string("checkpoint missing tensor ") + key);
      const Tensor<float>& t = it->second;
      auto& dst = std::string(key) == "bn.run_mean_stats" ? model.bn.run_mean : model.bn.run_var;
      dst.assign(t.dim(0), std::vector<float>(model.bn.channels));
      for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t c = 0; c < model.bn.channels; ++c) dst[i][c] = t.at(i, c);
      loaded.erase(it);
    }
  }
  if (!loaded.empty()) throw DataError("checkpoint holds unknown tensor " + loaded.begin()->first);
  return model;
}

inline ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  io::read_pod<std::uint32_t>(is, "checkpoint version");
  return ModelConfig::from_json(nlohmann::json::parse(io::read_string(is, "config")));
}

}  // namespace hiertcn
