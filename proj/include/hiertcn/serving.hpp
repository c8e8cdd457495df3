// SPDX-License-Identifier: Apache-2.0
#pragma once

// Online inference: a per-user hidden-state cache with open-session
// buffers.  Streaming interactions through the engine and querying it at
// any point reproduces the offline forward pass on the same log — session
// closes happen lazily when a gap exceeds the idle threshold, exactly as
// offline sessionization would split the stream.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <hiertcn/checkpoint.hpp>
#include <hiertcn/io.hpp>
#include <hiertcn/model.hpp>

namespace hiertcn {

inline constexpr char kSnapshotMagic[8] = {'H', 'T', 'C', 'N', 'U', 'S', 'C', '1'};

struct RecommendationResponse {
  std::vector<ScoredItem> items;  // descending score, ties by ascending id
  std::uint64_t model_version = 0;
  std::uint64_t state_version = 0;  // user-state version the scores consumed
  bool cold_user = false;
};

struct UserStateStats {
  std::uint64_t closed_sessions = 0;
  std::size_t open_events = 0;
  std::uint64_t state_version = 0;
  std::int64_t last_activity = 0;
};

class ServingEngine {
 public:
  ServingEngine(Model<float> model, const EmbeddingSource<float>& emb,
                std::int64_t idle_threshold_seconds = 1800)
      : emb_(&emb), idle_(idle_threshold_seconds) {
    if (idle_ <= 0) throw ConfigError("serving: idle threshold must be > 0");
    install(std::move(model));
  }

  // Atomic checkpoint swap; cached high states must stay compatible.
  void swap_model(Model<float> model) { install(std::move(model)); }

  std::uint64_t model_version() const {
    std::lock_guard<std::mutex> lk(model_mu_);
    return model_version_;
  }

  std::int64_t idle_threshold() const { return idle_; }

  void on_interaction(std::uint64_t user, std::uint64_t item, std::int64_t timestamp) {
    if (!emb_->has(item))
      throw DataError("serving: unknown item id " + std::to_string(item));
    auto model = current_model();
    Entry& e = entry_for(user, *model);
    std::lock_guard<std::mutex> lk(e.mu);
    if (e.touched && timestamp < e.last_activity)
      throw DataError("serving: timestamp regression for user " + std::to_string(user));
    if (!e.open.empty() && timestamp - e.last_activity > idle_) close_locked(*model, e);
    e.open.push_back(item);
    e.last_activity = timestamp;
    e.touched = true;
    ++e.version;
  }

  // Read-only: concurrent calls for one user see the same state.
  RecommendationResponse recommend(std::uint64_t user,
                                   const std::vector<std::uint64_t>& candidates,
                                   std::size_t k) const {
    auto model = current_model();
    RecommendationResponse r;
    r.model_version = model->cfg.fingerprint();
    GruStates<float> high = model->initial_high_state();
    std::vector<std::uint64_t> open;
    {
      std::shared_lock<std::shared_mutex> map_lk(map_mu_);
      auto it = users_.find(user);
      if (it == users_.end()) {
        r.cold_user = true;  // unknown user: zero state, empty session
      } else {
        std::lock_guard<std::mutex> lk(it->second->mu);
        high = it->second->high;
        open = it->second->open;
        r.state_version = it->second->version;
      }
    }
    auto u = model->low_forward(open, *emb_, high);
    std::vector<float> uh(model->cfg.embed_dim);
    for (std::size_t c = 0; c < uh.size(); ++c) uh[c] = u.at(open.size(), c);
    r.items = rank_candidates(uh, candidates, *emb_, k);
    return r;
  }

  // Closes every open session idle past the threshold.  Idempotent: a
  // closed session cannot close again.
  std::size_t close_idle_sessions(std::int64_t now) {
    auto model = current_model();
    std::size_t closed = 0;
    std::shared_lock<std::shared_mutex> map_lk(map_mu_);
    for (auto& [uid, e] : users_) {
      std::lock_guard<std::mutex> lk(e->mu);
      if (!e->open.empty() && now - e->last_activity > idle_) {
        close_locked(*model, *e);
        ++closed;
      }
    }
    return closed;
  }

  UserStateStats user_stats(std::uint64_t user) const {
    std::shared_lock<std::shared_mutex> map_lk(map_mu_);
    auto it = users_.find(user);
    if (it == users_.end()) return {};
    std::lock_guard<std::mutex> lk(it->second->mu);
    return {it->second->closed_sessions, it->second->open.size(), it->second->version,
            it->second->last_activity};
  }

  std::size_t cached_users() const {
    std::shared_lock<std::shared_mutex> map_lk(map_mu_);
    return users_.size();
  }

  // ---- persistence ----

  void save_snapshot(const std::string& path) const {
    auto model = current_model();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kSnapshotMagic, 8);
    io::write_pod<std::uint64_t>(out, model->cfg.fingerprint());
    std::shared_lock<std::shared_mutex> map_lk(map_mu_);
    io::write_pod<std::uint64_t>(out, users_.size());
    for (const auto& [uid, e] : users_) {
      std::lock_guard<std::mutex> lk(e->mu);
      io::write_pod<std::uint64_t>(out, uid);
      io::write_pod<std::int64_t>(out, e->last_activity);
      io::write_pod<std::uint64_t>(out, e->closed_sessions);
      io::write_pod<std::uint64_t>(out, e->version);
      io::write_pod<std::uint8_t>(out, e->touched ? 1 : 0);
      io::write_pod<std::uint64_t>(out, e->open.size());
      for (auto id : e->open) io::write_pod<std::uint64_t>(out, id);
      io::write_pod<std::uint64_t>(out, e->high.size());
      for (const auto& layer : e->high) {
        io::write_pod<std::uint64_t>(out, layer.size());
        out.write(reinterpret_cast<const char*>(layer.data()),
                  static_cast<std::streamsize>(layer.size() * sizeof(float)));
      }
    }
    if (!out) throw DataError("short write to " + path);
  }

  void load_snapshot(const std::string& path) {
    auto model = current_model();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kSnapshotMagic, 8) != 0)
      throw DataError("not a user-state snapshot: " + path);
    const auto fp = io::read_pod<std::uint64_t>(in, "snapshot model fingerprint");
    if (fp != model->cfg.fingerprint())
      throw ConfigError("snapshot belongs to a different model configuration");
    const auto n = io::read_pod<std::uint64_t>(in, "snapshot user count");
    std::unique_lock<std::shared_mutex> map_lk(map_mu_);
    users_.clear();
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto uid = io::read_pod<std::uint64_t>(in, "snapshot user id");
      auto e = std::make_unique<Entry>();
      e->last_activity = io::read_pod<std::int64_t>(in, "snapshot last activity");
      e->closed_sessions = io::read_pod<std::uint64_t>(in, "snapshot session count");
      e->version = io::read_pod<std::uint64_t>(in, "snapshot state version");
      e->touched = io::read_pod<std::uint8_t>(in, "snapshot touch flag") != 0;
      const auto n_open = io::read_pod<std::uint64_t>(in, "snapshot open length");
      e->open.resize(n_open);
      for (auto& id : e->open) id = io::read_pod<std::uint64_t>(in, "snapshot open item");
      const auto layers = io::read_pod<std::uint64_t>(in, "snapshot state layers");
      e->high.resize(layers);
      for (auto& layer : e->high) {
        const auto len = io::read_pod<std::uint64_t>(in, "snapshot state width");
        layer.resize(len);
        in.read(reinterpret_cast<char*>(layer.data()),
                static_cast<std::streamsize>(len * sizeof(float)));
        if (!in) throw DataError("truncated snapshot: " + path);
      }
      auto zero = model->initial_high_state();
      if (e->high.size() != zero.size() ||
          (!e->high.empty() && e->high[0].size() != zero[0].size()))
        throw DataError("snapshot state dimension does not match the model");
      users_.emplace(uid, std::move(e));
    }
  }

 private:
  struct Entry {
    GruStates<float> high;
    std::int64_t last_activity = 0;
    bool touched = false;
    std::vector<std::uint64_t> open;
    std::uint64_t closed_sessions = 0;
    std::uint64_t version = 0;
    mutable std::mutex mu;
  };

  void install(Model<float> model) {
    model.cfg.validate();
    if (!model.cfg.hierarchical())
      throw ConfigError(
          "serving: single-level checkpoints have no cacheable user state; "
          "load a hierarchical model");
    if (model.cfg.embed_dim != emb_->dim())
      throw ConfigError("serving: checkpoint embedding dim does not match the table");
    std::lock_guard<std::mutex> lk(model_mu_);
    if (model_ != nullptr &&
        (model_->cfg.high_layers != model.cfg.high_layers ||
         model_->cfg.high_hidden != model.cfg.high_hidden))
      throw ConfigError("serving: swapped checkpoint changes the high-state shape");
    model_ = std::make_shared<const Model<float>>(std::move(model));
    model_version_ = model_->cfg.fingerprint();
  }

  std::shared_ptr<const Model<float>> current_model() const {
    std::lock_guard<std::mutex> lk(model_mu_);
    return model_;
  }

  Entry& entry_for(std::uint64_t user, const Model<float>& model) {
    {
      std::shared_lock<std::shared_mutex> lk(map_mu_);
      auto it = users_.find(user);
      if (it != users_.end()) return *it->second;
    }
    std::unique_lock<std::shared_mutex> lk(map_mu_);
    auto it = users_.find(user);
    if (it == users_.end()) {
      auto e = std::make_unique<Entry>();
      e->high = model.initial_high_state();  // first contact: zero state
      it = users_.emplace(user, std::move(e)).first;
    }
    return *it->second;
  }

  // One closed session advances the high state by exactly one update.
  void close_locked(const Model<float>& model, Entry& e) {
    std::vector<float> final_hidden;
    if (model.cfg.agg == AggMode::LastHidden)
      model.low_forward(e.open, *emb_, e.high, &final_hidden);
    model.advance_high(e.high, e.open, *emb_, final_hidden);
    e.open.clear();
    ++e.closed_sessions;
    ++e.version;
  }

  mutable std::shared_mutex map_mu_;
  std::unordered_map<std::uint64_t, std::unique_ptr<Entry>> users_;
  mutable std::mutex model_mu_;
  std::shared_ptr<const Model<float>> model_;
  std::uint64_t model_version_ = 0;
  const EmbeddingSource<float>* emb_;
  std::int64_t idle_ = 1800;
};

}  // namespace hiertcn
