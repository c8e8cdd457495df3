// SPDX-License-Identifier: Apache-2.0
//
// Replay evaluation: every test interaction is scored once against a
// candidate pool assembled by the configured strategy, with the model
// (or baseline) conditioned only on the user's earlier history.  The
// run is deterministic for a fixed checkpoint, dataset, and config —
// per-target sampling is keyed by (seed, user, index) so neither user
// order nor thread count changes a single rank.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <thread>
#include <unordered_set>
#include <vector>

#include "hiertcn/baselines.hpp"
#include "hiertcn/interactions.hpp"
#include "hiertcn/metrics.hpp"
#include "hiertcn/model.hpp"
#include "hiertcn/rng.hpp"

namespace hiertcn {

struct EvalTarget {
  std::uint64_t item = 0;
  std::int64_t timestamp = 0;
  std::vector<std::uint64_t> negatives;  // impression candidates, may be empty
  SegmentKey segment;
};

struct EvalUser {
  std::uint64_t user = 0;
  SessionizedHistory sessions;        // item IDs per session
  std::vector<EvalTarget> targets;    // flattened, chronological
};

inline std::vector<EvalUser> build_eval_users(const std::vector<Interaction>& log,
                                              std::int64_t idle_threshold_seconds = 1800) {
  std::vector<EvalUser> out;
  for (auto& [uid, evs] : group_by_user(log)) {
    auto us = segment_sessions(evs, idle_threshold_seconds);
    if (us.sessions.empty()) continue;
    EvalUser eu;
    eu.user = uid;
    eu.sessions = to_history(evs, us);
    auto train = to_train_sessions(evs, us);
    std::size_t history = 0;
    std::int64_t prev_session_end = 0;
    for (std::size_t s = 0; s < us.sessions.size(); ++s) {
      for (std::size_t e = 0; e < us.sessions[s].size(); ++e) {
        const auto& rec = evs[us.sessions[s][e]];
        EvalTarget t;
        t.item = rec.item;
        t.timestamp = rec.timestamp;
        t.negatives = train[s].events[e].negatives;
        t.segment.history_len = history++;
        t.segment.pos_in_session = e;
        t.segment.gap_seconds = (s == 0 || e != 0) ? -1 : rec.timestamp - prev_session_end;
        eu.targets.push_back(std::move(t));
      }
      prev_session_end = evs[us.sessions[s].back()].timestamp;
    }
    out.push_back(std::move(eu));
  }
  return out;
}

enum class PoolKind { Impressions, FullCatalog, UniformSample };

struct EvalConfig {
  PoolKind pool = PoolKind::Impressions;
  std::size_t sample_size = 50;  // for UniformSample, ground truth included
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

// Scores one user's targets; fresh instance per worker chunk.
class UserScorer {
 public:
  virtual ~UserScorer() = default;
  virtual void begin_user(const EvalUser&) {}
  // Scores for the pool candidates of target t, in pool order.
  virtual std::vector<double> score(std::size_t t, const std::vector<std::uint64_t>& pool) = 0;
  // Called after target t is scored, before the next one.
  virtual void observe(std::size_t) {}
};

using ScorerFactory = std::function<std::unique_ptr<UserScorer>()>;

// Trained-model scorer: one causal forward per user, then dot products.
class ModelScorer final : public UserScorer {
 public:
  ModelScorer(const Model<float>& model, const EmbeddingSource<float>& emb)
      : model_(model), emb_(emb) {}

  void begin_user(const EvalUser& u) override { rows_ = model_.forward_user(u.sessions, emb_); }

  std::vector<double> score(std::size_t t, const std::vector<std::uint64_t>& pool) override {
    std::vector<double> out(pool.size());
    const float* u = &rows_.v[t * rows_.dim(1)];
    for (std::size_t i = 0; i < pool.size(); ++i)
      out[i] = score_dot(u, emb_.row(pool[i]), rows_.dim(1));
    return out;
  }

 private:
  static double score_dot(const float* a, const float* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(a[c]) * b[c];
    return s;
  }
  const Model<float>& model_;
  const EmbeddingSource<float>& emb_;
  Tensor<float> rows_;
};

// Mean-vector baseline over the recent-item pool.
class MvScorer final : public UserScorer {
 public:
  MvScorer(const EmbeddingSource<float>& emb, std::size_t pool_k = 20)
      : emb_(emb), pool_k_(pool_k) {}

  void begin_user(const EvalUser& u) override {
    user_ = &u;
    pool_ = std::make_unique<RecentPool<float>>(emb_.dim(), pool_k_);
  }

  std::vector<double> score(std::size_t, const std::vector<std::uint64_t>& pool) override {
    auto u = mv_predict(*pool_);
    std::vector<double> out(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const float* x = emb_.row(pool[i]);
      double s = 0.0;
      for (std::size_t c = 0; c < emb_.dim(); ++c) s += static_cast<double>(u[c]) * x[c];
      out[i] = s;
    }
    return out;
  }

  void observe(std::size_t t) override {
    if (emb_.has(user_->targets[t].item)) pool_->push(emb_.row(user_->targets[t].item));
  }

 private:
  const EmbeddingSource<float>& emb_;
  std::size_t pool_k_;
  const EvalUser* user_ = nullptr;
  std::unique_ptr<RecentPool<float>> pool_;
};

// Max-dot baseline over the recent-item pool.
class MaxItemScorer final : public UserScorer {
 public:
  MaxItemScorer(const EmbeddingSource<float>& emb, std::size_t pool_k = 20)
      : emb_(emb), pool_k_(pool_k) {}

  void begin_user(const EvalUser& u) override {
    user_ = &u;
    pool_ = std::make_unique<RecentPool<float>>(emb_.dim(), pool_k_);
  }

  std::vector<double> score(std::size_t, const std::vector<std::uint64_t>& pool) override {
    std::vector<double> out(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) out[i] = maxitem_score(emb_.row(pool[i]), *pool_);
    return out;
  }

  void observe(std::size_t t) override {
    if (emb_.has(user_->targets[t].item)) pool_->push(emb_.row(user_->targets[t].item));
  }

 private:
  const EmbeddingSource<float>& emb_;
  std::size_t pool_k_;
  const EvalUser* user_ = nullptr;
  std::unique_ptr<RecentPool<float>> pool_;
};

namespace detail {

// Pool for one target: ground truth first, then the other candidates.
// Empty pool (apart from the ground truth) means skip.
inline std::vector<std::uint64_t> assemble_pool(const EvalConfig& cfg, const EvalUser& u,
                                                std::size_t t,
                                                const std::vector<std::uint64_t>& catalog,
                                                const EmbeddingSource<float>& emb) {
  const auto& target = u.targets[t];
  if (!emb.has(target.item)) return {};
  std::vector<std::uint64_t> pool = {target.item};
  switch (cfg.pool) {
    case PoolKind::Impressions:
      for (auto id : target.negatives)
        if (emb.has(id)) pool.push_back(id);
      if (pool.size() == 1) return {};  // no impressions recorded
      break;
    case PoolKind::FullCatalog:
      for (auto id : catalog)
        if (id != target.item) pool.push_back(id);
      break;
    case PoolKind::UniformSample: {
      require(cfg.sample_size >= 2, "eval: sample pool needs at least 2 candidates");
      require(catalog.size() >= cfg.sample_size, "eval: catalog smaller than the sample pool");
      Rng rng = Rng(cfg.seed).split(mix64(u.user * 0x9e3779b9u + t));
      std::unordered_set<std::uint64_t> drawn = {target.item};
      while (pool.size() < cfg.sample_size) {
        const std::uint64_t id = catalog[rng.below(catalog.size())];
        if (drawn.insert(id).second) pool.push_back(id);
      }
      break;
    }
  }
  return pool;
}

// Integer per-target outcomes; metric folding happens once, serially,
// in canonical user order, so the report is bit-identical for any
// thread count.
struct ScoredTarget {
  std::size_t rank = 0;
  std::size_t pool = 0;
  SegmentKey segment;
};

struct ChunkResult {
  std::vector<ScoredTarget> scored;
  std::size_t skipped = 0;
};

inline void eval_chunk(const ScorerFactory& factory, const std::vector<EvalUser>& users,
                       std::size_t lo, std::size_t hi, const EvalConfig& cfg,
                       const std::vector<std::uint64_t>& catalog,
                       const EmbeddingSource<float>& emb, ChunkResult& out) {
  auto scorer = factory();
  for (std::size_t ui = lo; ui < hi; ++ui) {
    const auto& u = users[ui];
    scorer->begin_user(u);
    for (std::size_t t = 0; t < u.targets.size(); ++t) {
      auto pool = assemble_pool(cfg, u, t, catalog, emb);
      if (pool.empty()) {
        ++out.skipped;
        scorer->observe(t);
        continue;
      }
      auto scores = scorer->score(t, pool);
      require_shape(scores.size() == pool.size(), "eval: scorer returned a wrong-size vector");
      out.scored.push_back({pessimistic_rank(scores, 0), pool.size(), u.targets[t].segment});
      scorer->observe(t);
    }
  }
}

}  // namespace detail

inline MetricsReport evaluate(const ScorerFactory& factory, const std::vector<EvalUser>& users,
                              const EmbeddingSource<float>& emb, const EvalConfig& cfg) {
  const auto catalog = emb.ids();
  const std::size_t n_threads = std::max<std::size_t>(1, cfg.threads);
  const std::size_t chunks = std::max<std::size_t>(1, std::min(n_threads, users.size()));
  std::vector<detail::ChunkResult> parts(chunks);
  const std::size_t per = (users.size() + chunks - 1) / chunks;
  if (chunks == 1) {
    detail::eval_chunk(factory, users, 0, users.size(), cfg, catalog, emb, parts[0]);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t lo = c * per, hi = std::min(users.size(), lo + per);
      if (lo >= hi) break;
      workers.emplace_back([&, lo, hi, c] {
        detail::eval_chunk(factory, users, lo, hi, cfg, catalog, emb, parts[c]);
      });
    }
    for (auto& w : workers) w.join();
  }
  MetricsReport report;
  for (const auto& p : parts) {
    report.skipped += p.skipped;
    for (const auto& s : p.scored) report.add(s.rank, s.pool, s.segment);
  }
  return report;
}

}  // namespace hiertcn
