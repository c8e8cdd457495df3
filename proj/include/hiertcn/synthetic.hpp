// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-session dataset generator.  Each user carries a
// long-term interest vector evolving across sessions as a stationary
// AR(1) walk; a session's interest mixes that vector with fresh noise,
// events pick the catalog item nearest the session interest (plus
// per-event jitter), and every event records impressions: the positive
// plus negatives drawn near other interests, so pools look like items a
// production ranker might have served.  Deterministic under the seed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "hiertcn/embedding_table.hpp"
#include "hiertcn/embeddings.hpp"
#include "hiertcn/interactions.hpp"
#include "hiertcn/rng.hpp"

namespace hiertcn {

struct SyntheticConfig {
  std::size_t users = 1000;
  std::size_t catalog = 500;
  std::size_t embed_dim = 16;
  double mean_sessions = 3.9;     // per user
  double mean_events = 2.4;       // per session
  double mean_impressions = 9.8;  // per event, including the positive
  double std_sessions = 4.7;      // count spreads; std <= sqrt(mean) falls
  double std_events = 3.0;        //   back to plain Poisson
  double std_impressions = 8.6;
  double rho = 0.8;               // long-term AR(1) coefficient
  double session_noise = 0.5;     // fresh per-session interest noise
  double placement_noise = 0.3;   // per-event draw jitter
  std::int64_t start_time = 1600000000;
  std::int64_t event_spacing = 60;      // seconds between a session's events
  std::int64_t session_spacing = 7200;  // seconds from a session's end to the next start
  std::uint64_t seed = 1;

  void validate() const {
    if (users == 0 || catalog == 0 || embed_dim == 0)
      throw ConfigError("synthetic: users, catalog, and embed_dim must be positive");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("synthetic: rho must lie in [0,1)");
    if (mean_sessions < 1.0) throw ConfigError("synthetic: mean_sessions must be >= 1");
    if (mean_events < 1.0) throw ConfigError("synthetic: mean_events must be >= 1");
    if (mean_impressions < 2.0) throw ConfigError("synthetic: mean_impressions must be >= 2");
    if (mean_impressions > static_cast<double>(catalog) / 2.0)
      throw ConfigError("synthetic: impressions too large for the catalog");
    if (session_spacing <= 1800)
      throw ConfigError("synthetic: session_spacing must exceed the 1800 s idle threshold");
    if (event_spacing <= 0 || event_spacing > 1800)
      throw ConfigError("synthetic: event_spacing must lie in (0, 1800]");
    if (session_noise < 0.0 || placement_noise < 0.0)
      throw ConfigError("synthetic: noise scales must be non-negative");
    if (std_sessions < 0.0 || std_events < 0.0 || std_impressions < 0.0)
      throw ConfigError("synthetic: count spreads must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"users", users},
            {"catalog", catalog},
            {"embed_dim", embed_dim},
            {"mean_sessions", mean_sessions},
            {"mean_events", mean_events},
            {"mean_impressions", mean_impressions},
            {"std_sessions", std_sessions},
            {"std_events", std_events},
            {"std_impressions", std_impressions},
            {"rho", rho},
            {"session_noise", session_noise},
            {"placement_noise", placement_noise},
            {"start_time", start_time},
            {"event_spacing", event_spacing},
            {"session_spacing", session_spacing},
            {"seed", seed}};
  }

  static SyntheticConfig from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    try {
      c.users = j.value("users", c.users);
      c.catalog = j.value("catalog", c.catalog);
      c.embed_dim = j.value("embed_dim", c.embed_dim);
      c.mean_sessions = j.value("mean_sessions", c.mean_sessions);
      c.mean_events = j.value("mean_events", c.mean_events);
      c.mean_impressions = j.value("mean_impressions", c.mean_impressions);
      c.std_sessions = j.value("std_sessions", c.std_sessions);
      c.std_events = j.value("std_events", c.std_events);
      c.std_impressions = j.value("std_impressions", c.std_impressions);
      c.rho = j.value("rho", c.rho);
      c.session_noise = j.value("session_noise", c.session_noise);
      c.placement_noise = j.value("placement_noise", c.placement_noise);
      c.start_time = j.value("start_time", c.start_time);
      c.event_spacing = j.value("event_spacing", c.event_spacing);
      c.session_spacing = j.value("session_spacing", c.session_spacing);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("synthetic config: ") + e.what());
    }
    c.validate();
    return c;
  }

  std::string canonical_json() const { return to_json().dump(); }
};

namespace detail {

// Unit-norm catalog embeddings, IDs 1..catalog.
inline DenseEmbeddings<float> synthetic_catalog(const SyntheticConfig& cfg, Rng& parent) {
  Rng rng = parent.split(0x11);
  DenseEmbeddings<float> emb(cfg.embed_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (std::uint64_t id = 1; id <= cfg.catalog; ++id) {
    std::vector<float> v(cfg.embed_dim);
    double norm2 = 0.0;
    for (auto& x : v) {
      const double g = rng.normal(0.0, scale);
      x = static_cast<float>(g);
      norm2 += g * g;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(norm2 > 0.0 ? norm2 : 1.0));
    for (auto& x : v) x *= inv;
    emb.put(id, std::move(v));
  }
  return emb;
}

// Count draw with the configured mean and spread, floored at `base`.
// Overdispersed counts (std^2 > mean - base) come from a Poisson-Gamma
// mixture (negative binomial), which reproduces the heavy per-user tails
// of production logs; otherwise a plain Poisson.
inline std::size_t spread_count(Rng& rng, double mean, double stddev, double base) {
  const std::size_t floor = static_cast<std::size_t>(base);
  if (mean <= base) return floor;
  const double m = mean - base;
  const double v = stddev * stddev;
  double lambda = m;
  if (v > m) {
    const double shape = m * m / (v - m);
    const double scale = (v - m) / m;
    lambda = std::gamma_distribution<double>(shape, scale)(rng.engine());
  }
  if (lambda <= 0.0) return floor;
  return floor + static_cast<std::size_t>(rng.poisson(lambda));
}

// The per-session interest vectors of one user: a stationary AR(1) walk
// plus fresh per-session noise.
inline std::vector<std::vector<double>> user_interests(const SyntheticConfig& cfg, Rng& rng,
                                                       std::size_t n_sessions) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  std::vector<double> w(cfg.embed_dim);
  for (auto& x : w) x = rng.normal(0.0, scale);
  const double carry = cfg.rho;
  const double fresh = std::sqrt(1.0 - cfg.rho * cfg.rho);
  std::vector<std::vector<double>> out;
  out.reserve(n_sessions);
  for (std::size_t s = 0; s < n_sessions; ++s) {
    if (s > 0)
      for (auto& x : w) x = carry * x + fresh * rng.normal(0.0, scale);
    std::vector<double> v = w;
    if (cfg.session_noise > 0.0)
      for (auto& x : v) x += cfg.session_noise * rng.normal(0.0, scale);
    out.push_back(std::move(v));
  }
  return out;
}

// A fresh draw from the marginal session-interest distribution.  Impression
// negatives are items plausible under such "other" interests, so the pool is
// popularity-matched rather than uniform over the catalog.
inline std::vector<double> other_interest(const SyntheticConfig& cfg, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  std::vector<double> z(cfg.embed_dim);
  for (auto& x : z)
    x = rng.normal(0.0, scale) + cfg.session_noise * rng.normal(0.0, scale);
  return z;
}

inline std::uint64_t nearest_item(const DenseEmbeddings<float>& emb,
                                  const std::vector<double>& target) {
  std::uint64_t best = 1;
  double best_score = -1e300;
  for (std::uint64_t id = 1; id <= emb.size(); ++id) {
    const float* x = emb.row(id);
    double s = 0.0;
    for (std::size_t c = 0; c < target.size(); ++c) s += target[c] * x[c];
    if (s > best_score) {
      best_score = s;
      best = id;
    }
  }
  return best;
}

}  // namespace detail

struct SyntheticSummary {
  std::size_t sessions = 0;
  std::size_t events = 0;
  std::size_t impressions = 0;
};

// Testing hook: the session-interest sequences the generator would walk,
// one vector per session per user.
inline std::vector<std::vector<std::vector<double>>> synthetic_session_interests(
    const SyntheticConfig& cfg) {
  cfg.validate();
  Rng parent(cfg.seed);
  std::vector<std::vector<std::vector<double>>> out;
  out.reserve(cfg.users);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    Rng rng = parent.split(0x1000 + u);
    const std::size_t n = detail::spread_count(rng, cfg.mean_sessions, cfg.std_sessions, 1.0);
    out.push_back(detail::user_interests(cfg, rng, n));
  }
  return out;
}

// Writes interactions.tsv, embeddings.bin, and meta.json into `dir`
// (which must exist).  Byte-identical for identical configs.
inline SyntheticSummary generate_synthetic(const SyntheticConfig& cfg, const std::string& dir) {
  cfg.validate();
  Rng parent(cfg.seed);
  auto catalog = detail::synthetic_catalog(cfg, parent);

  SyntheticSummary sum;
  std::vector<Interaction> log;
  std::uint64_t next_group = 1;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    Rng rng = parent.split(0x1000 + u);
    const std::uint64_t user_id = 1 + u;
    const std::size_t n_sessions =
        detail::spread_count(rng, cfg.mean_sessions, cfg.std_sessions, 1.0);
    auto interests = detail::user_interests(cfg, rng, n_sessions);
    std::int64_t t = cfg.start_time;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    for (std::size_t s = 0; s < n_sessions; ++s) {
      const std::size_t n_events =
          detail::spread_count(rng, cfg.mean_events, cfg.std_events, 1.0);
      for (std::size_t e = 0; e < n_events; ++e) {
        if (e > 0) t += cfg.event_spacing;
        std::vector<double> target = interests[s];
        if (cfg.placement_noise > 0.0)
          for (auto& x : target) x += cfg.placement_noise * rng.normal(0.0, scale);
        const std::uint64_t item = detail::nearest_item(catalog, target);

        // Cap each pool at half the catalog so dedup always terminates.
        const std::size_t m =
            std::min(cfg.catalog / 2,
                     detail::spread_count(rng, cfg.mean_impressions, cfg.std_impressions, 2.0));
        const std::uint64_t group = next_group++;
        log.push_back({user_id, item, t, EventKind::Interaction, group});
        log.push_back({user_id, item, t, EventKind::Impression, group});
        std::unordered_set<std::uint64_t> drawn = {item};
        std::size_t attempts = 0;
        while (drawn.size() < m) {
          // Uniform fallback once collisions dominate (tiny catalogs).
          const std::uint64_t neg =
              attempts++ < 16 * m
                  ? detail::nearest_item(catalog, detail::other_interest(cfg, rng))
                  : 1 + rng.below(cfg.catalog);
          if (drawn.insert(neg).second)
            log.push_back({user_id, neg, t, EventKind::Impression, group});
        }
        sum.impressions += m;
        ++sum.events;
      }
      ++sum.sessions;
      t += cfg.session_spacing;
    }
  }

  write_interactions(dir + "/interactions.tsv", log);
  write_embedding_table(dir + "/embeddings.bin", catalog);
  nlohmann::json meta = {{"format", "htcn-synthetic"},
                         {"version", 1},
                         {"config", cfg.to_json()},
                         {"sessions", sum.sessions},
                         {"events", sum.events},
                         {"impressions", sum.impressions}};
  std::ofstream os(dir + "/meta.json", std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + dir + "/meta.json");
  os << meta.dump(2) << '\n';
  return sum;
}

}  // namespace hiertcn
