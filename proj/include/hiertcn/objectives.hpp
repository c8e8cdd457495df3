// SPDX-License-Identifier: Apache-2.0
//
// Ranking losses over (user embedding, positive item, negatives).  Every
// loss returns its value and optionally accumulates d(loss)/du, so the
// model backward can chain straight through the scoring dot product.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hiertcn/common.hpp"

namespace hiertcn {

enum class ObjectiveKind { L2, NCE, BPR, Hinge, CrossEntropy };

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::L2: return "l2";
    case ObjectiveKind::NCE: return "nce";
    case ObjectiveKind::BPR: return "bpr";
    case ObjectiveKind::Hinge: return "hinge";
    case ObjectiveKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

inline ObjectiveKind objective_from_string(const std::string& s) {
  if (s == "l2") return ObjectiveKind::L2;
  if (s == "nce") return ObjectiveKind::NCE;
  if (s == "bpr") return ObjectiveKind::BPR;
  if (s == "hinge") return ObjectiveKind::Hinge;
  if (s == "cross_entropy") return ObjectiveKind::CrossEntropy;
  throw ConfigError("unknown objective: " + s);
}

enum class NegativeSource { Impressions, UniformRandom };

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::Hinge;
  double margin = 0.5;          // hinge only
  std::size_t negatives = 16;   // cap per positive
  NegativeSource source = NegativeSource::Impressions;

  void validate() const {
    if (margin < 0.0) throw ConfigError("objective: margin must be >= 0");
    const bool needs_negs =
        kind == ObjectiveKind::NCE || kind == ObjectiveKind::BPR || kind == ObjectiveKind::Hinge;
    if (needs_negs && negatives < 1)
      throw ConfigError("objective: " + to_string(kind) + " requires >= 1 negative");
  }
};

// Negatives for one training step: embedding rows plus a validity mask so
// padded entries are ignored.
template <class S>
struct NegativeSet {
  std::vector<const S*> rows;
  std::vector<unsigned char> valid;  // parallel to rows; empty = all valid

  std::size_t valid_count() const {
    if (valid.empty()) return rows.size();
    std::size_t n = 0;
    for (auto f : valid) n += f ? 1 : 0;
    return n;
  }
  bool is_valid(std::size_t i) const { return valid.empty() || valid[i]; }
};

// ||x - u||_2, subgradient zero at x == u.
template <class S>
inline S l2_loss(const S* u, const S* x, std::size_t d, S* du = nullptr) {
  S sq = S(0);
  for (std::size_t i = 0; i < d; ++i) {
    const S diff = x[i] - u[i];
    sq += diff * diff;
  }
  const S dist = std::sqrt(sq);
  if (du != nullptr && dist > S(0)) {
    for (std::size_t i = 0; i < d; ++i) du[i] += (u[i] - x[i]) / dist;
  }
  return dist;
}

// -log s(x.u) - sum_i log s(-c_i.u)
template <class S>
inline S nce_loss(const S* u, const S* x, const NegativeSet<S>& negs, std::size_t d,
                  S* du = nullptr) {
  if (negs.valid_count() < 1) throw Error("nce_loss: needs >= 1 negative");
  const S pos = dot(x, u, d);
  S loss = -log_sigmoid(pos);
  if (du != nullptr) {
    const S w = -sigmoid(-pos);  // d(-log s(p))/dp
    for (std::size_t i = 0; i < d; ++i) du[i] += w * x[i];
  }
  for (std::size_t n = 0; n < negs.rows.size(); ++n) {
    if (!negs.is_valid(n)) continue;
    const S* c = negs.rows[n];
    const S neg = dot(c, u, d);
    loss += -log_sigmoid(-neg);
    if (du != nullptr) {
      const S w = sigmoid(neg);
      for (std::size_t i = 0; i < d; ++i) du[i] += w * c[i];
    }
  }
  return loss;
}

// -sum_i log s(x.u - c_i.u)
template <class S>
inline S bpr_loss(const S* u, const S* x, const NegativeSet<S>& negs, std::size_t d,
                  S* du = nullptr) {
  if (negs.valid_count() < 1) throw Error("bpr_loss: needs >= 1 negative");
  const S pos = dot(x, u, d);
  S loss = S(0);
  for (std::size_t n = 0; n < negs.rows.size(); ++n) {
    if (!negs.is_valid(n)) continue;
    const S* c = negs.rows[n];
    const S diff = pos - dot(c, u, d);
    loss += -log_sigmoid(diff);
    if (du != nullptr) {
      const S w = -sigmoid(-diff);
      for (std::size_t i = 0; i < d; ++i) du[i] += w * (x[i] - c[i]);
    }
  }
  return loss;
}

// sum_i max(0, margin + c_i.u - x.u), subgradient zero at the kink.
template <class S>
inline S hinge_loss(const S* u, const S* x, const NegativeSet<S>& negs, std::size_t d, S margin,
                    S* du = nullptr) {
  if (margin < S(0)) throw ConfigError("hinge_loss: margin must be >= 0");
  if (negs.valid_count() < 1) throw Error("hinge_loss: needs >= 1 negative");
  const S pos = dot(x, u, d);
  S loss = S(0);
  for (std::size_t n = 0; n < negs.rows.size(); ++n) {
    if (!negs.is_valid(n)) continue;
    const S* c = negs.rows[n];
    const S v = margin + dot(c, u, d) - pos;
    if (v > S(0)) {
      loss += v;
      if (du != nullptr)
        for (std::size_t i = 0; i < d; ++i) du[i] += c[i] - x[i];
    }
  }
  return loss;
}

// Softmax cross entropy over catalog logits against a one-hot target.
template <class S>
inline S cross_entropy_loss(const std::vector<S>& logits, std::size_t target,
                            std::vector<S>* dlogits = nullptr) {
  if (target >= logits.size()) throw ShapeError("cross_entropy: target outside catalog");
  S mx = logits[0];
  for (S z : logits) mx = std::max(mx, z);
  S sum = S(0);
  for (S z : logits) sum += std::exp(z - mx);
  const S lse = mx + std::log(sum);
  if (dlogits != nullptr) {
    dlogits->assign(logits.size(), S(0));
    for (std::size_t i = 0; i < logits.size(); ++i)
      (*dlogits)[i] = std::exp(logits[i] - mx) / sum;
    (*dlogits)[target] -= S(1);
  }
  return lse - logits[target];
}

// Dispatcher for the vector-embedding losses (cross entropy needs the
// catalog and is wired separately by the trainer).
template <class S>
inline S objective_loss(const ObjectiveConfig& cfg, const S* u, const S* x,
                        const NegativeSet<S>& negs, std::size_t d, S* du = nullptr) {
  switch (cfg.kind) {
    case ObjectiveKind::L2: return l2_loss(u, x, d, du);
    case ObjectiveKind::NCE: return nce_loss(u, x, negs, d, du);
    case ObjectiveKind::BPR: return bpr_loss(u, x, negs, d, du);
    case ObjectiveKind::Hinge: return hinge_loss(u, x, negs, d, static_cast<S>(cfg.margin), du);
    case ObjectiveKind::CrossEntropy:
      throw ConfigError("cross_entropy is catalog-wide; use cross_entropy_loss");
  }
  throw ConfigError("unknown objective kind");
}

}  // namespace hiertcn
