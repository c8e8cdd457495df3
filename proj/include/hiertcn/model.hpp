// SPDX-License-Identifier: Apache-2.0
//
// Sequence models assembled from the primitives.  A hierarchical model
// couples a high-level GRU over per-session aggregates with a low-level
// TCN or GRU inside each session:
//
//   s_q   = GRU(s_{q-1}, AGG(session q's items))
//   u_t   = head(low(concat(x_i, s_{q-1}) for in-session i < t))   (Full)
//
// Single-level models run over the concatenated interaction stream with
// a session-indicator channel.  Prediction at position i reads items
// strictly before i; the start token is a zero vector.
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "hiertcn/adam.hpp"
#include "hiertcn/batchnorm.hpp"
#include "hiertcn/conv.hpp"
#include "hiertcn/embeddings.hpp"
#include "hiertcn/gru.hpp"
#include "hiertcn/mlp.hpp"
#include "hiertcn/model_config.hpp"

namespace hiertcn {

// Sessions of item IDs, in chronological order.
using SessionizedHistory = std::vector<std::vector<std::uint64_t>>;

// Mean over valid rows of [L x d]; LastHidden mode returns the supplied
// low-level final hidden state instead.
template <class S>
inline std::vector<S> session_aggregate(const Tensor<S>& items,
                                        const std::vector<unsigned char>& valid, AggMode mode,
                                        const std::vector<S>* last_hidden = nullptr) {
  if (mode == AggMode::LastHidden) {
    require(last_hidden != nullptr && !last_hidden->empty(),
            "session_aggregate: last_hidden mode needs the low-level state");
    return *last_hidden;
  }
  require_shape(items.rank() == 2, "session_aggregate: expected [L x d]");
  const std::size_t L = items.dim(0), d = items.dim(1);
  std::vector<S> mean(d, S(0));
  std::size_t n = 0;
  for (std::size_t i = 0; i < L; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    for (std::size_t c = 0; c < d; ++c) mean[c] += items.at(i, c);
    ++n;
  }
  if (n == 0) throw Error("session_aggregate: empty session");
  for (auto& v : mean) v /= static_cast<S>(n);
  return mean;
}

template <class S>
inline S score(const std::vector<S>& u, const S* item, std::size_t d) {
  require_shape(u.size() == d, "score: dim mismatch");
  return dot(u.data(), item, d);
}

struct ScoredItem {
  std::uint64_t id = 0;
  double score = 0.0;
};

// Descending score, ties by ascending item ID; k past the pool size
// returns the full ranking.
template <class S>
inline std::vector<ScoredItem> rank_candidates(const std::vector<S>& u,
                                               const std::vector<std::uint64_t>& pool,
                                               const EmbeddingSource<S>& emb, std::size_t k) {
  require(!pool.empty(), "rank_candidates: empty candidate pool");
  std::vector<ScoredItem> out;
  out.reserve(pool.size());
  for (auto id : pool)
    out.push_back({id, static_cast<double>(score(u, emb.row(id), emb.dim()))});
  std::sort(out.begin(), out.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (k < out.size()) out.resize(k);
  return out;
}

template <class S>
struct Model {
  ModelConfig cfg;
  TcnStack<S> low_tcn;
  GruStack<S> low_gru;
  GruStack<S> high;
  MlpHeadParams<S> head;
  MaskedTemporalBatchNorm<S> bn;  // over the low-level input channels

  static Model build(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    if (cfg.low_is_tcn())
      m.low_tcn = TcnStack<S>::sized(cfg.k, cfg.low_input_dim(), cfg.channels, cfg.dilations);
    else
      m.low_gru = GruStack<S>::sized(cfg.low_input_dim(), cfg.low_hidden, cfg.low_layers,
                                     cfg.gru_bias);
    if (cfg.hierarchical())
      m.high = GruStack<S>::sized(cfg.high_input_dim(), cfg.high_hidden, cfg.high_layers,
                                  cfg.gru_bias);
    m.head = MlpHeadParams<S>::sized(cfg.low_output_dim(), cfg.head_hidden, cfg.embed_dim);
    if (cfg.batchnorm) m.bn = MaskedTemporalBatchNorm<S>::sized(cfg.low_input_dim());
    return m;
  }

  void init(Rng& rng) {
    if (cfg.low_is_tcn())
      low_tcn.init(rng);
    else
      low_gru.init(rng);
    if (cfg.hierarchical()) high.init(rng);
    head.init(rng);
  }

  template <class F>
  void visit(F&& f) {
    if (cfg.low_is_tcn())
      low_tcn.visit("low", f);
    else
      low_gru.visit("low", f);
    if (cfg.hierarchical()) high.visit("high", f);
    head.visit("head", f);
    if (cfg.batchnorm) bn.visit("bn", f);
  }

  ParamRefs<S> params() {
    ParamRefs<S> refs;
    visit([&](const std::string& name, Tensor<S>& t) { refs.add(name, t); });
    return refs;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
  }

  GruStates<S> initial_high_state() const {
    return cfg.hierarchical() ? high.zero_states() : GruStates<S>{};
  }

  // The high-level hidden state fed to the low level: top layer of the stack.
  static const std::vector<S>& top_state(const GruStates<S>& states) { return states.back(); }

  // One completed session advances the high-level state.
  void high_update(GruStates<S>& states, const std::vector<S>& agg) const {
    require(cfg.hierarchical(), "high_update: single-level model has no high state");
    states = gru_stack_step(high, agg, states);
  }

  // Builds the low-level input block for one session: row 0 is the start
  // token, row i >= 1 carries item i-1; Full connection appends the high
  // state to every row.
  Tensor<S> low_inputs(const std::vector<std::uint64_t>& observed, const EmbeddingSource<S>& emb,
                       const GruStates<S>& s_high) const {
    const std::size_t d = cfg.embed_dim;
    require_shape(emb.dim() == d, "low_inputs: embedding dim mismatch");
    const std::size_t T = observed.size() + 1;
    Tensor<S> in({T, cfg.low_input_dim()});
    if (cfg.connection == ConnectionMode::Init && cfg.low_is_tcn()) {
      const auto& s = top_state(s_high);
      for (std::size_t c = 0; c < d; ++c) in.at(0, c) = s[c];  // state as start token
    }
    for (std::size_t t = 1; t < T; ++t) {
      const S* x = emb.row(observed[t - 1]);
      for (std::size_t c = 0; c < d; ++c) in.at(t, c) = x[c];
    }
    if (cfg.connection == ConnectionMode::Full) {
      const auto& s = top_state(s_high);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < s.size(); ++c) in.at(t, d + c) = s[c];
    }
    return in;
  }

  // Initial low-level GRU states for one session under the configured
  // connection mode.
  GruStates<S> low_initial_states(const GruStates<S>& s_high) const {
    GruStates<S> st = low_gru.zero_states();
    if (cfg.connection == ConnectionMode::Init && !cfg.low_is_tcn()) {
      if (cfg.high_layers == cfg.low_layers) {
        for (std::size_t l = 0; l < st.size(); ++l) st[l] = s_high[l];
      } else {
        for (auto& s : st) s = top_state(s_high);
      }
    }
    return st;
  }

  // Inference-mode batch normalization over a single [T x C] row.
  Tensor<S> normalize_eval(const Tensor<S>& in) const {
    Tensor<S> block({1, in.dim(0), in.dim(1)});
    block.v = in.v;
    Tensor<S> mask({1, in.dim(0)});
    mask.fill(S(1));
    Tensor<S> out = batchnorm_forward_eval(bn, block, mask);
    Tensor<S> flat({in.dim(0), in.dim(1)});
    flat.v = std::move(out.v);
    return flat;
  }

  // Runs the low level over one session's observed items.  Returns
  // observed.size() + 1 user embeddings: row i predicts the item at
  // in-session position i+1, the final row predicts the next, unseen item.
  // final_hidden (GRU low level) receives the state after the last item.
  Tensor<S> low_forward(const std::vector<std::uint64_t>& observed, const EmbeddingSource<S>& emb,
                        const GruStates<S>& s_high, std::vector<S>* final_hidden = nullptr) const {
    require(cfg.hierarchical(), "low_forward: use flat_forward for single-level models");
    Tensor<S> in = low_inputs(observed, emb, s_high);
    if (cfg.batchnorm) in = normalize_eval(in);
    Tensor<S> low_out;
    if (cfg.low_is_tcn()) {
      low_out = tcn_stack_forward(low_tcn, in);
      if (final_hidden != nullptr) final_hidden->clear();
    } else {
      GruStates<S> st = low_initial_states(s_high);
      low_out = gru_stack_forward(low_gru, in, st);
      if (final_hidden != nullptr) *final_hidden = st.back();
    }
    return apply_head(low_out);
  }

  Tensor<S> apply_head(const Tensor<S>& low_out) const {
    const std::size_t T = low_out.dim(0);
    Tensor<S> u({T, cfg.embed_dim});
    std::vector<S> s(cfg.low_output_dim());
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(low_out.v.begin() + static_cast<std::ptrdiff_t>(t * s.size()),
                low_out.v.begin() + static_cast<std::ptrdiff_t>((t + 1) * s.size()), s.begin());
      auto out = mlp_head(head, s);
      std::copy(out.begin(), out.end(),
                u.v.begin() + static_cast<std::ptrdiff_t>(t * cfg.embed_dim));
    }
    return u;
  }

  // Single-level forward over the concatenated stream.  Input row i
  // carries item i-1 plus a session-indicator channel set at each
  // session's first position.  With predict_next, one extra row extends
  // the final session, and the returned sequence gains one row.
  Tensor<S> flat_forward(const SessionizedHistory& history, const EmbeddingSource<S>& emb,
                         bool predict_next = false) const {
    require(!cfg.hierarchical(), "flat_forward: hierarchical model");
    const std::size_t d = cfg.embed_dim;
    std::vector<std::uint64_t> stream;
    std::vector<unsigned char> starts;
    for (const auto& sess : history)
      for (std::size_t i = 0; i < sess.size(); ++i) {
        stream.push_back(sess[i]);
        starts.push_back(i == 0 ? 1 : 0);
      }
    const std::size_t N = stream.size();
    const std::size_t T = N + (predict_next ? 1 : 0);
    if (T == 0) return Tensor<S>({0, d});
    Tensor<S> in({T, d + 1});
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) {
        const S* x = emb.row(stream[t - 1]);
        for (std::size_t c = 0; c < d; ++c) in.at(t, c) = x[c];
      }
      in.at(t, d) = (t < N && starts[t]) ? S(1) : S(0);
    }
    if (N == 0) in.at(0, d) = S(1);  // a lone next-prediction opens a session
    if (cfg.batchnorm) in = normalize_eval(in);
    Tensor<S> low_out;
    if (cfg.low_is_tcn()) {
      low_out = tcn_stack_forward(low_tcn, in);
    } else {
      GruStates<S> st = low_gru.zero_states();
      low_out = gru_stack_forward(low_gru, in, st);
    }
    return apply_head(low_out);
  }

  // One user embedding per interaction, across all sessions in order.
  Tensor<S> forward_user(const SessionizedHistory& history, const EmbeddingSource<S>& emb) const {
    const std::size_t d = cfg.embed_dim;
    if (!cfg.hierarchical()) return flat_forward(history, emb, false);
    std::size_t total = 0;
    for (const auto& s : history) total += s.size();
    Tensor<S> u({total, d});
    GruStates<S> states = initial_high_state();
    std::size_t at = 0;
    for (const auto& sess : history) {
      if (sess.empty()) continue;
      std::vector<S> final_hidden;
      auto u_sess = low_forward(sess, emb, states, &final_hidden);
      for (std::size_t i = 0; i < sess.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) u.at(at + i, c) = u_sess.at(i, c);
      at += sess.size();
      advance_high(states, sess, emb, final_hidden);
    }
    return u;
  }

  // Computes the session aggregate and applies the high-level update.
  void advance_high(GruStates<S>& states, const std::vector<std::uint64_t>& sess,
                    const EmbeddingSource<S>& emb, const std::vector<S>& final_hidden) const {
    std::vector<S> agg;
    if (cfg.agg == AggMode::Mean) {
      Tensor<S> items({sess.size(), cfg.embed_dim});
      for (std::size_t i = 0; i < sess.size(); ++i) {
        const S* x = emb.row(sess[i]);
        for (std::size_t c = 0; c < cfg.embed_dim; ++c) items.at(i, c) = x[c];
      }
      agg = session_aggregate(items, {}, AggMode::Mean);
    } else {
      agg = session_aggregate(Tensor<S>({0, cfg.embed_dim}), {}, AggMode::LastHidden,
                              &final_hidden);
    }
    high_update(states, agg);
  }

  // Prediction for the next, unseen position given complete history plus
  // an open-session prefix.  The serving path uses the same code.
  std::vector<S> predict_next(const SessionizedHistory& closed,
                              const std::vector<std::uint64_t>& open,
                              const EmbeddingSource<S>& emb) const {
    const std::size_t d = cfg.embed_dim;
    if (!cfg.hierarchical()) {
      SessionizedHistory h = closed;
      if (!open.empty()) h.push_back(open);
      auto u = flat_forward(h, emb, true);
      std::vector<S> out(d);
      for (std::size_t c = 0; c < d; ++c) out[c] = u.at(u.dim(0) - 1, c);
      return out;
    }
    GruStates<S> states = initial_high_state();
    for (const auto& sess : closed) {
      if (sess.empty()) continue;
      std::vector<S> final_hidden;
      if (cfg.agg == AggMode::LastHidden) {
        low_forward(sess, emb, states, &final_hidden);  // state pass only
      }
      advance_high(states, sess, emb, final_hidden);
    }
    auto u = low_forward(open, emb, states);
    std::vector<S> out(d);
    for (std::size_t c = 0; c < d; ++c) out[c] = u.at(open.size(), c);
    return out;
  }
};

}  // namespace hiertcn
