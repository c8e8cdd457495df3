// SPDX-License-Identifier: Apache-2.0
//
// One optimizer-ready training step: forward, loss, and hand-chained
// backward over a mini-batch.  The hierarchical path walks sessions
// slot-major — slot g of every row runs against the rows' current high
// states, then one high-level update advances them — so gradients flow
// through both the within-session model and the cross-session GRU.
// Backpropagation truncates at batch boundaries: carried states enter as
// constants.
#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "hiertcn/batch_types.hpp"
#include "hiertcn/checkpoint.hpp"
#include "hiertcn/model.hpp"
#include "hiertcn/objectives.hpp"

namespace hiertcn {

template <class S>
struct TrainContext {
  const EmbeddingSource<S>* emb = nullptr;
  ObjectiveConfig objective;
  // Catalog IDs for cross-entropy scoring and uniform negative sampling.
  std::vector<std::uint64_t> catalog;
  bool train_mode = true;  // engages dropout and batch-norm batch statistics
};

struct StepResult {
  double loss_sum = 0.0;
  std::size_t targets = 0;
  BatchCounters counters;

  double mean_loss() const { return targets == 0 ? 0.0 : loss_sum / static_cast<double>(targets); }
};

namespace detail {

// Loss and d(loss)/du for one target event.
template <class S>
inline double event_loss(const TrainContext<S>& ctx, const std::vector<S>& u,
                         const TrainEvent& ev, Rng& rng, std::vector<S>& du) {
  const std::size_t d = u.size();
  const EmbeddingSource<S>& emb = *ctx.emb;
  du.assign(d, S(0));
  const S* pos = emb.row(ev.item);

  if (ctx.objective.kind == ObjectiveKind::L2)
    return static_cast<double>(l2_loss(u.data(), pos, d, du.data()));

  if (ctx.objective.kind == ObjectiveKind::CrossEntropy) {
    require(!ctx.catalog.empty(), "train: cross_entropy needs a catalog");
    std::vector<S> logits(ctx.catalog.size());
    std::size_t target = ctx.catalog.size();
    for (std::size_t i = 0; i < ctx.catalog.size(); ++i) {
      logits[i] = dot(u.data(), emb.row(ctx.catalog[i]), d);
      if (ctx.catalog[i] == ev.item) target = i;
    }
    if (target == ctx.catalog.size()) throw DataError("train: positive item not in catalog");
    std::vector<S> dlogits;
    const double loss = static_cast<double>(cross_entropy_loss(logits, target, &dlogits));
    for (std::size_t i = 0; i < ctx.catalog.size(); ++i) {
      if (dlogits[i] == S(0)) continue;
      const S* x = emb.row(ctx.catalog[i]);
      for (std::size_t c = 0; c < d; ++c) du[c] += dlogits[i] * x[c];
    }
    return loss;
  }

  // Pairwise objectives: use the event's impressions, fall back to
  // uniform catalog draws when none were recorded.
  NegativeSet<S> negs;
  std::vector<std::uint64_t> sampled;
  const std::vector<std::uint64_t>* ids = &ev.negatives;
  if (ev.negatives.empty()) {
    require(!ctx.catalog.empty(), "train: no negatives and no catalog to sample from");
    sampled.reserve(ctx.objective.negatives);
    while (sampled.size() < ctx.objective.negatives) {
      const std::uint64_t cand = ctx.catalog[rng.below(ctx.catalog.size())];
      if (cand != ev.item) sampled.push_back(cand);
    }
    ids = &sampled;
  }
  negs.rows.reserve(ids->size());
  for (auto id : *ids) negs.rows.push_back(emb.row(id));
  return static_cast<double>(
      objective_loss(ctx.objective, u.data(), pos, negs, d, du.data()));
}

// Head forward over the target prefix of a low-level output sequence,
// loss per target, and head backward; d_low accumulates the gradient
// w.r.t. the low outputs.
template <class S>
inline double head_losses(Model<S>& model, const TrainContext<S>& ctx, const Tensor<S>& low_out,
                          const std::vector<TrainEvent>& events, Rng& rng, Model<S>& grads,
                          Tensor<S>& d_low) {
  const std::size_t dl = model.cfg.low_output_dim();
  double loss = 0.0;
  std::vector<S> s(dl), du, ds;
  for (std::size_t i = 0; i < events.size(); ++i) {
    std::copy(low_out.v.begin() + static_cast<std::ptrdiff_t>(i * dl),
              low_out.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * dl), s.begin());
    MlpHeadCache<S> hc;
    auto u = mlp_head(model.head, s, &hc);
    loss += event_loss(ctx, u, events[i], rng, du);
    mlp_head_backward(model.head, hc, du, grads.head, ds);
    for (std::size_t c = 0; c < dl; ++c) d_low.at(i, c) += ds[c];
  }
  return loss;
}

}  // namespace detail

// Zeroes a gradient accumulator built with Model::build on the same config.
template <class S>
inline void zero_grads(Model<S>& grads) {
  grads.visit([](const std::string&, Tensor<S>& t) { t.zero(); });
}

// Scales all gradients, e.g. by 1/targets after accumulation.
template <class S>
inline void scale_grads(Model<S>& grads, S factor) {
  grads.visit([&](const std::string&, Tensor<S>& t) {
    for (auto& v : t.v) v *= factor;
  });
}

// ---------------------------------------------------------------------------
// Hierarchical step
// ---------------------------------------------------------------------------

template <class S>
inline StepResult train_step_hier(Model<S>& model, Model<S>& grads,
                                  const std::vector<HierRowTask>& rows,
                                  std::unordered_map<std::uint64_t, GruStates<S>>& carried,
                                  const TrainContext<S>& ctx, Rng& rng) {
  require(model.cfg.hierarchical(), "train_step_hier: single-level model");
  const ModelConfig& cfg = model.cfg;
  const std::size_t d = cfg.embed_dim;
  const std::size_t cin = cfg.low_input_dim();
  const bool last_hidden = cfg.agg == AggMode::LastHidden;
  const double drop = ctx.train_mode ? cfg.dropout : 0.0;
  StepResult res;

  const std::size_t B = rows.size();
  std::size_t G = 0;
  for (const auto& r : rows) G = std::max(G, r.sessions.size());

  // Per-row running high state and per-slot saved forward artifacts.
  std::vector<GruStates<S>> state(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (rows[b].reset) {
      state[b] = model.initial_high_state();
    } else {
      auto it = carried.find(rows[b].user);
      state[b] = it != carried.end() ? it->second : model.initial_high_state();
    }
  }

  struct SlotRow {
    bool active = false;
    std::size_t t_in = 0;  // low-level input rows
    GruStates<S> s_in;     // high state the slot consumed
    Tensor<S> d_low;       // gradient w.r.t. low outputs (targets only)
    TcnStackCache<S> tcn_cache;
    GruStackCache<S> gru_cache;
    std::vector<GruStepCache<S>> high_cache;
    std::vector<S> agg;
  };
  std::vector<std::vector<SlotRow>> slot(G, std::vector<SlotRow>(B));
  std::vector<Tensor<S>> block_in(G);  // pre-norm assembled inputs per slot
  std::vector<Tensor<S>> block_mask(G);
  std::vector<BatchNormCache<S>> bn_cache(G);

  // ---- forward, slot-major ----
  for (std::size_t g = 0; g < G; ++g) {
    std::size_t tmax = 0, active = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (g >= rows[b].sessions.size()) continue;
      const auto& ev = rows[b].sessions[g].events;
      require(!ev.empty(), "train_step_hier: empty session slot");
      slot[g][b].active = true;
      slot[g][b].t_in = ev.size() + (last_hidden ? 1 : 0);
      tmax = std::max(tmax, slot[g][b].t_in);
      ++active;
    }
    if (active == 0) continue;
    res.counters.add_block(active, tmax, d);

    Tensor<S> in({B, tmax, cin});
    Tensor<S> mask({B, tmax});
    for (std::size_t b = 0; b < B; ++b) {
      auto& sr = slot[g][b];
      if (!sr.active) continue;
      sr.s_in = state[b];
      const auto& events = rows[b].sessions[g].events;
      const auto& top = Model<S>::top_state(sr.s_in);
      for (std::size_t t = 0; t < sr.t_in; ++t) {
        mask.at(b, t) = S(1);
        if (t == 0) {
          if (cfg.connection == ConnectionMode::Init && cfg.low_is_tcn())
            for (std::size_t c = 0; c < d; ++c) in.at(b, 0, c) = top[c];
        } else {
          const S* x = ctx.emb->row(events[t - 1].item);
          for (std::size_t c = 0; c < d; ++c) in.at(b, t, c) = x[c];
        }
        if (cfg.connection == ConnectionMode::Full)
          for (std::size_t c = 0; c < top.size(); ++c) in.at(b, t, d + c) = top[c];
      }
    }
    block_in[g] = in;
    block_mask[g] = mask;

    Tensor<S> normed;
    if (cfg.batchnorm) {
      normed = ctx.train_mode ? batchnorm_forward_train(model.bn, in, mask, &bn_cache[g])
                              : batchnorm_forward_eval(model.bn, in, mask);
    }
    const Tensor<S>& src = cfg.batchnorm ? normed : in;

    for (std::size_t b = 0; b < B; ++b) {
      auto& sr = slot[g][b];
      if (!sr.active) continue;
      const auto& events = rows[b].sessions[g].events;
      Tensor<S> row_in({sr.t_in, cin});
      for (std::size_t t = 0; t < sr.t_in; ++t)
        for (std::size_t c = 0; c < cin; ++c) row_in.at(t, c) = src.at(b, t, c);

      Tensor<S> low_out;
      std::vector<S> final_hidden;
      if (cfg.low_is_tcn()) {
        low_out = tcn_stack_forward(model.low_tcn, row_in, &sr.tcn_cache, drop, &rng);
      } else {
        GruStates<S> st = model.low_initial_states(sr.s_in);
        low_out = gru_stack_forward(model.low_gru, row_in, st, &sr.gru_cache, drop, &rng);
        final_hidden = st.back();
      }

      sr.d_low = Tensor<S>({sr.t_in, cfg.low_output_dim()});
      res.loss_sum += detail::head_losses(model, ctx, low_out, events, rng, grads, sr.d_low);
      res.targets += events.size();

      if (cfg.agg == AggMode::Mean) {
        Tensor<S> items({events.size(), d});
        for (std::size_t i = 0; i < events.size(); ++i) {
          const S* x = ctx.emb->row(events[i].item);
          for (std::size_t c = 0; c < d; ++c) items.at(i, c) = x[c];
        }
        sr.agg = session_aggregate(items, {}, AggMode::Mean);
      } else {
        sr.agg = final_hidden;
      }
      state[b] = gru_stack_step(model.high, sr.agg, state[b], &sr.high_cache, drop, &rng);
    }
  }

  // Carried states for the next batch of these users (constants there).
  for (std::size_t b = 0; b < B; ++b)
    if (!rows[b].sessions.empty()) carried[rows[b].user] = state[b];

  // ---- backward, slots in reverse ----
  std::vector<GruStates<S>> d_state(B);  // gradient w.r.t. the post-slot state
  for (std::size_t b = 0; b < B; ++b) {
    d_state[b].assign(model.high.layers.size(), {});
    for (std::size_t l = 0; l < model.high.layers.size(); ++l)
      d_state[b][l].assign(cfg.high_hidden, S(0));
  }

  for (std::size_t g = G; g-- > 0;) {
    bool any = false;
    for (std::size_t b = 0; b < B; ++b) any = any || slot[g][b].active;
    if (!any) continue;
    const std::size_t tmax = block_in[g].dim(1);
    Tensor<S> d_block({B, tmax, cin});

    for (std::size_t b = 0; b < B; ++b) {
      auto& sr = slot[g][b];
      if (!sr.active) continue;

      // high-level update backward: d wrt new state -> d wrt agg + old state
      std::vector<S> d_agg;
      GruStates<S> d_prev;
      gru_stack_step_backward(model.high, sr.high_cache, d_state[b], grads.high, d_agg, d_prev);

      GruStates<S> d_final;
      if (last_hidden) {
        d_final.assign(model.low_gru.layers.size(), {});
        d_final.back() = d_agg;  // aggregate was the top-layer final hidden
      }
      // Mean aggregation reads fixed item embeddings; nothing to chain.

      Tensor<S> dx_seq;
      GruStates<S> d_low0;
      if (cfg.low_is_tcn()) {
        tcn_stack_backward(model.low_tcn, sr.tcn_cache, sr.d_low, grads.low_tcn, dx_seq);
      } else {
        gru_stack_backward(model.low_gru, sr.gru_cache, sr.d_low, d_final, grads.low_gru, dx_seq,
                           d_low0);
      }
      for (std::size_t t = 0; t < sr.t_in; ++t)
        for (std::size_t c = 0; c < cin; ++c) d_block.at(b, t, c) = dx_seq.at(t, c);

      // gradient w.r.t. the slot's incoming high state
      d_state[b] = std::move(d_prev);
      if (cfg.connection == ConnectionMode::Init && !cfg.low_is_tcn()) {
        if (cfg.high_layers == cfg.low_layers) {
          for (std::size_t l = 0; l < d_low0.size(); ++l)
            for (std::size_t c = 0; c < cfg.high_hidden; ++c) d_state[b][l][c] += d_low0[l][c];
        } else {
          for (std::size_t l = 0; l < d_low0.size(); ++l)
            for (std::size_t c = 0; c < cfg.high_hidden; ++c)
              d_state[b].back()[c] += d_low0[l][c];
        }
      }
    }

    // Through batch norm (couples rows), then collect the state-concat
    // part of the input gradient.
    Tensor<S> d_in;
    if (cfg.batchnorm && ctx.train_mode) {
      batchnorm_backward(model.bn, bn_cache[g], d_block, grads.bn, d_in);
    } else if (cfg.batchnorm) {
      d_in = Tensor<S>({B, tmax, cin});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < tmax; ++t) {
          if (block_mask[g].at(b, t) == S(0)) continue;
          const auto& va = model.bn.var_at(t);
          for (std::size_t c = 0; c < cin; ++c)
            d_in.at(b, t, c) = d_block.at(b, t, c) * model.bn.gamma[c] /
                               std::sqrt(va[c] + static_cast<S>(model.bn.eps));
        }
    } else {
      d_in = std::move(d_block);
    }

    for (std::size_t b = 0; b < B; ++b) {
      auto& sr = slot[g][b];
      if (!sr.active) continue;
      if (cfg.connection == ConnectionMode::Full) {
        for (std::size_t t = 0; t < sr.t_in; ++t)
          for (std::size_t c = 0; c < cfg.high_hidden; ++c)
            d_state[b].back()[c] += d_in.at(b, t, d + c);
      } else if (cfg.low_is_tcn()) {
        for (std::size_t c = 0; c < d; ++c) d_state[b].back()[c] += d_in.at(b, 0, c);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Single-level step over full-history rows
// ---------------------------------------------------------------------------

template <class S>
inline StepResult train_step_flat(Model<S>& model, Model<S>& grads,
                                  const std::vector<FlatRowTask>& rows,
                                  const TrainContext<S>& ctx, Rng& rng) {
  require(!model.cfg.hierarchical(), "train_step_flat: hierarchical model");
  const ModelConfig& cfg = model.cfg;
  const std::size_t d = cfg.embed_dim;
  const std::size_t cin = cfg.low_input_dim();
  const double drop = ctx.train_mode ? cfg.dropout : 0.0;
  StepResult res;

  const std::size_t B = rows.size();
  struct RowState {
    std::vector<TrainEvent> events;  // flattened stream
    std::vector<unsigned char> starts;
    Tensor<S> d_low;
    TcnStackCache<S> tcn_cache;
    GruStackCache<S> gru_cache;
  };
  std::vector<RowState> rs(B);
  std::size_t tmax = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (const auto& sess : rows[b].sessions)
      for (std::size_t i = 0; i < sess.events.size(); ++i) {
        rs[b].events.push_back(sess.events[i]);
        rs[b].starts.push_back(i == 0 ? 1 : 0);
      }
    require(!rs[b].events.empty(), "train_step_flat: empty row");
    tmax = std::max(tmax, rs[b].events.size());
  }
  res.counters.add_block(B, tmax, d);

  Tensor<S> in({B, tmax, cin});
  Tensor<S> mask({B, tmax});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& r = rs[b];
    for (std::size_t t = 0; t < r.events.size(); ++t) {
      mask.at(b, t) = S(1);
      if (t > 0) {
        const S* x = ctx.emb->row(r.events[t - 1].item);
        for (std::size_t c = 0; c < d; ++c) in.at(b, t, c) = x[c];
      }
      in.at(b, t, d) = r.starts[t] ? S(1) : S(0);
    }
  }

  BatchNormCache<S> bn_cache;
  Tensor<S> normed;
  if (cfg.batchnorm) {
    normed = ctx.train_mode ? batchnorm_forward_train(model.bn, in, mask, &bn_cache)
                            : batchnorm_forward_eval(model.bn, in, mask);
  }
  const Tensor<S>& src = cfg.batchnorm ? normed : in;

  Tensor<S> d_block({B, tmax, cin});
  for (std::size_t b = 0; b < B; ++b) {
    auto& r = rs[b];
    const std::size_t T = r.events.size();
    Tensor<S> row_in({T, cin});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < cin; ++c) row_in.at(t, c) = src.at(b, t, c);

    Tensor<S> low_out;
    if (cfg.low_is_tcn()) {
      low_out = tcn_stack_forward(model.low_tcn, row_in, &r.tcn_cache, drop, &rng);
    } else {
      GruStates<S> st = model.low_gru.zero_states();
      low_out = gru_stack_forward(model.low_gru, row_in, st, &r.gru_cache, drop, &rng);
    }
    r.d_low = Tensor<S>({T, cfg.low_output_dim()});
    res.loss_sum += detail::head_losses(model, ctx, low_out, r.events, rng, grads, r.d_low);
    res.targets += r.events.size();

    Tensor<S> dx_seq;
    if (cfg.low_is_tcn()) {
      tcn_stack_backward(model.low_tcn, r.tcn_cache, r.d_low, grads.low_tcn, dx_seq);
    } else {
      GruStates<S> d_low0;
      gru_stack_backward(model.low_gru, r.gru_cache, r.d_low, {}, grads.low_gru, dx_seq, d_low0);
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < cin; ++c) d_block.at(b, t, c) = dx_seq.at(t, c);
  }

  if (cfg.batchnorm && ctx.train_mode) {
    Tensor<S> d_in;
    batchnorm_backward(model.bn, bn_cache, d_block, grads.bn, d_in);
  }
  return res;
}

}  // namespace hiertcn
