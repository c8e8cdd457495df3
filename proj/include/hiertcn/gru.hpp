// SPDX-License-Identifier: Apache-2.0
//
// GRU cell and stacked-GRU sequence kernels with hand-derived backward
// passes.  The cell computes
//
//   g = sigmoid(Wg x + Ug s_prev)            update gate
//   r = sigmoid(Wr x + Ur s_prev)            reset gate
//   h = tanh(Wh x + Uh (s_prev . r))         candidate
//   s = (1 - g) . D(h) + g . s_prev
//
// where D is inverted dropout on the candidate path only (identity at
// inference; the s_prev pathway is never masked).  Per-gate biases are
// optional and default off.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hiertcn/rng.hpp"
#include "hiertcn/tensor.hpp"

namespace hiertcn {

template <class S>
struct GruLayerParams {
  Tensor<S> Wg, Wr, Wh;  // [hidden x input]
  Tensor<S> Ug, Ur, Uh;  // [hidden x hidden]
  Tensor<S> bg, br, bh;  // per-gate biases; zero-size when disabled
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  bool has_bias = false;

  static GruLayerParams sized(std::size_t input, std::size_t hidden, bool bias = false) {
    GruLayerParams p;
    p.input_dim = input;
    p.hidden_dim = hidden;
    p.has_bias = bias;
    p.Wg = Tensor<S>({hidden, input});
    p.Wr = Tensor<S>({hidden, input});
    p.Wh = Tensor<S>({hidden, input});
    p.Ug = Tensor<S>({hidden, hidden});
    p.Ur = Tensor<S>({hidden, hidden});
    p.Uh = Tensor<S>({hidden, hidden});
    if (bias) {
      p.bg = Tensor<S>({hidden});
      p.br = Tensor<S>({hidden});
      p.bh = Tensor<S>({hidden});
    }
    return p;
  }

  void init(Rng& rng) {
    init_uniform_fanin(Wg, input_dim, rng);
    init_uniform_fanin(Wr, input_dim, rng);
    init_uniform_fanin(Wh, input_dim, rng);
    init_uniform_fanin(Ug, hidden_dim, rng);
    init_uniform_fanin(Ur, hidden_dim, rng);
    init_uniform_fanin(Uh, hidden_dim, rng);
    // biases start at zero
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".Wg", Wg);
    f(prefix + ".Wr", Wr);
    f(prefix + ".Wh", Wh);
    f(prefix + ".Ug", Ug);
    f(prefix + ".Ur", Ur);
    f(prefix + ".Uh", Uh);
    if (has_bias) {
      f(prefix + ".bg", bg);
      f(prefix + ".br", br);
      f(prefix + ".bh", bh);
    }
  }
};

// Saved activations of one cell step, enough to run the backward pass.
template <class S>
struct GruStepCache {
  std::vector<S> x;       // input
  std::vector<S> s_prev;  // incoming state
  std::vector<S> g, r, h; // gates and candidate (pre-dropout)
  std::vector<S> m;       // s_prev . r
  std::vector<S> keep;    // dropout keep mask, scaled; empty = no dropout
};

// Inverted-dropout mask: entries are 0 (dropped) or 1/(1-rate) (kept).
template <class S>
inline std::vector<S> dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (rate >= 1.0 || rate < 0.0) throw ConfigError("dropout rate must be in [0, 1)");
  std::vector<S> mask(n, S(1));
  if (rate == 0.0) return mask;
  const S scale = S(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < rate ? S(0) : scale;
  return mask;
}

// Dropout applied to a candidate activation during training; inference is
// the identity (callers simply skip the call).
template <class S>
inline std::vector<S> recurrent_dropout_step(const std::vector<S>& h, double rate, Rng& rng) {
  auto mask = dropout_mask<S>(h.size(), rate, rng);
  std::vector<S> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * mask[i];
  return out;
}

// One cell step. When drop_rate > 0 and rng != nullptr a fresh candidate
// mask is drawn and recorded in the cache.
template <class S>
inline std::vector<S> gru_cell_forward(const GruLayerParams<S>& p, const std::vector<S>& x,
                                       const std::vector<S>& s_prev, GruStepCache<S>* cache = nullptr,
                                       double drop_rate = 0.0, Rng* rng = nullptr) {
  const std::size_t H = p.hidden_dim;
  require_shape(x.size() == p.input_dim, "gru_cell: input dim mismatch");
  require_shape(s_prev.size() == H, "gru_cell: state dim mismatch");

  std::vector<S> g(H), r(H), h(H), m(H), s(H);
  std::vector<S> tmp(H);

  matvec(p.Wg, x.data(), g.data());
  matvec(p.Ug, s_prev.data(), tmp.data());
  for (std::size_t i = 0; i < H; ++i)
    g[i] = sigmoid(g[i] + tmp[i] + (p.has_bias ? p.bg[i] : S(0)));

  matvec(p.Wr, x.data(), r.data());
  matvec(p.Ur, s_prev.data(), tmp.data());
  for (std::size_t i = 0; i < H; ++i)
    r[i] = sigmoid(r[i] + tmp[i] + (p.has_bias ? p.br[i] : S(0)));

  for (std::size_t i = 0; i < H; ++i) m[i] = s_prev[i] * r[i];

  matvec(p.Wh, x.data(), h.data());
  matvec(p.Uh, m.data(), tmp.data());
  for (std::size_t i = 0; i < H; ++i)
    h[i] = std::tanh(h[i] + tmp[i] + (p.has_bias ? p.bh[i] : S(0)));

  std::vector<S> keep;
  if (drop_rate > 0.0 && rng != nullptr) keep = dropout_mask<S>(H, drop_rate, *rng);

  for (std::size_t i = 0; i < H; ++i) {
    const S hd = keep.empty() ? h[i] : h[i] * keep[i];
    s[i] = (S(1) - g[i]) * hd + g[i] * s_prev[i];
  }

  if (cache != nullptr) {
    cache->x = x;
    cache->s_prev = s_prev;
    cache->g = std::move(g);
    cache->r = std::move(r);
    cache->h = std::move(h);
    cache->m = std::move(m);
    cache->keep = std::move(keep);
  }
  return s;
}

// Backward of one cell step.  Accumulates parameter gradients into
// `grads` (same layout as the params) and the input-state gradient into
// ds_prev; writes the input gradient into dx.
template <class S>
inline void gru_cell_backward(const GruLayerParams<S>& p, const GruStepCache<S>& c,
                              const std::vector<S>& ds, GruLayerParams<S>& grads,
                              std::vector<S>& dx, std::vector<S>& ds_prev) {
  const std::size_t H = p.hidden_dim;
  dx.assign(p.input_dim, S(0));
  ds_prev.assign(H, S(0));

  std::vector<S> dh(H), dg(H), dr(H), dm(H);
  std::vector<S> dag(H), dar(H), dah(H);

  for (std::size_t i = 0; i < H; ++i) {
    const S keep = c.keep.empty() ? S(1) : c.keep[i];
    const S hd = c.h[i] * keep;
    dh[i] = ds[i] * (S(1) - c.g[i]) * keep;
    dg[i] = ds[i] * (c.s_prev[i] - hd);
    ds_prev[i] += ds[i] * c.g[i];
    dah[i] = dh[i] * (S(1) - c.h[i] * c.h[i]);
  }

  outer_acc(grads.Wh, dah.data(), c.x.data());
  outer_acc(grads.Uh, dah.data(), c.m.data());
  matvec_t_acc(p.Wh, dah.data(), dx.data());
  dm.assign(H, S(0));
  matvec_t_acc(p.Uh, dah.data(), dm.data());

  for (std::size_t i = 0; i < H; ++i) {
    ds_prev[i] += dm[i] * c.r[i];
    dr[i] = dm[i] * c.s_prev[i];
    dar[i] = dr[i] * c.r[i] * (S(1) - c.r[i]);
    dag[i] = dg[i] * c.g[i] * (S(1) - c.g[i]);
  }

  outer_acc(grads.Wr, dar.data(), c.x.data());
  outer_acc(grads.Ur, dar.data(), c.s_prev.data());
  matvec_t_acc(p.Wr, dar.data(), dx.data());
  matvec_t_acc(p.Ur, dar.data(), ds_prev.data());

  outer_acc(grads.Wg, dag.data(), c.x.data());
  outer_acc(grads.Ug, dag.data(), c.s_prev.data());
  matvec_t_acc(p.Wg, dag.data(), dx.data());
  matvec_t_acc(p.Ug, dag.data(), ds_prev.data());

  if (p.has_bias) {
    for (std::size_t i = 0; i < H; ++i) {
      grads.bg[i] += dag[i];
      grads.br[i] += dar[i];
      grads.bh[i] += dah[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Stacked GRU over a sequence.  Layer l consumes layer l-1's hidden
// sequence; returned final states allow bit-identical resumption.
// ---------------------------------------------------------------------------

template <class S>
using GruStates = std::vector<std::vector<S>>;  // one hidden vector per layer

template <class S>
struct GruStack {
  std::vector<GruLayerParams<S>> layers;

  static GruStack sized(std::size_t input, std::size_t hidden, std::size_t n_layers,
                        bool bias = false) {
    GruStack s;
    for (std::size_t l = 0; l < n_layers; ++l)
      s.layers.push_back(GruLayerParams<S>::sized(l == 0 ? input : hidden, hidden, bias));
    return s;
  }

  std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.back().hidden_dim; }
  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().input_dim; }

  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  GruStates<S> zero_states() const {
    GruStates<S> st;
    for (const auto& l : layers) st.emplace_back(l.hidden_dim, S(0));
    return st;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit(prefix + ".layer" + std::to_string(l), f);
  }
};

template <class S>
struct GruStackCache {
  // caches[l][t]
  std::vector<std::vector<GruStepCache<S>>> caches;
};

// x_seq is [T x d_in].  Returns the top layer's hidden sequence
// [T x hidden]; final per-layer states are written back into `states`.
template <class S>
inline Tensor<S> gru_stack_forward(const GruStack<S>& stack, const Tensor<S>& x_seq,
                                   GruStates<S>& states, GruStackCache<S>* cache = nullptr,
                                   double drop_rate = 0.0, Rng* rng = nullptr) {
  require_shape(x_seq.rank() == 2, "gru_stack: expected [T x d] input");
  const std::size_t T = x_seq.dim(0);
  if (T == 0) throw Error("gru_stack: empty sequence");
  require_shape(states.size() == stack.layers.size(), "gru_stack: state layer count mismatch");
  require_shape(x_seq.dim(1) == stack.input_dim(), "gru_stack: input dim mismatch");

  if (cache != nullptr) {
    cache->caches.assign(stack.layers.size(), {});
    for (auto& c : cache->caches) c.resize(T);
  }

  Tensor<S> seq = x_seq;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& p = stack.layers[l];
    Tensor<S> out({T, p.hidden_dim});
    std::vector<S> s = states[l];
    std::vector<S> x(p.input_dim);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(seq.v.begin() + static_cast<std::ptrdiff_t>(t * p.input_dim),
                seq.v.begin() + static_cast<std::ptrdiff_t>((t + 1) * p.input_dim), x.begin());
      s = gru_cell_forward(p, x, s, cache ? &cache->caches[l][t] : nullptr, drop_rate, rng);
      std::copy(s.begin(), s.end(), out.v.begin() + static_cast<std::ptrdiff_t>(t * p.hidden_dim));
    }
    states[l] = s;
    seq = std::move(out);
  }
  return seq;
}

// Backward through the whole stack.  d_top is the gradient w.r.t. the top
// hidden sequence; d_final (optional, may be empty) holds gradients
// w.r.t. the per-layer final states.  Writes dx_seq and dstates0.
template <class S>
inline void gru_stack_backward(const GruStack<S>& stack, const GruStackCache<S>& cache,
                               const Tensor<S>& d_top, const GruStates<S>& d_final,
                               GruStack<S>& grads, Tensor<S>& dx_seq, GruStates<S>& dstates0) {
  const std::size_t L = stack.layers.size();
  const std::size_t T = d_top.dim(0);
  dstates0.assign(L, {});

  Tensor<S> d_seq = d_top;
  std::vector<S> dx, ds_prev;
  for (std::size_t li = L; li-- > 0;) {
    const auto& p = stack.layers[li];
    Tensor<S> d_below({T, p.input_dim});
    std::vector<S> ds_next =
        (!d_final.empty() && !d_final[li].empty()) ? d_final[li] : std::vector<S>(p.hidden_dim, S(0));
    std::vector<S> ds(p.hidden_dim);
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t i = 0; i < p.hidden_dim; ++i)
        ds[i] = ds_next[i] + d_seq.at(t, i);
      gru_cell_backward(p, cache.caches[li][t], ds, grads.layers[li], dx, ds_prev);
      std::copy(dx.begin(), dx.end(),
                d_below.v.begin() + static_cast<std::ptrdiff_t>(t * p.input_dim));
      ds_next = ds_prev;
    }
    dstates0[li] = std::move(ds_next);
    d_seq = std::move(d_below);
  }
  dx_seq = std::move(d_seq);
}

// Single step through all layers: the high-level update path.  Returns
// new states; input feeds layer 0, each layer's output feeds the next.
template <class S>
inline GruStates<S> gru_stack_step(const GruStack<S>& stack, const std::vector<S>& input,
                                   const GruStates<S>& states,
                                   std::vector<GruStepCache<S>>* cache = nullptr,
                                   double drop_rate = 0.0, Rng* rng = nullptr) {
  GruStates<S> out(stack.layers.size());
  if (cache != nullptr) cache->resize(stack.layers.size());
  std::vector<S> x = input;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    out[l] = gru_cell_forward(stack.layers[l], x, states[l], cache ? &(*cache)[l] : nullptr,
                              drop_rate, rng);
    x = out[l];
  }
  return out;
}

// Backward of gru_stack_step.  d_states holds gradients w.r.t. each
// layer's new state. Produces dinput and gradients w.r.t. old states.
template <class S>
inline void gru_stack_step_backward(const GruStack<S>& stack,
                                    const std::vector<GruStepCache<S>>& cache,
                                    const GruStates<S>& d_states, GruStack<S>& grads,
                                    std::vector<S>& dinput, GruStates<S>& dstates_prev) {
  const std::size_t L = stack.layers.size();
  dstates_prev.assign(L, {});
  std::vector<S> dx_above;  // gradient flowing into layer l's output from layer l+1's input
  std::vector<S> dx, ds_prev;
  for (std::size_t li = L; li-- > 0;) {
    const auto& p = stack.layers[li];
    std::vector<S> ds(p.hidden_dim, S(0));
    if (!d_states.empty() && !d_states[li].empty())
      for (std::size_t i = 0; i < p.hidden_dim; ++i) ds[i] += d_states[li][i];
    if (!dx_above.empty())
      for (std::size_t i = 0; i < p.hidden_dim; ++i) ds[i] += dx_above[i];
    gru_cell_backward(p, cache[li], ds, grads.layers[li], dx, ds_prev);
    dstates_prev[li] = std::move(ds_prev);
    dx_above = std::move(dx);
  }
  dinput = std::move(dx_above);
}

}  // namespace hiertcn
