// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two localized graph-convolution layers over an item co-interaction
// graph, trained with a noise-contrastive objective to produce item
// embeddings:
//   message  m_v = ReLU(Q z_v + q)
//   neighborhood n_u = Mean(m_v for v in N(u)), 0 when N(u) is empty
//   output   z_u' = ReLU(W [z_u ; n_u])

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <hiertcn/adam.hpp>
#include <hiertcn/common.hpp>
#include <hiertcn/item_graph.hpp>
#include <hiertcn/rng.hpp>
#include <hiertcn/tensor.hpp>

namespace hiertcn {

template <class S>
struct GcnLayer {
  Tensor<S> Q;  // [m, in]
  Tensor<S> q;  // [m]
  Tensor<S> W;  // [out, in + m]

  GcnLayer() = default;
  GcnLayer(std::size_t in, std::size_t msg, std::size_t out)
      : Q({msg, in}), q({msg}), W({out, in + msg}) {}

  std::size_t in_dim() const { return Q.shape[1]; }
  std::size_t msg_dim() const { return Q.shape[0]; }
  std::size_t out_dim() const { return W.shape[0]; }

  void init(Rng& rng, double scale) {
    for (auto* t : {&Q, &q, &W})
      for (auto& v : t->v) v = static_cast<S>(rng.uniform(-scale, scale));
  }

  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".Q", Q);
    fn(prefix + ".q", q);
    fn(prefix + ".W", W);
  }
};

template <class S>
struct GcnLayerCache {
  Tensor<S> z_in;     // [n, in]
  Tensor<S> msg_pre;  // [n, m]
  Tensor<S> nbr;      // [n, m]
  Tensor<S> out_pre;  // [n, out]
};

// Neighbors are folded in ascending index order so any permutation of the
// adjacency lists produces bit-identical output.
template <class S>
inline Tensor<S> graphconv_forward(const GcnLayer<S>& layer, const ItemGraph& g,
                                   const Tensor<S>& z_in, GcnLayerCache<S>* cache = nullptr) {
  const std::size_t n = g.size(), in = layer.in_dim(), m = layer.msg_dim(),
                    out = layer.out_dim();
  require_shape(z_in.rank() == 2 && z_in.shape[0] == n && z_in.shape[1] == in,
                "graphconv: feature shape mismatch");

  Tensor<S> msg_pre({n, m}), msg({n, m});
  for (std::size_t u = 0; u < n; ++u) {
    matvec(layer.Q, &z_in.at(u, 0), &msg_pre.at(u, 0));
    for (std::size_t j = 0; j < m; ++j) {
      const S a = msg_pre.at(u, j) + layer.q[j];
      msg_pre.at(u, j) = a;
      msg.at(u, j) = a > S(0) ? a : S(0);
    }
  }

  Tensor<S> nbr({n, m});
  for (std::size_t u = 0; u < n; ++u) {
    auto nb = g.adj[u];
    std::sort(nb.begin(), nb.end());
    if (nb.empty()) continue;
    for (std::size_t v : nb)
      for (std::size_t j = 0; j < m; ++j) nbr.at(u, j) += msg.at(v, j);
    const S inv = S(1) / static_cast<S>(nb.size());
    for (std::size_t j = 0; j < m; ++j) nbr.at(u, j) *= inv;
  }

  Tensor<S> out_pre({n, out}), z_out({n, out});
  std::vector<S> cat(in + m);
  for (std::size_t u = 0; u < n; ++u) {
    std::copy_n(&z_in.at(u, 0), in, cat.data());
    std::copy_n(&nbr.at(u, 0), m, cat.data() + in);
    matvec(layer.W, cat.data(), &out_pre.at(u, 0));
    for (std::size_t j = 0; j < out; ++j)
      z_out.at(u, j) = out_pre.at(u, j) > S(0) ? out_pre.at(u, j) : S(0);
  }

  if (cache != nullptr) {
    cache->z_in = z_in;
    cache->msg_pre = std::move(msg_pre);
    cache->nbr = std::move(nbr);
    cache->out_pre = std::move(out_pre);
  }
  return z_out;
}

template <class S>
inline Tensor<S> graphconv_backward(const GcnLayer<S>& layer, const ItemGraph& g,
                                    const GcnLayerCache<S>& cache, const Tensor<S>& d_out,
                                    GcnLayer<S>& grads) {
  const std::size_t n = g.size(), in = layer.in_dim(), m = layer.msg_dim(),
                    out = layer.out_dim();
  require_shape(d_out.rank() == 2 && d_out.shape[0] == n && d_out.shape[1] == out,
                "graphconv: gradient shape mismatch");

  Tensor<S> d_in({n, in}), d_msg({n, m});
  std::vector<S> cat(in + m), d_cat(in + m), d_pre(out);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < out; ++j)
      d_pre[j] = cache.out_pre.at(u, j) > S(0) ? d_out.at(u, j) : S(0);
    std::copy_n(&cache.z_in.at(u, 0), in, cat.data());
    std::copy_n(&cache.nbr.at(u, 0), m, cat.data() + in);
    outer_acc(grads.W, d_pre.data(), cat.data());
    std::fill(d_cat.begin(), d_cat.end(), S(0));
    matvec_t_acc(layer.W, d_pre.data(), d_cat.data());
    for (std::size_t j = 0; j < in; ++j) d_in.at(u, j) += d_cat[j];
    // Mean over N(u): each neighbor message receives d_nbr / |N(u)|.
    if (!g.adj[u].empty()) {
      const S inv = S(1) / static_cast<S>(g.adj[u].size());
      for (std::size_t v : g.adj[u])
        for (std::size_t j = 0; j < m; ++j) d_msg.at(v, j) += d_cat[in + j] * inv;
    }
  }

  std::vector<S> d_mpre(m);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t j = 0; j < m; ++j)
      d_mpre[j] = cache.msg_pre.at(v, j) > S(0) ? d_msg.at(v, j) : S(0);
    outer_acc(grads.Q, d_mpre.data(), &cache.z_in.at(v, 0));
    for (std::size_t j = 0; j < m; ++j) grads.q[j] += d_mpre[j];
    matvec_t_acc(layer.Q, d_mpre.data(), &d_in.at(v, 0));
  }
  return d_in;
}

template <class S>
struct Gcn {
  GcnLayer<S> l1, l2;

  Gcn() = default;
  Gcn(std::size_t d0, std::size_t hidden, std::size_t out)
      : l1(d0, hidden, hidden), l2(hidden, hidden, out) {}

  void init(Rng& rng, double scale = 0.5) {
    l1.init(rng, scale);
    l2.init(rng, scale);
  }

  void visit(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    l1.visit("gcn.l1", fn);
    l2.visit("gcn.l2", fn);
  }

  Tensor<S> forward(const ItemGraph& g, GcnLayerCache<S>* c1 = nullptr,
                    GcnLayerCache<S>* c2 = nullptr) const {
    Tensor<S> z0 = g.features.template cast<S>();
    Tensor<S> z1 = graphconv_forward(l1, g, z0, c1);
    return graphconv_forward(l2, g, z1, c2);
  }

  void backward(const ItemGraph& g, const GcnLayerCache<S>& c1, const GcnLayerCache<S>& c2,
                const Tensor<S>& d_out, Gcn<S>& grads) const {
    Tensor<S> d1 = graphconv_backward(l2, g, c2, d_out, grads.l2);
    graphconv_backward(l1, g, c1, d1, grads.l1);
  }
};

// One positive pair (u, v in N(u)) with its C uniform non-neighbor negatives.
struct NcePair {
  std::size_t u = 0;
  std::size_t v = 0;
  std::vector<std::size_t> negatives;
};

inline std::vector<NcePair> sample_nce_pairs(const ItemGraph& g, std::size_t negatives,
                                             Rng& rng) {
  if (negatives < 1) throw ConfigError("nce: negative count must be >= 1");
  std::vector<NcePair> pairs;
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (g.adj[u].empty()) continue;
    if (g.adj[u].size() + 1 >= g.size())
      throw DataError("nce: node " + std::to_string(g.ids[u]) + " has no non-neighbors");
    for (std::size_t v : g.adj[u]) {
      NcePair p{u, v, {}};
      while (p.negatives.size() < negatives) {
        const std::size_t cand = static_cast<std::size_t>(rng.below(g.size()));
        if (cand == u || g.has_edge(u, cand)) continue;
        p.negatives.push_back(cand);
      }
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

// Mean NCE loss over positive pairs:
//   -log sigmoid(z_u . z_v) - sum_c log sigmoid(-z_u . z_nc)
// With all-zero embeddings each pair contributes (1 + C) log 2.
template <class S>
inline S gcn_nce_loss(const Tensor<S>& Z, const std::vector<NcePair>& pairs,
                      Tensor<S>* d_z = nullptr) {
  require_shape(Z.rank() == 2, "nce: embeddings must be [n, d]");
  require_shape(!pairs.empty(), "nce: no positive pairs");
  const std::size_t d = Z.shape[1];
  if (d_z != nullptr) {
    *d_z = Tensor<S>(Z.shape);
  }
  const S inv = S(1) / static_cast<S>(pairs.size());
  S loss = S(0);
  for (const auto& p : pairs) {
    const S* zu = &Z.at(p.u, 0);
    const S* zv = &Z.at(p.v, 0);
    const S pos = dot(zu, zv, d);
    loss += -log_sigmoid(pos);
    if (d_z != nullptr) {
      const S w = -sigmoid(-pos) * inv;  // d(-log s(x))/dx = s(x) - 1
      axpy_raw(w, zv, &d_z->at(p.u, 0), d);
      axpy_raw(w, zu, &d_z->at(p.v, 0), d);
    }
    for (std::size_t nidx : p.negatives) {
      const S* zn = &Z.at(nidx, 0);
      const S neg = dot(zu, zn, d);
      loss += -log_sigmoid(-neg);
      if (d_z != nullptr) {
        const S w = sigmoid(neg) * inv;
        axpy_raw(w, zn, &d_z->at(p.u, 0), d);
        axpy_raw(w, zu, &d_z->at(nidx, 0), d);
      }
    }
  }
  return loss * inv;
}

struct GcnTrainConfig {
  std::size_t feature_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;
  std::size_t negatives = 5;
  std::size_t steps = 200;
  std::int64_t window_seconds = 1800;
  double lr = 0.01;
  std::uint64_t seed = 1;

  void validate() const {
    if (feature_dim == 0 || hidden_dim == 0 || embed_dim == 0)
      throw ConfigError("gcn: dims must be > 0");
    if (negatives < 1) throw ConfigError("gcn: negatives must be >= 1");
    if (steps < 1) throw ConfigError("gcn: steps must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("gcn: lr must be > 0");
  }
};

struct GcnTrainResult {
  std::vector<std::uint64_t> ids;
  Tensor<float> embeddings;  // [n, embed_dim]
  std::vector<double> losses;
};

// Full-batch training over every co-interaction edge; fresh negatives per
// step.  Returns the final embeddings in graph id order.
inline GcnTrainResult train_item_embeddings(const std::vector<Interaction>& log,
                                            const GcnTrainConfig& cfg) {
  cfg.validate();
  ItemGraph g = build_item_graph(log, cfg.window_seconds);
  if (g.edge_count() == 0) throw DataError("gcn: item graph has no edges");
  Rng rng(cfg.seed);
  attach_random_features(g, cfg.feature_dim, rng.split(0x21));

  Gcn<double> model(cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim);
  Rng init_rng = rng.split(0x22);
  model.init(init_rng);

  ParamRefs<double> params;
  model.visit([&](const std::string& n, Tensor<double>& t) { params.add(n, t); });
  AdamState<double> adam = AdamState<double>::for_params(params);
  AdamConfig opt;
  opt.lr = cfg.lr;

  Rng neg_rng = rng.split(0x23);
  GcnTrainResult res;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    GcnLayerCache<double> c1, c2;
    Tensor<double> Z = model.forward(g, &c1, &c2);
    const auto pairs = sample_nce_pairs(g, cfg.negatives, neg_rng);
    Tensor<double> d_z;
    const double loss = gcn_nce_loss(Z, pairs, &d_z);
    if (!std::isfinite(loss)) throw NumericError("gcn: non-finite loss at step " +
                                                 std::to_string(step));
    res.losses.push_back(loss);

    Gcn<double> grads(cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim);
    model.backward(g, c1, c2, d_z, grads);
    ParamRefs<double> grad_refs;
    grads.visit([&](const std::string& n, Tensor<double>& t) { grad_refs.add(n, t); });
    adam_step(params, grad_refs, adam, opt);
  }

  res.ids = g.ids;
  res.embeddings = model.forward(g).cast<float>();
  return res;
}

// Mean pairwise cosine between two index sets (i != j when sets overlap).
template <class S>
inline double mean_pairwise_cosine(const Tensor<S>& Z, const std::vector<std::size_t>& a,
                                   const std::vector<std::size_t>& b) {
  const std::size_t d = Z.shape[1];
  auto norm = [&](std::size_t i) {
    return std::sqrt(std::max(1e-12, static_cast<double>(dot(&Z.at(i, 0), &Z.at(i, 0), d))));
  };
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i : a)
    for (std::size_t j : b) {
      if (i == j) continue;
      sum += static_cast<double>(dot(&Z.at(i, 0), &Z.at(j, 0), d)) / (norm(i) * norm(j));
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace hiertcn
