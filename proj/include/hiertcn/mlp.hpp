// SPDX-License-Identifier: Apache-2.0
//
// Two-layer prediction head: u = W2 ReLU(W1 s + b1) + b2.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hiertcn/rng.hpp"
#include "hiertcn/tensor.hpp"

namespace hiertcn {

template <class S>
struct MlpHeadParams {
  Tensor<S> W1;  // [hidden x in]
  Tensor<S> b1;  // [hidden]
  Tensor<S> W2;  // [out x hidden]
  Tensor<S> b2;  // [out]

  std::size_t in_dim() const { return W1.dim(1); }
  std::size_t hidden_dim() const { return W1.dim(0); }
  std::size_t out_dim() const { return W2.dim(0); }

  static MlpHeadParams sized(std::size_t in, std::size_t hidden, std::size_t out) {
    MlpHeadParams p;
    p.W1 = Tensor<S>({hidden, in});
    p.b1 = Tensor<S>({hidden});
    p.W2 = Tensor<S>({out, hidden});
    p.b2 = Tensor<S>({out});
    return p;
  }

  void init(Rng& rng) {
    init_uniform_fanin(W1, in_dim(), rng);
    init_uniform_fanin(W2, hidden_dim(), rng);
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".W1", W1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".W2", W2);
    fn(prefix + ".b2", b2);
  }
};

template <class S>
struct MlpHeadCache {
  std::vector<S> s;   // input
  std::vector<S> z1;  // pre-activation
};

template <class S>
inline std::vector<S> mlp_head(const MlpHeadParams<S>& p, const std::vector<S>& s,
                               MlpHeadCache<S>* cache = nullptr) {
  require_shape(s.size() == p.in_dim(), "mlp_head: input dim mismatch");
  std::vector<S> z1(p.hidden_dim());
  matvec(p.W1, s.data(), z1.data());
  for (std::size_t i = 0; i < z1.size(); ++i) z1[i] += p.b1[i];
  std::vector<S> a1(z1.size());
  for (std::size_t i = 0; i < z1.size(); ++i) a1[i] = relu(z1[i]);
  std::vector<S> u(p.out_dim());
  matvec(p.W2, a1.data(), u.data());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] += p.b2[i];
  if (cache != nullptr) {
    cache->s = s;
    cache->z1 = std::move(z1);
  }
  return u;
}

template <class S>
inline void mlp_head_backward(const MlpHeadParams<S>& p, const MlpHeadCache<S>& c,
                              const std::vector<S>& du, MlpHeadParams<S>& grads,
                              std::vector<S>& ds) {
  const std::size_t H = p.hidden_dim();
  std::vector<S> a1(H);
  for (std::size_t i = 0; i < H; ++i) a1[i] = relu(c.z1[i]);

  outer_acc(grads.W2, du.data(), a1.data());
  for (std::size_t i = 0; i < du.size(); ++i) grads.b2[i] += du[i];

  std::vector<S> da1(H, S(0));
  matvec_t_acc(p.W2, du.data(), da1.data());
  for (std::size_t i = 0; i < H; ++i)
    if (c.z1[i] <= S(0)) da1[i] = S(0);

  outer_acc(grads.W1, da1.data(), c.s.data());
  for (std::size_t i = 0; i < H; ++i) grads.b1[i] += da1[i];

  ds.assign(p.in_dim(), S(0));
  matvec_t_acc(p.W1, da1.data(), ds.data());
}

}  // namespace hiertcn
