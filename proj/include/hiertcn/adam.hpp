// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hiertcn/tensor.hpp"

namespace hiertcn {

// Flat view over a model's named parameter tensors, built by visit().
template <class S>
struct ParamRefs {
  std::vector<std::pair<std::string, Tensor<S>*>> items;

  void add(const std::string& name, Tensor<S>& t) { items.emplace_back(name, &t); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items) n += t->numel();
    return n;
  }
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  std::vector<Tensor<S>> m;  // first moments, parallel to the param list
  std::vector<Tensor<S>> v;  // second moments
  std::uint64_t step = 0;

  static AdamState for_params(const ParamRefs<S>& params) {
    AdamState st;
    for (const auto& [_, t] : params.items) {
      st.m.push_back(Tensor<S>(t->shape));
      st.v.push_back(Tensor<S>(t->shape));
    }
    return st;
  }
};

// Bias-corrected Adam step.  A non-finite gradient rejects the whole step
// (no mutation) and reports the offending tensor.
template <class S>
inline void adam_step(ParamRefs<S>& params, const ParamRefs<S>& grads, AdamState<S>& state,
                      const AdamConfig& cfg) {
  require_shape(params.items.size() == grads.items.size() && params.items.size() == state.m.size(),
                "adam: param/grad/state layout mismatch");
  for (std::size_t i = 0; i < grads.items.size(); ++i) {
    if (!grads.items[i].second->finite())
      throw NumericError("adam: non-finite gradient in " + grads.items[i].first);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    Tensor<S>& p = *params.items[i].second;
    const Tensor<S>& g = *grads.items[i].second;
    Tensor<S>& m = state.m[i];
    Tensor<S>& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<S>(static_cast<double>(p[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace hiertcn
