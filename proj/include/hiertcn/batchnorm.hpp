// SPDX-License-Identifier: Apache-2.0
//
// Batch normalization with statistics tracked per time step and padded
// positions excluded.  Sequences in a batch are zero-padded to a common
// length; the validity mask keeps those entries out of the statistics.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hiertcn/tensor.hpp"

namespace hiertcn {

template <class S>
struct MaskedTemporalBatchNorm {
  std::size_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum*running + (1-momentum)*batch
  Tensor<S> gamma, beta;
  // Running stats per time step, grown on demand.  [t][c]
  std::vector<std::vector<S>> run_mean;
  std::vector<std::vector<S>> run_var;

  static MaskedTemporalBatchNorm sized(std::size_t channels) {
    MaskedTemporalBatchNorm bn;
    bn.channels = channels;
    bn.gamma = Tensor<S>({channels});
    bn.gamma.fill(S(1));
    bn.beta = Tensor<S>({channels});
    return bn;
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }

  void ensure_timesteps(std::size_t t_count) {
    while (run_mean.size() < t_count) {
      run_mean.emplace_back(channels, S(0));
      run_var.emplace_back(channels, S(1));
    }
  }

  // Stats used at inference for time step t; clamps past the recorded range.
  const std::vector<S>& mean_at(std::size_t t) const {
    static const std::vector<S> zero;
    if (run_mean.empty()) {
      const_cast<MaskedTemporalBatchNorm*>(this)->ensure_timesteps(1);
    }
    return run_mean[t < run_mean.size() ? t : run_mean.size() - 1];
  }
  const std::vector<S>& var_at(std::size_t t) const {
    if (run_var.empty()) {
      const_cast<MaskedTemporalBatchNorm*>(this)->ensure_timesteps(1);
    }
    return run_var[t < run_var.size() ? t : run_var.size() - 1];
  }
};

template <class S>
struct BatchNormCache {
  Tensor<S> x;                         // input [B x T x C]
  Tensor<S> mask;                      // [B x T]
  std::vector<std::vector<S>> mean;    // batch stats actually used, [t][c]
  std::vector<std::vector<S>> var;
  std::vector<std::size_t> count;      // valid entries per t
  std::vector<bool> used_batch_stats;  // false when a step fell back to running stats
};

// Training-mode forward over [B x T x C] with mask [B x T].  Per-timestep
// mean/variance come from valid entries only; a step with no valid entry
// normalizes with running stats and skips the update.  Masked positions
// emit zeros.
template <class S>
inline Tensor<S> batchnorm_forward_train(MaskedTemporalBatchNorm<S>& bn, const Tensor<S>& x,
                                         const Tensor<S>& mask, BatchNormCache<S>* cache = nullptr) {
  require_shape(x.rank() == 3 && x.dim(2) == bn.channels, "batchnorm: bad input shape");
  const std::size_t B = x.dim(0), T = x.dim(1), C = bn.channels;
  bn.ensure_timesteps(T);
  Tensor<S> out({B, T, C});

  std::vector<std::vector<S>> means(T, std::vector<S>(C, S(0)));
  std::vector<std::vector<S>> vars(T, std::vector<S>(C, S(0)));
  std::vector<std::size_t> counts(T, 0);
  std::vector<bool> used(T, false);

  for (std::size_t t = 0; t < T; ++t) {
    std::size_t n = 0;
    for (std::size_t b = 0; b < B; ++b)
      if (mask.at(b, t) != S(0)) ++n;
    counts[t] = n;
    if (n == 0) {
      means[t] = bn.mean_at(t);
      vars[t] = bn.var_at(t);
      continue;
    }
    used[t] = true;
    auto& mu = means[t];
    auto& va = vars[t];
    for (std::size_t b = 0; b < B; ++b) {
      if (mask.at(b, t) == S(0)) continue;
      for (std::size_t c = 0; c < C; ++c) mu[c] += x.at(b, t, c);
    }
    for (std::size_t c = 0; c < C; ++c) mu[c] /= static_cast<S>(n);
    for (std::size_t b = 0; b < B; ++b) {
      if (mask.at(b, t) == S(0)) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const S d = x.at(b, t, c) - mu[c];
        va[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) va[c] /= static_cast<S>(n);
    // update running stats from valid entries only
    for (std::size_t c = 0; c < C; ++c) {
      bn.run_mean[t][c] =
          static_cast<S>(bn.momentum) * bn.run_mean[t][c] + static_cast<S>(1.0 - bn.momentum) * mu[c];
      bn.run_var[t][c] =
          static_cast<S>(bn.momentum) * bn.run_var[t][c] + static_cast<S>(1.0 - bn.momentum) * va[c];
    }
  }

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      if (mask.at(b, t) == S(0)) continue;  // masked positions stay zero
      for (std::size_t c = 0; c < C; ++c) {
        const S xhat = (x.at(b, t, c) - means[t][c]) /
                       std::sqrt(vars[t][c] + static_cast<S>(bn.eps));
        out.at(b, t, c) = bn.gamma[c] * xhat + bn.beta[c];
      }
    }

  if (cache != nullptr) {
    cache->x = x;
    cache->mask = mask;
    cache->mean = std::move(means);
    cache->var = std::move(vars);
    cache->count = std::move(counts);
    cache->used_batch_stats = std::move(used);
  }
  return out;
}

// Inference-mode forward; normalizes with running stats.
template <class S>
inline Tensor<S> batchnorm_forward_eval(const MaskedTemporalBatchNorm<S>& bn, const Tensor<S>& x,
                                        const Tensor<S>& mask) {
  const std::size_t B = x.dim(0), T = x.dim(1), C = bn.channels;
  Tensor<S> out({B, T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const auto& mu = bn.mean_at(t);
    const auto& va = bn.var_at(t);
    for (std::size_t b = 0; b < B; ++b) {
      if (mask.at(b, t) == S(0)) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const S xhat = (x.at(b, t, c) - mu[c]) / std::sqrt(va[c] + static_cast<S>(bn.eps));
        out.at(b, t, c) = bn.gamma[c] * xhat + bn.beta[c];
      }
    }
  }
  return out;
}

// Backward for the training-mode forward.  Accumulates dgamma/dbeta into
// `grads` and writes dx (zeros at masked positions).
template <class S>
inline void batchnorm_backward(const MaskedTemporalBatchNorm<S>& bn, const BatchNormCache<S>& c,
                               const Tensor<S>& dout, MaskedTemporalBatchNorm<S>& grads,
                               Tensor<S>& dx) {
  const std::size_t B = c.x.dim(0), T = c.x.dim(1), C = bn.channels;
  dx = Tensor<S>({B, T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const auto& mu = c.mean[t];
    const auto& va = c.var[t];
    const std::size_t n = c.count[t];
    for (std::size_t ch = 0; ch < C; ++ch) {
      const S inv_std = S(1) / std::sqrt(va[ch] + static_cast<S>(bn.eps));
      // First pass: dgamma/dbeta plus the reduction terms.
      S sum_dy = S(0), sum_dy_xhat = S(0);
      for (std::size_t b = 0; b < B; ++b) {
        if (c.mask.at(b, t) == S(0)) continue;
        const S xhat = (c.x.at(b, t, ch) - mu[ch]) * inv_std;
        const S dy = dout.at(b, t, ch);
        grads.gamma[ch] += dy * xhat;
        grads.beta[ch] += dy;
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
      }
      if (n == 0) continue;
      const S g = bn.gamma[ch];
      if (!c.used_batch_stats[t]) {
        // Normalized against fixed running stats: plain scaling.
        for (std::size_t b = 0; b < B; ++b) {
          if (c.mask.at(b, t) == S(0)) continue;
          dx.at(b, t, ch) = dout.at(b, t, ch) * g * inv_std;
        }
        continue;
      }
      const S inv_n = S(1) / static_cast<S>(n);
      for (std::size_t b = 0; b < B; ++b) {
        if (c.mask.at(b, t) == S(0)) continue;
        const S xhat = (c.x.at(b, t, ch) - mu[ch]) * inv_std;
        const S dy = dout.at(b, t, ch);
        dx.at(b, t, ch) =
            g * inv_std * (dy - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
      }
    }
  }
}

}  // namespace hiertcn
