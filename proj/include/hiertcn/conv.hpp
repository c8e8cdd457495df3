// SPDX-License-Identifier: Apache-2.0
//
// Causal dilated 1D convolution and the residual block built from it.
//
//   out_t = sum_{j=0..k-1} f_j^T x_{t - l*j}     (x at index <= 0 reads zero)
//
// Causality: output at t never reads inputs past t.  Blocks pair two
// equal-dilation convolutions with a ReLU between them and add a skip
// path (identity when channel counts match, else a learned 1x1 map).
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hiertcn/rng.hpp"
#include "hiertcn/tensor.hpp"

namespace hiertcn {

template <class S>
struct ConvFilterBank {
  Tensor<S> f;              // [k x d_in x d_out]
  std::size_t dilation = 1; // l_r

  std::size_t k() const { return f.dim(0); }
  std::size_t d_in() const { return f.dim(1); }
  std::size_t d_out() const { return f.dim(2); }

  static ConvFilterBank sized(std::size_t k, std::size_t d_in, std::size_t d_out,
                              std::size_t dilation) {
    require(k >= 1 && dilation >= 1, "conv: k and dilation must be >= 1");
    ConvFilterBank b;
    b.f = Tensor<S>({k, d_in, d_out});
    b.dilation = dilation;
    return b;
  }

  void init(Rng& rng) { init_uniform_fanin(f, k() * d_in(), rng); }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".f", f);
  }
};

// x is [T x d_in]; returns [T x d_out].
template <class S>
inline Tensor<S> causal_dilated_conv(const ConvFilterBank<S>& bank, const Tensor<S>& x) {
  require_shape(x.rank() == 2 && x.dim(1) == bank.d_in(), "conv: input shape mismatch");
  const std::size_t T = x.dim(0), din = bank.d_in(), dout = bank.d_out();
  const std::size_t k = bank.k(), l = bank.dilation;
  Tensor<S> out({T, dout});
  for (std::size_t j = 0; j < k; ++j) {
    const S* fj = bank.f.v.data() + j * din * dout;  // [d_in x d_out]
    const std::size_t off = l * j;
    for (std::size_t t = off; t < T; ++t) {
      const S* xt = x.v.data() + (t - off) * din;
      S* ot = out.v.data() + t * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const S xi = xt[i];
        if (xi == S(0)) continue;
        const S* fr = fj + i * dout;
        for (std::size_t o = 0; o < dout; ++o) ot[o] += xi * fr[o];
      }
    }
  }
  return out;
}

// dout is [T x d_out]; accumulates filter gradients into dbank and writes
// the input gradient (same shape as x) into dx.
template <class S>
inline void causal_dilated_conv_backward(const ConvFilterBank<S>& bank, const Tensor<S>& x,
                                         const Tensor<S>& dout, ConvFilterBank<S>& dbank,
                                         Tensor<S>& dx) {
  const std::size_t T = x.dim(0), din = bank.d_in(), dout_c = bank.d_out();
  const std::size_t k = bank.k(), l = bank.dilation;
  dx = Tensor<S>({T, din});
  for (std::size_t j = 0; j < k; ++j) {
    const S* fj = bank.f.v.data() + j * din * dout_c;
    S* dfj = dbank.f.v.data() + j * din * dout_c;
    const std::size_t off = l * j;
    for (std::size_t t = off; t < T; ++t) {
      const S* xt = x.v.data() + (t - off) * din;
      S* dxt = dx.v.data() + (t - off) * din;
      const S* gt = dout.v.data() + t * dout_c;
      for (std::size_t i = 0; i < din; ++i) {
        const S* fr = fj + i * dout_c;
        S* dfr = dfj + i * dout_c;
        const S xi = xt[i];
        S acc = S(0);
        for (std::size_t o = 0; o < dout_c; ++o) {
          const S g = gt[o];
          acc += g * fr[o];
          dfr[o] += g * xi;
        }
        dxt[i] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Residual block: out = conv2(ReLU(conv1(x))) + skip(x).
// ---------------------------------------------------------------------------

template <class S>
struct TcnBlock {
  ConvFilterBank<S> conv1, conv2;
  ConvFilterBank<S> proj;  // 1x1 skip map; unused when d_in == d_out
  bool has_proj = false;

  std::size_t d_in() const { return conv1.d_in(); }
  std::size_t d_out() const { return conv2.d_out(); }
  std::size_t dilation() const { return conv1.dilation; }

  // Trailing timesteps one block can see past the current one.
  std::size_t lookback() const { return 2 * (conv1.k() - 1) * conv1.dilation; }

  static TcnBlock sized(std::size_t k, std::size_t d_in, std::size_t d_out,
                        std::size_t channels, std::size_t dilation) {
    TcnBlock b;
    b.conv1 = ConvFilterBank<S>::sized(k, d_in, channels, dilation);
    b.conv2 = ConvFilterBank<S>::sized(k, channels, d_out, dilation);
    b.has_proj = d_in != d_out;
    if (b.has_proj) b.proj = ConvFilterBank<S>::sized(1, d_in, d_out, 1);
    return b;
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (has_proj) proj.init(rng);
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    conv1.visit(prefix + ".conv1", fn);
    conv2.visit(prefix + ".conv2", fn);
    if (has_proj) proj.visit(prefix + ".proj", fn);
  }
};

template <class S>
struct TcnBlockCache {
  Tensor<S> x;     // block input
  Tensor<S> y1;    // conv1 output, pre-activation
  Tensor<S> a1;    // ReLU(y1) with dropout applied
  std::vector<S> keep;  // dropout mask over a1, empty = off
};

template <class S>
inline Tensor<S> tcn_block_forward(const TcnBlock<S>& blk, const Tensor<S>& x,
                                   TcnBlockCache<S>* cache = nullptr, double drop_rate = 0.0,
                                   Rng* rng = nullptr) {
  Tensor<S> y1 = causal_dilated_conv(blk.conv1, x);
  Tensor<S> a1 = y1;
  for (auto& v : a1.v) v = relu(v);
  std::vector<S> keep;
  if (drop_rate > 0.0 && rng != nullptr) {
    keep = dropout_mask<S>(a1.numel(), drop_rate, *rng);
    for (std::size_t i = 0; i < a1.numel(); ++i) a1.v[i] *= keep[i];
  }
  Tensor<S> out = causal_dilated_conv(blk.conv2, a1);
  if (blk.has_proj) {
    Tensor<S> skip = causal_dilated_conv(blk.proj, x);
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += skip.v[i];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += x.v[i];
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->y1 = std::move(y1);
    cache->a1 = std::move(a1);
    cache->keep = std::move(keep);
  }
  return out;
}

template <class S>
inline void tcn_block_backward(const TcnBlock<S>& blk, const TcnBlockCache<S>& c,
                               const Tensor<S>& dout, TcnBlock<S>& grads, Tensor<S>& dx) {
  Tensor<S> da1;
  causal_dilated_conv_backward(blk.conv2, c.a1, dout, grads.conv2, da1);
  // through dropout and ReLU
  for (std::size_t i = 0; i < da1.numel(); ++i) {
    S g = da1.v[i];
    if (!c.keep.empty()) g *= c.keep[i];
    da1.v[i] = c.y1.v[i] > S(0) ? g : S(0);
  }
  causal_dilated_conv_backward(blk.conv1, c.x, da1, grads.conv1, dx);
  if (blk.has_proj) {
    Tensor<S> dskip;
    causal_dilated_conv_backward(blk.proj, c.x, dout, grads.proj, dskip);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.v[i] += dskip.v[i];
  } else {
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.v[i] += dout.v[i];
  }
}

// ---------------------------------------------------------------------------
// A stack of residual blocks, dilation growing per the configured schedule.
// ---------------------------------------------------------------------------

template <class S>
struct TcnStack {
  std::vector<TcnBlock<S>> blocks;

  static TcnStack sized(std::size_t k, std::size_t d_in, std::size_t channels,
                        const std::vector<std::size_t>& dilations) {
    TcnStack s;
    for (std::size_t b = 0; b < dilations.size(); ++b) {
      const std::size_t in = b == 0 ? d_in : channels;
      s.blocks.push_back(TcnBlock<S>::sized(k, in, channels, channels, dilations[b]));
    }
    return s;
  }

  std::size_t d_out() const { return blocks.empty() ? 0 : blocks.back().d_out(); }

  // Total trailing lookback across blocks; the receptive field is this + 1.
  std::size_t lookback() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.lookback();
    return n;
  }

  void init(Rng& rng) {
    for (auto& b : blocks) b.init(rng);
  }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t b = 0; b < blocks.size(); ++b)
      blocks[b].visit(prefix + ".block" + std::to_string(b), fn);
  }
};

template <class S>
struct TcnStackCache {
  std::vector<TcnBlockCache<S>> blocks;
};

template <class S>
inline Tensor<S> tcn_stack_forward(const TcnStack<S>& stack, const Tensor<S>& x,
                                   TcnStackCache<S>* cache = nullptr, double drop_rate = 0.0,
                                   Rng* rng = nullptr) {
  if (cache != nullptr) cache->blocks.resize(stack.blocks.size());
  Tensor<S> seq = x;
  for (std::size_t b = 0; b < stack.blocks.size(); ++b)
    seq = tcn_block_forward(stack.blocks[b], seq, cache ? &cache->blocks[b] : nullptr, drop_rate,
                            rng);
  return seq;
}

template <class S>
inline void tcn_stack_backward(const TcnStack<S>& stack, const TcnStackCache<S>& cache,
                               const Tensor<S>& dout, TcnStack<S>& grads, Tensor<S>& dx) {
  Tensor<S> d = dout;
  for (std::size_t b = stack.blocks.size(); b-- > 0;) {
    Tensor<S> dprev;
    tcn_block_backward(stack.blocks[b], cache.blocks[b], d, grads.blocks[b], dprev);
    d = std::move(dprev);
  }
  dx = std::move(d);
}

}  // namespace hiertcn
