// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hiertcn/adam.hpp"
#include "hiertcn/batchnorm.hpp"
#include "hiertcn/conv.hpp"
#include "hiertcn/gradcheck.hpp"
#include "hiertcn/gru.hpp"
#include "hiertcn/mlp.hpp"
#include "hiertcn/tensor.hpp"

using namespace hiertcn;

namespace {

FdView view_of(Tensor<double>& t, const Tensor<double>& g) {
  return FdView{t.v.data(), t.numel(), g.v.data()};
}

FdView view_of(std::vector<double>& t, const std::vector<double>& g) {
  return FdView{t.data(), t.size(), g.data()};
}

std::vector<double> rand_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor<double> rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

TEST_CASE("gru cell zero params zero input") {
  auto p = GruLayerParams<double>::sized(3, 3);
  std::vector<double> x(3, 0.0), s(3, 0.0);
  auto out = gru_cell_forward(p, x, s);
  for (double v : out) REQUIRE(v == 0.0);
}

TEST_CASE("gru cell zero params halves the state") {
  auto p = GruLayerParams<double>::sized(2, 4);
  std::vector<double> x = {0.3, -1.2};
  std::vector<double> s = {1.0, -2.0, 0.5, 4.0};
  auto out = gru_cell_forward(p, x, s);
  for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(out[i] == Catch::Approx(0.5 * s[i]));
}

TEST_CASE("gru cell scalar hand evaluation") {
  auto p = GruLayerParams<double>::sized(1, 1);
  p.Wg[0] = p.Wr[0] = p.Wh[0] = 1.0;
  p.Ug[0] = p.Ur[0] = p.Uh[0] = 1.0;
  GruStepCache<double> cache;
  auto out = gru_cell_forward(p, {0.0}, {1.0}, &cache);

  const double g = 1.0 / (1.0 + std::exp(-1.0));
  REQUIRE(cache.g[0] == Catch::Approx(g).margin(1e-12));
  REQUIRE(cache.r[0] == Catch::Approx(g).margin(1e-12));
  REQUIRE(cache.g[0] == Catch::Approx(0.7311).margin(5e-5));
  const double h = std::tanh(g);
  REQUIRE(cache.h[0] == Catch::Approx(h).margin(1e-12));
  REQUIRE(cache.h[0] == Catch::Approx(0.6237).margin(5e-5));
  REQUIRE(out[0] == Catch::Approx((1.0 - g) * h + g).margin(1e-12));
  REQUIRE(out[0] == Catch::Approx(0.8988).margin(5e-5));
}

TEST_CASE("gru cell shape errors") {
  auto p = GruLayerParams<double>::sized(2, 3);
  std::vector<double> x(4, 0.0), s(3, 0.0);
  REQUIRE_THROWS_AS(gru_cell_forward(p, x, s), ShapeError);
  std::vector<double> x2(2, 0.0), s2(2, 0.0);
  REQUIRE_THROWS_AS(gru_cell_forward(p, x2, s2), ShapeError);
}

TEST_CASE("gru cell gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto p = GruLayerParams<double>::sized(4, 4, seed % 2 == 0);
    p.init(rng);
    if (p.has_bias) {
      for (auto* b : {&p.bg, &p.br, &p.bh})
        for (auto& v : b->v) v = rng.uniform(-0.5, 0.5);
    }
    auto x = rand_vec(4, rng);
    auto s0 = rand_vec(4, rng);
    auto w = rand_vec(4, rng);

    auto loss = [&] {
      auto out = gru_cell_forward(p, x, s0);
      return dot(out, w);
    };

    GruStepCache<double> cache;
    gru_cell_forward(p, x, s0, &cache);
    auto grads = GruLayerParams<double>::sized(4, 4, p.has_bias);
    std::vector<double> dx, ds_prev;
    gru_cell_backward(p, cache, w, grads, dx, ds_prev);

    std::vector<FdView> views = {
        view_of(p.Wg, grads.Wg), view_of(p.Wr, grads.Wr), view_of(p.Wh, grads.Wh),
        view_of(p.Ug, grads.Ug), view_of(p.Ur, grads.Ur), view_of(p.Uh, grads.Uh),
        view_of(x, dx),          view_of(s0, ds_prev)};
    if (p.has_bias) {
      views.push_back(view_of(p.bg, grads.bg));
      views.push_back(view_of(p.br, grads.br));
      views.push_back(view_of(p.bh, grads.bh));
    }
    auto res = finite_difference_check(loss, views);
    INFO("seed " << seed);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("gru cell dropout masks candidate only") {
  Rng rng(7);
  auto p = GruLayerParams<double>::sized(2, 8);
  p.init(rng);
  auto x = rand_vec(2, rng);
  auto s0 = rand_vec(8, rng);
  GruStepCache<double> cache;
  Rng drng(11);
  auto out = gru_cell_forward(p, x, s0, &cache, 0.5, &drng);
  REQUIRE(cache.keep.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    // the state pathway survives even where the candidate is dropped
    const double expect =
        (1.0 - cache.g[i]) * cache.h[i] * cache.keep[i] + cache.g[i] * s0[i];
    REQUIRE(out[i] == Catch::Approx(expect).margin(1e-12));
    if (cache.keep[i] == 0.0) REQUIRE(out[i] == Catch::Approx(cache.g[i] * s0[i]).margin(1e-12));
  }
}

TEST_CASE("gru cell backward with frozen dropout mask matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto p = GruLayerParams<double>::sized(3, 6);
    p.init(rng);
    auto x = rand_vec(3, rng);
    auto s0 = rand_vec(6, rng);
    auto w = rand_vec(6, rng);
    // Freeze one mask draw, then treat it as a constant of the op.
    Rng drng(seed + 100);
    GruStepCache<double> cache;
    gru_cell_forward(p, x, s0, &cache, 0.5, &drng);
    const std::vector<double> keep = cache.keep;

    auto loss = [&] {
      GruStepCache<double> c2;
      auto out = gru_cell_forward(p, x, s0, &c2);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = (1.0 - c2.g[i]) * c2.h[i] * keep[i] + c2.g[i] * s0[i];
        acc += w[i] * s;
      }
      return acc;
    };

    auto grads = GruLayerParams<double>::sized(3, 6);
    std::vector<double> dx, ds_prev;
    gru_cell_backward(p, cache, w, grads, dx, ds_prev);
    std::vector<FdView> views = {view_of(p.Wg, grads.Wg), view_of(p.Wr, grads.Wr),
                                 view_of(p.Wh, grads.Wh), view_of(p.Ug, grads.Ug),
                                 view_of(p.Ur, grads.Ur), view_of(p.Uh, grads.Uh),
                                 view_of(x, dx)};
    auto res = finite_difference_check(loss, views);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// GRU stack
// ---------------------------------------------------------------------------

TEST_CASE("gru stack single layer single step reduces to the cell") {
  Rng rng(3);
  auto stack = GruStack<double>::sized(3, 5, 1);
  stack.init(rng);
  auto x = rand_vec(3, rng);
  Tensor<double> xs({1, 3});
  xs.v = x;
  auto states = stack.zero_states();
  auto out = gru_stack_forward(stack, xs, states);
  auto cell = gru_cell_forward(stack.layers[0], x, std::vector<double>(5, 0.0));
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(out.at(0, i) == cell[i]);
    REQUIRE(states[0][i] == cell[i]);
  }
}

TEST_CASE("gru stack split-resume equality") {
  Rng rng(5);
  auto stack = GruStack<double>::sized(2, 4, 3);
  stack.init(rng);
  auto xs = rand_tensor({8, 2}, rng);

  auto full_states = stack.zero_states();
  auto full = gru_stack_forward(stack, xs, full_states);

  Tensor<double> a({3, 2}), b({5, 2});
  std::copy(xs.v.begin(), xs.v.begin() + 6, a.v.begin());
  std::copy(xs.v.begin() + 6, xs.v.end(), b.v.begin());
  auto states = stack.zero_states();
  auto out_a = gru_stack_forward(stack, a, states);
  auto out_b = gru_stack_forward(stack, b, states);

  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(out_a.at(t, i) == full.at(t, i));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(out_b.at(t, i) == full.at(t + 3, i));
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(states[l][i] == full_states[l][i]);
}

TEST_CASE("gru stack zero params emits zeros") {
  auto stack = GruStack<double>::sized(3, 4, 2);
  Rng rng(1);
  auto xs = rand_tensor({6, 3}, rng);
  auto states = stack.zero_states();
  auto out = gru_stack_forward(stack, xs, states);
  for (double v : out.v) REQUIRE(v == 0.0);
}

TEST_CASE("gru stack rejects an empty sequence") {
  auto stack = GruStack<double>::sized(2, 2, 1);
  Tensor<double> xs({0, 2});
  auto states = stack.zero_states();
  REQUIRE_THROWS_AS(gru_stack_forward(stack, xs, states), Error);
}

TEST_CASE("gru stack gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 31 + 1);
    auto stack = GruStack<double>::sized(3, 4, 2);
    stack.init(rng);
    auto xs = rand_tensor({5, 3}, rng);
    GruStates<double> s0 = {rand_vec(4, rng), rand_vec(4, rng)};
    auto w = rand_tensor({5, 4}, rng);
    GruStates<double> wf = {rand_vec(4, rng), rand_vec(4, rng)};

    auto loss = [&] {
      auto states = s0;
      auto out = gru_stack_forward(stack, xs, states);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.numel(); ++i) acc += out.v[i] * w.v[i];
      for (std::size_t l = 0; l < states.size(); ++l)
        for (std::size_t i = 0; i < states[l].size(); ++i) acc += states[l][i] * wf[l][i];
      return acc;
    };

    auto states = s0;
    GruStackCache<double> cache;
    gru_stack_forward(stack, xs, states, &cache);
    auto grads = GruStack<double>::sized(3, 4, 2);
    Tensor<double> dx;
    GruStates<double> ds0;
    gru_stack_backward(stack, cache, w, wf, grads, dx, ds0);

    std::vector<FdView> views;
    for (std::size_t l = 0; l < 2; ++l) {
      auto& p = stack.layers[l];
      auto& g = grads.layers[l];
      views.push_back(view_of(p.Wg, g.Wg));
      views.push_back(view_of(p.Wr, g.Wr));
      views.push_back(view_of(p.Wh, g.Wh));
      views.push_back(view_of(p.Ug, g.Ug));
      views.push_back(view_of(p.Ur, g.Ur));
      views.push_back(view_of(p.Uh, g.Uh));
      views.push_back(view_of(s0[l], ds0[l]));
    }
    views.push_back(view_of(xs, dx));
    Rng sub(seed);
    auto res = finite_difference_check(loss, views, 1e-5, 200, &sub);
    INFO("seed " << seed);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("gru stack step backward matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 17 + 3);
    auto stack = GruStack<double>::sized(3, 4, 2);
    stack.init(rng);
    auto x = rand_vec(3, rng);
    GruStates<double> s0 = {rand_vec(4, rng), rand_vec(4, rng)};
    GruStates<double> w = {rand_vec(4, rng), rand_vec(4, rng)};

    auto loss = [&] {
      auto out = gru_stack_step(stack, x, s0);
      double acc = 0.0;
      for (std::size_t l = 0; l < out.size(); ++l)
        for (std::size_t i = 0; i < out[l].size(); ++i) acc += out[l][i] * w[l][i];
      return acc;
    };

    std::vector<GruStepCache<double>> cache;
    gru_stack_step(stack, x, s0, &cache);
    auto grads = GruStack<double>::sized(3, 4, 2);
    std::vector<double> dx;
    GruStates<double> ds0;
    gru_stack_step_backward(stack, cache, w, grads, dx, ds0);

    std::vector<FdView> views = {view_of(x, dx)};
    for (std::size_t l = 0; l < 2; ++l) {
      views.push_back(view_of(stack.layers[l].Wh, grads.layers[l].Wh));
      views.push_back(view_of(stack.layers[l].Uh, grads.layers[l].Uh));
      views.push_back(view_of(stack.layers[l].Ug, grads.layers[l].Ug));
      views.push_back(view_of(s0[l], ds0[l]));
    }
    Rng sub(seed);
    auto res = finite_difference_check(loss, views, 1e-5, 200, &sub);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Causal dilated convolution
// ---------------------------------------------------------------------------

TEST_CASE("conv delta filter is the identity") {
  auto bank = ConvFilterBank<double>::sized(3, 4, 4, 2);
  for (std::size_t i = 0; i < 4; ++i) bank.f.v[i * 4 + i] = 1.0;  // f_0 = I
  Rng rng(2);
  auto x = rand_tensor({7, 4}, rng);
  auto y = causal_dilated_conv(bank, x);
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.v[i] == x.v[i]);
}

TEST_CASE("conv zero input gives zero output") {
  auto bank = ConvFilterBank<double>::sized(2, 3, 2, 1);
  Rng rng(4);
  bank.init(rng);
  Tensor<double> x({5, 3});
  auto y = causal_dilated_conv(bank, x);
  for (double v : y.v) REQUIRE(v == 0.0);
}

TEST_CASE("conv scalar dilated hand evaluation") {
  auto bank = ConvFilterBank<double>::sized(2, 1, 1, 2);
  bank.f.v = {1.0, 1.0};
  Tensor<double> x({4, 1});
  x.v = {1.0, 2.0, 3.0, 4.0};
  auto y = causal_dilated_conv(bank, x);
  REQUIRE(y.v == std::vector<double>{1.0, 2.0, 4.0, 6.0});
}

TEST_CASE("conv is causal") {
  Rng rng(9);
  auto bank = ConvFilterBank<double>::sized(3, 2, 2, 2);
  bank.init(rng);
  auto x = rand_tensor({10, 2}, rng);
  auto y = causal_dilated_conv(bank, x);
  auto x2 = x;
  x2.at(6, 0) += 1.25;   // future relative to t <= 5
  x2.at(6, 1) -= 0.5;
  auto y2 = causal_dilated_conv(bank, x2);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 2; ++c) REQUIRE(y.at(t, c) == y2.at(t, c));
}

TEST_CASE("conv zero-padding prefix leaves outputs unchanged") {
  Rng rng(12);
  auto bank = ConvFilterBank<double>::sized(3, 2, 3, 2);
  bank.init(rng);
  auto x = rand_tensor({6, 2}, rng);
  auto y = causal_dilated_conv(bank, x);
  const std::size_t Z = 5;
  Tensor<double> xp({6 + Z, 2});
  std::copy(x.v.begin(), x.v.end(), xp.v.begin() + Z * 2);
  auto yp = causal_dilated_conv(bank, xp);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(yp.at(t + Z, c) == y.at(t, c));
}

TEST_CASE("conv gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 7 + 5);
    auto bank = ConvFilterBank<double>::sized(3, 3, 2, 2);
    bank.init(rng);
    auto x = rand_tensor({7, 3}, rng);
    auto w = rand_tensor({7, 2}, rng);

    auto loss = [&] {
      auto y = causal_dilated_conv(bank, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y.v[i] * w.v[i];
      return acc;
    };

    auto dbank = ConvFilterBank<double>::sized(3, 3, 2, 2);
    Tensor<double> dx;
    causal_dilated_conv_backward(bank, x, w, dbank, dx);
    std::vector<FdView> views = {view_of(bank.f, dbank.f), view_of(x, dx)};
    auto res = finite_difference_check(loss, views);
    INFO("seed " << seed);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Residual blocks and stacks
// ---------------------------------------------------------------------------

TEST_CASE("residual block with zero filters is the identity") {
  auto blk = TcnBlock<double>::sized(3, 4, 4, 4, 2);
  REQUIRE_FALSE(blk.has_proj);
  Rng rng(6);
  auto x = rand_tensor({9, 4}, rng);
  auto y = tcn_block_forward(blk, x);
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.v[i] == x.v[i]);
}

TEST_CASE("residual block is causal") {
  Rng rng(8);
  auto blk = TcnBlock<double>::sized(3, 2, 3, 4, 2);
  REQUIRE(blk.has_proj);
  blk.init(rng);
  auto x = rand_tensor({12, 2}, rng);
  auto y = tcn_block_forward(blk, x);
  auto x2 = x;
  x2.at(7, 1) += 2.0;
  auto y2 = tcn_block_forward(blk, x2);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(y.at(t, c) == y2.at(t, c));
}

TEST_CASE("residual block lookback boundary") {
  // k=5, dilation 1: one block sees exactly 8 steps back.
  auto blk = TcnBlock<double>::sized(5, 1, 1, 1, 1);
  REQUIRE(blk.lookback() == 8);
  blk.conv1.f.fill(0.1);
  blk.conv2.f.fill(0.1);
  Tensor<double> x({12, 1});
  x.fill(1.0);
  auto y = tcn_block_forward(blk, x);

  auto bump = [&](std::size_t pos) {
    auto x2 = x;
    x2.at(pos, 0) += 0.5;
    return tcn_block_forward(blk, x2);
  };
  auto y_at8 = bump(3);   // distance 8 from t=11
  REQUIRE(y_at8.at(11, 0) != y.at(11, 0));
  auto y_at9 = bump(2);   // distance 9 from t=11
  REQUIRE(y_at9.at(11, 0) == y.at(11, 0));
}

TEST_CASE("stack lookback matches the dilation schedule") {
  auto deep = TcnStack<double>::sized(5, 8, 8, {1, 2, 4, 8, 16, 32});
  REQUIRE(deep.lookback() == 504);
  auto low = TcnStack<double>::sized(5, 8, 8, {1, 2, 4, 8});
  REQUIRE(low.lookback() == 120);
}

TEST_CASE("stack receptive field sweep") {
  // k=3, dilations {1,2}: lookback 2*2*1 + 2*2*2 = 12, receptive field 13.
  auto stack = TcnStack<double>::sized(3, 1, 1, {1, 2});
  REQUIRE(stack.lookback() == 12);
  for (auto& b : stack.blocks) {
    b.conv1.f.fill(0.1);
    b.conv2.f.fill(0.1);
  }
  Tensor<double> x({16, 1});
  x.fill(1.0);
  auto y = tcn_stack_forward(stack, x);
  const std::size_t t = 15;

  auto bump = [&](std::size_t pos) {
    auto x2 = x;
    x2.at(pos, 0) += 0.5;
    return tcn_stack_forward(stack, x2);
  };
  REQUIRE(bump(t - 12).at(t, 0) != y.at(t, 0));   // inside the receptive field
  REQUIRE(bump(t - 13).at(t, 0) == y.at(t, 0));   // outside: bit-identical
  // causality at the stack level
  auto yb = bump(10);
  for (std::size_t s = 0; s < 10; ++s) REQUIRE(yb.at(s, 0) == y.at(s, 0));
}

TEST_CASE("stack zero-padding prefix leaves outputs unchanged") {
  Rng rng(21);
  auto stack = TcnStack<double>::sized(3, 2, 3, {1, 2});
  stack.init(rng);
  auto x = rand_tensor({8, 2}, rng);
  auto y = tcn_stack_forward(stack, x);
  const std::size_t Z = 13;  // beyond total lookback
  Tensor<double> xp({8 + Z, 2});
  std::copy(x.v.begin(), x.v.end(), xp.v.begin() + Z * 2);
  auto yp = tcn_stack_forward(stack, xp);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(yp.at(t + Z, c) == y.at(t, c));
}

TEST_CASE("tcn stack gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 13 + 2);
    auto stack = TcnStack<double>::sized(2, 2, 3, {1, 2});
    stack.init(rng);
    auto x = rand_tensor({6, 2}, rng);
    auto w = rand_tensor({6, 3}, rng);

    auto loss = [&] {
      auto y = tcn_stack_forward(stack, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y.v[i] * w.v[i];
      return acc;
    };

    TcnStackCache<double> cache;
    tcn_stack_forward(stack, x, &cache);
    auto grads = TcnStack<double>::sized(2, 2, 3, {1, 2});
    Tensor<double> dx;
    tcn_stack_backward(stack, cache, w, grads, dx);

    std::vector<FdView> views = {view_of(x, dx)};
    for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
      views.push_back(view_of(stack.blocks[b].conv1.f, grads.blocks[b].conv1.f));
      views.push_back(view_of(stack.blocks[b].conv2.f, grads.blocks[b].conv2.f));
      if (stack.blocks[b].has_proj)
        views.push_back(view_of(stack.blocks[b].proj.f, grads.blocks[b].proj.f));
    }
    auto res = finite_difference_check(loss, views);
    INFO("seed " << seed);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// MLP head
// ---------------------------------------------------------------------------

TEST_CASE("mlp head zero params") {
  auto p = MlpHeadParams<double>::sized(3, 4, 2);
  auto u = mlp_head(p, {1.0, -2.0, 0.5});
  for (double v : u) REQUIRE(v == 0.0);
}

TEST_CASE("mlp head identity composition") {
  auto p = MlpHeadParams<double>::sized(3, 3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    p.W1.at(i, i) = 1.0;
    p.W2.at(i, i) = 1.0;
  }
  std::vector<double> s = {0.5, 2.0, 0.0};
  auto u = mlp_head(p, s);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(u[i] == s[i]);
}

TEST_CASE("mlp head scalar hand evaluation") {
  auto p = MlpHeadParams<double>::sized(1, 1, 1);
  p.W1[0] = 2.0;
  p.b1[0] = -1.0;
  p.W2[0] = 3.0;
  auto u = mlp_head(p, {1.0});
  REQUIRE(u[0] == Catch::Approx(3.0).margin(1e-12));
  auto u0 = mlp_head(p, {0.0});  // ReLU clamps the negative pre-activation
  REQUIRE(u0[0] == 0.0);
}

TEST_CASE("mlp head gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed + 40);
    auto p = MlpHeadParams<double>::sized(4, 6, 3);
    p.init(rng);
    for (auto& v : p.b1.v) v = rng.uniform(-0.5, 0.5);
    for (auto& v : p.b2.v) v = rng.uniform(-0.5, 0.5);
    auto s = rand_vec(4, rng);
    auto w = rand_vec(3, rng);

    auto loss = [&] { return dot(mlp_head(p, s), w); };

    MlpHeadCache<double> cache;
    mlp_head(p, s, &cache);
    auto grads = MlpHeadParams<double>::sized(4, 6, 3);
    std::vector<double> ds;
    mlp_head_backward(p, cache, w, grads, ds);
    std::vector<FdView> views = {view_of(p.W1, grads.W1), view_of(p.b1, grads.b1),
                                 view_of(p.W2, grads.W2), view_of(p.b2, grads.b2),
                                 view_of(s, ds)};
    auto res = finite_difference_check(loss, views);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout rate zero is the identity") {
  Rng rng(1);
  std::vector<double> h = {1.0, -2.0, 3.5};
  auto out = recurrent_dropout_step(h, 0.0, rng);
  REQUIRE(out == h);
}

TEST_CASE("dropout all-kept draw doubles at rate one half") {
  std::vector<double> h = {1.0, -2.0, 3.5};
  // Scan seeds for an all-kept mask, then verify the scaling.
  for (std::uint64_t seed = 0;; ++seed) {
    Rng rng(seed);
    auto mask = dropout_mask<double>(h.size(), 0.5, rng);
    bool all = true;
    for (double m : mask) all = all && m != 0.0;
    if (!all) continue;
    Rng replay(seed);
    auto out = recurrent_dropout_step(h, 0.5, replay);
    for (std::size_t i = 0; i < h.size(); ++i) REQUIRE(out[i] == Catch::Approx(2.0 * h[i]));
    break;
  }
}

TEST_CASE("dropout rejects rate >= 1") {
  Rng rng(1);
  REQUIRE_THROWS_AS(dropout_mask<double>(4, 1.0, rng), ConfigError);
  REQUIRE_THROWS_AS(dropout_mask<double>(4, 1.5, rng), ConfigError);
}

TEST_CASE("dropout empirical mean preserves the input") {
  Rng rng(123);
  std::vector<double> h = {1.0, -2.0, 0.5, 4.0};
  std::vector<double> acc(h.size(), 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto out = recurrent_dropout_step(h, 0.3, rng);
    for (std::size_t j = 0; j < h.size(); ++j) acc[j] += out[j];
  }
  for (std::size_t j = 0; j < h.size(); ++j)
    REQUIRE(acc[j] / n == Catch::Approx(h[j]).epsilon(0.05));
}

// ---------------------------------------------------------------------------
// Masked temporal batch norm
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm constant batch normalizes to zero") {
  auto bn = MaskedTemporalBatchNorm<double>::sized(2);
  Tensor<double> x({3, 2, 2});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t c = 0; c < 2; ++c) x.at(b, t, c) = 5.0 + static_cast<double>(t);
  Tensor<double> mask({3, 2});
  mask.fill(1.0);
  auto y = batchnorm_forward_train(bn, x, mask);
  for (double v : y.v) REQUIRE(v == 0.0);
}

TEST_CASE("batchnorm pair oracle") {
  auto bn = MaskedTemporalBatchNorm<double>::sized(1);
  Tensor<double> x({2, 1, 1});
  x.at(0, 0, 0) = 1.0;
  x.at(1, 0, 0) = 3.0;
  Tensor<double> mask({2, 1});
  mask.fill(1.0);
  BatchNormCache<double> cache;
  auto y = batchnorm_forward_train(bn, x, mask, &cache);
  REQUIRE(cache.mean[0][0] == Catch::Approx(2.0));
  REQUIRE(cache.var[0][0] == Catch::Approx(1.0));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  REQUIRE(y.at(0, 0, 0) == Catch::Approx(-expect).margin(1e-12));
  REQUIRE(y.at(1, 0, 0) == Catch::Approx(expect).margin(1e-12));
  // Running stats blend toward the batch.
  REQUIRE(bn.run_mean[0][0] == Catch::Approx(0.2));
  REQUIRE(bn.run_var[0][0] == Catch::Approx(1.0));
}

TEST_CASE("batchnorm ignores fully masked rows") {
  Rng rng(31);
  auto bn1 = MaskedTemporalBatchNorm<double>::sized(3);
  auto bn2 = MaskedTemporalBatchNorm<double>::sized(3);
  auto x3 = rand_tensor({3, 4, 3}, rng);
  Tensor<double> mask3({3, 4});
  mask3.fill(1.0);
  for (std::size_t t = 0; t < 4; ++t) mask3.at(2, t) = 0.0;  // padded row

  Tensor<double> x2({2, 4, 3});
  std::copy(x3.v.begin(), x3.v.begin() + 24, x2.v.begin());
  Tensor<double> mask2({2, 4});
  mask2.fill(1.0);

  auto y3 = batchnorm_forward_train(bn1, x3, mask3);
  auto y2 = batchnorm_forward_train(bn2, x2, mask2);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 3; ++c) REQUIRE(y3.at(b, t, c) == y2.at(b, t, c));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(y3.at(2, t, c) == 0.0);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(bn1.run_mean[t][c] == bn2.run_mean[t][c]);
      REQUIRE(bn1.run_var[t][c] == bn2.run_var[t][c]);
    }
}

TEST_CASE("batchnorm empty timestep falls back to running stats") {
  auto bn = MaskedTemporalBatchNorm<double>::sized(1);
  bn.ensure_timesteps(2);
  bn.run_mean[1][0] = 0.75;
  bn.run_var[1][0] = 4.0;
  Tensor<double> x({2, 2, 1});
  x.at(0, 0, 0) = 1.0;
  x.at(1, 0, 0) = 3.0;
  x.at(0, 1, 0) = 9.0;  // masked out below
  Tensor<double> mask({2, 2});
  mask.fill(1.0);
  mask.at(0, 1) = 0.0;
  mask.at(1, 1) = 0.0;
  auto y = batchnorm_forward_train(bn, x, mask);
  REQUIRE(y.at(0, 1, 0) == 0.0);
  REQUIRE(y.at(1, 1, 0) == 0.0);
  // stats for the empty step untouched
  REQUIRE(bn.run_mean[1][0] == 0.75);
  REQUIRE(bn.run_var[1][0] == 4.0);
}

TEST_CASE("batchnorm eval uses running stats") {
  auto bn = MaskedTemporalBatchNorm<double>::sized(1);
  bn.ensure_timesteps(1);
  bn.run_mean[0][0] = 2.0;
  bn.run_var[0][0] = 4.0;
  bn.gamma[0] = 3.0;
  bn.beta[0] = 1.0;
  Tensor<double> x({1, 1, 1});
  x.at(0, 0, 0) = 4.0;
  Tensor<double> mask({1, 1});
  mask.fill(1.0);
  auto y = batchnorm_forward_eval(bn, x, mask);
  // (4-2)/sqrt(4+eps) * 3 + 1
  REQUIRE(y.at(0, 0, 0) == Catch::Approx(3.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 1.0).margin(1e-9));
}

TEST_CASE("batchnorm gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed + 60);
    auto bn = MaskedTemporalBatchNorm<double>::sized(2);
    for (auto& v : bn.gamma.v) v = rng.uniform(0.5, 1.5);
    for (auto& v : bn.beta.v) v = rng.uniform(-0.5, 0.5);
    auto x = rand_tensor({3, 4, 2}, rng);
    Tensor<double> mask({3, 4});
    mask.fill(1.0);
    mask.at(1, 3) = 0.0;
    mask.at(2, 0) = 0.0;
    auto w = rand_tensor({3, 4, 2}, rng);

    auto loss = [&] {
      auto bn_copy = bn;  // forward mutates running stats; keep the op pure
      auto y = batchnorm_forward_train(bn_copy, x, mask);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y.v[i] * w.v[i];
      return acc;
    };

    auto bn_fwd = bn;
    BatchNormCache<double> cache;
    batchnorm_forward_train(bn_fwd, x, mask, &cache);
    auto grads = MaskedTemporalBatchNorm<double>::sized(2);
    grads.gamma.zero();
    Tensor<double> dx;
    batchnorm_backward(bn, cache, w, grads, dx);

    std::vector<FdView> views = {view_of(bn.gamma, grads.gamma), view_of(bn.beta, grads.beta),
                                 view_of(x, dx)};
    auto res = finite_difference_check(loss, views);
    INFO("seed " << seed);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST_CASE("adam zero gradient leaves params fixed and decays moments") {
  Tensor<double> p({2});
  p.v = {1.0, -2.0};
  Tensor<double> g({2});
  ParamRefs<double> params, grads;
  params.add("w", p);
  grads.add("w", g);
  auto state = AdamState<double>::for_params(params);
  AdamConfig cfg;

  g.v = {1.0, 1.0};
  adam_step(params, grads, state, cfg);
  const double m_before = state.m[0][0];
  REQUIRE(m_before != 0.0);

  g.zero();
  const auto p_before = p.v;
  adam_step(params, grads, state, cfg);
  REQUIRE(state.m[0][0] == Catch::Approx(cfg.beta1 * m_before).margin(1e-15));
  // params still move a hair from the surviving first moment; a fresh
  // optimizer with zero gradient must not move at all
  Tensor<double> q({2});
  q.v = {0.5, 0.5};
  Tensor<double> gq({2});
  ParamRefs<double> params2, grads2;
  params2.add("w", q);
  grads2.add("w", gq);
  auto state2 = AdamState<double>::for_params(params2);
  adam_step(params2, grads2, state2, cfg);
  REQUIRE(q.v[0] == 0.5);
  REQUIRE(q.v[1] == 0.5);
  (void)p_before;
}

TEST_CASE("adam first step closed form") {
  Tensor<double> p({3});
  p.v = {0.0, 1.0, -1.0};
  Tensor<double> g({3});
  g.v = {0.25, -2.0, 1e-3};
  ParamRefs<double> params, grads;
  params.add("w", p);
  grads.add("w", g);
  auto state = AdamState<double>::for_params(params);
  AdamConfig cfg;
  adam_step(params, grads, state, cfg);
  REQUIRE(state.step == 1);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    REQUIRE(p[i] == Catch::Approx((i == 0 ? 0.0 : (i == 1 ? 1.0 : -1.0)) - expect).margin(1e-12));
  }
  for (double v : state.v[0].v) REQUIRE(v >= 0.0);
}

TEST_CASE("adam constant gradient moves monotonically with bounded steps") {
  Tensor<double> p({1});
  p.v = {5.0};
  Tensor<double> g({1});
  g.v = {0.3};
  ParamRefs<double> params, grads;
  params.add("w", p);
  grads.add("w", g);
  auto state = AdamState<double>::for_params(params);
  AdamConfig cfg;
  double prev = p[0];
  for (int i = 0; i < 200; ++i) {
    adam_step(params, grads, state, cfg);
    REQUIRE(p[0] < prev);
    REQUIRE(prev - p[0] <= 1.1 * cfg.lr);
    prev = p[0];
  }
}

TEST_CASE("adam rejects non-finite gradients without mutating state") {
  Tensor<double> p({2});
  p.v = {1.0, 2.0};
  Tensor<double> g({2});
  g.v = {0.1, std::nan("")};
  ParamRefs<double> params, grads;
  params.add("w", p);
  grads.add("w", g);
  auto state = AdamState<double>::for_params(params);
  AdamConfig cfg;
  REQUIRE_THROWS_AS(adam_step(params, grads, state, cfg), NumericError);
  REQUIRE(state.step == 0);
  REQUIRE(p.v == std::vector<double>{1.0, 2.0});
  REQUIRE(state.m[0][0] == 0.0);
}

// ---------------------------------------------------------------------------
// Finite differences on a linear map (sanity of the oracle itself)
// ---------------------------------------------------------------------------

TEST_CASE("finite differences are exact on a linear map") {
  Rng rng(2);
  Tensor<double> W = rand_tensor({3, 4}, rng);
  auto x = rand_vec(4, rng);
  auto w = rand_vec(3, rng);

  auto loss = [&] {
    std::vector<double> y(3);
    matvec(W, x.data(), y.data());
    return dot(y, w);
  };
  // analytic: dW = w x^T, dx = W^T w
  Tensor<double> dW({3, 4});
  outer_acc(dW, w.data(), x.data());
  std::vector<double> dx(4, 0.0);
  matvec_t_acc(W, w.data(), dx.data());
  std::vector<FdView> views = {view_of(W, dW), view_of(x, dx)};
  auto res = finite_difference_check(loss, views);
  REQUIRE(res.max_rel_err < 1e-9);
}

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

TEST_CASE("rng split streams are independent and reproducible") {
  Rng a(42), b(42), c(43);
  auto s1 = a.split(7), s2 = b.split(7), s3 = b.split(8), s4 = c.split(7);
  REQUIRE(s1.u64() == s2.u64());
  Rng s1b = a.split(7);
  REQUIRE(s3.u64() != s1b.u64());
  REQUIRE(s4.u64() != s1b.u64());
}

TEST_CASE("rng serialization round-trips the stream") {
  Rng a(9);
  a.u64();
  a.uniform();
  auto blob = a.serialize();
  Rng b(0);
  b.deserialize(blob);
  for (int i = 0; i < 5; ++i) REQUIRE(a.u64() == b.u64());
}
