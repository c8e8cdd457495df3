// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hiertcn/common.hpp"

namespace hiertcn {

// Dense row-major array. S is float for training/serving, double for
// gradient checking.
template <class S>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> sh) : shape(std::move(sh)) {
    v.assign(numel_of(shape), S(0));
  }

  static std::size_t numel_of(const std::vector<std::size_t>& sh) {
    std::size_t n = 1;
    for (auto e : sh) n *= e;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> sh) { return Tensor(std::move(sh)); }

  std::size_t numel() const { return v.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  S& operator[](std::size_t i) { return v[i]; }
  const S& operator[](std::size_t i) const { return v[i]; }

  S& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  const S& at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  S& at(std::size_t i, std::size_t j, std::size_t k) {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  const S& at(std::size_t i, std::size_t j, std::size_t k) const {
    return v[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(S(0)); }

  bool finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

template <class S>
inline void check_finite(const Tensor<S>& t, const std::string& what) {
  if (!t.finite()) throw NumericError("non-finite values in " + what);
}

// y += a*x
template <class S>
inline void axpy(S a, const std::vector<S>& x, std::vector<S>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

template <class S>
inline void axpy_raw(S a, const S* x, S* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class S>
inline S dot(const S* a, const S* b, std::size_t n) {
  S s = S(0);
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class S>
inline S dot(const std::vector<S>& a, const std::vector<S>& b) {
  require_shape(a.size() == b.size(), "dot: length mismatch");
  return dot(a.data(), b.data(), a.size());
}

// out = W x, W is [rows x cols] row-major, x has cols entries.
template <class S>
inline void matvec(const Tensor<S>& W, const S* x, S* out) {
  const std::size_t rows = W.shape[0], cols = W.shape[1];
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = dot(W.v.data() + r * cols, x, cols);
  }
}

// out += W^T g  (accumulates into out, which has cols entries)
template <class S>
inline void matvec_t_acc(const Tensor<S>& W, const S* g, S* out) {
  const std::size_t rows = W.shape[0], cols = W.shape[1];
  for (std::size_t r = 0; r < rows; ++r) {
    const S gr = g[r];
    if (gr == S(0)) continue;
    const S* wr = W.v.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += gr * wr[c];
  }
}

// dW += g x^T (outer product accumulate)
template <class S>
inline void outer_acc(Tensor<S>& dW, const S* g, const S* x) {
  const std::size_t rows = dW.shape[0], cols = dW.shape[1];
  for (std::size_t r = 0; r < rows; ++r) {
    const S gr = g[r];
    if (gr == S(0)) continue;
    S* wr = dW.v.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) wr[c] += gr * x[c];
  }
}

}  // namespace hiertcn
