// SPDX-License-Identifier: Apache-2.0
//
// Rule-based reference models over a per-user pool of the most recently
// interacted item embeddings.
#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "hiertcn/common.hpp"
#include "hiertcn/tensor.hpp"

namespace hiertcn {

template <class S = float>
class RecentPool {
 public:
  explicit RecentPool(std::size_t dim, std::size_t k = 20) : dim_(dim), k_(k) {
    require(k_ > 0, "recent pool: capacity must be positive");
  }

  void push(const S* x) {
    items_.emplace_back(x, x + dim_);
    if (items_.size() > k_) items_.pop_front();
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::deque<std::vector<S>>& items() const { return items_; }

 private:
  std::size_t dim_;
  std::size_t k_;
  std::deque<std::vector<S>> items_;
};

// Mean of the pooled embeddings; a cold (empty) pool yields zeros and
// raises the flag instead of failing.
template <class S>
inline std::vector<S> mv_predict(const RecentPool<S>& pool, bool* cold = nullptr) {
  std::vector<S> u(pool.dim(), S(0));
  if (pool.empty()) {
    if (cold != nullptr) *cold = true;
    return u;
  }
  if (cold != nullptr) *cold = false;
  for (const auto& x : pool.items())
    for (std::size_t c = 0; c < u.size(); ++c) u[c] += x[c];
  const S inv = S(1) / static_cast<S>(pool.size());
  for (auto& v : u) v *= inv;
  return u;
}

// Highest dot product between the candidate and any pooled embedding;
// a cold pool scores 0 and raises the flag.
template <class S>
inline double maxitem_score(const S* candidate, const RecentPool<S>& pool, bool* cold = nullptr) {
  if (pool.empty()) {
    if (cold != nullptr) *cold = true;
    return 0.0;
  }
  if (cold != nullptr) *cold = false;
  double best = -1e300;
  for (const auto& x : pool.items()) {
    double s = 0.0;
    for (std::size_t c = 0; c < pool.dim(); ++c)
      s += static_cast<double>(candidate[c]) * static_cast<double>(x[c]);
    if (s > best) best = s;
  }
  return best;
}

}  // namespace hiertcn
