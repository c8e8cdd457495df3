// SPDX-License-Identifier: Apache-2.0
//
// Read-only item-embedding lookup.  Models and losses resolve item IDs to
// d-dimensional rows through this interface; the on-disk table and
// in-memory test fixtures both implement it.
#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "hiertcn/common.hpp"
#include "hiertcn/rng.hpp"

namespace hiertcn {

template <class S>
class EmbeddingSource {
public:
  virtual ~EmbeddingSource() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t size() const = 0;
  virtual bool has(std::uint64_t item_id) const = 0;
  // Throws DataError for unknown IDs.
  virtual const S* row(std::uint64_t item_id) const = 0;
  virtual std::vector<std::uint64_t> ids() const = 0;
};

// Map-backed table used by tests and the synthetic generator.
template <class S>
class DenseEmbeddings : public EmbeddingSource<S> {
public:
  DenseEmbeddings() = default;
  explicit DenseEmbeddings(std::size_t dim) : dim_(dim) {}

  void put(std::uint64_t id, std::vector<S> v) {
    if (dim_ == 0) dim_ = v.size();
    require_shape(v.size() == dim_, "embeddings: row dim mismatch");
    if (rows_.emplace(id, std::move(v)).second) order_.push_back(id);
  }

  std::size_t dim() const override { return dim_; }
  std::size_t size() const override { return rows_.size(); }
  bool has(std::uint64_t id) const override { return rows_.count(id) != 0; }

  const S* row(std::uint64_t id) const override {
    auto it = rows_.find(id);
    if (it == rows_.end())
      throw DataError("unknown item id " + std::to_string(id));
    return it->second.data();
  }

  std::vector<std::uint64_t> ids() const override { return order_; }

  static DenseEmbeddings random(std::size_t n, std::size_t dim, Rng& rng,
                                std::uint64_t first_id = 1) {
    DenseEmbeddings e(dim);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<S> v(dim);
      for (auto& x : v) x = static_cast<S>(rng.normal(0.0, 1.0 / std::sqrt(double(dim))));
      e.put(first_id + i, std::move(v));
    }
    return e;
  }

private:
  std::size_t dim_ = 0;
  std::unordered_map<std::uint64_t, std::vector<S>> rows_;
  std::vector<std::uint64_t> order_;
};

}  // namespace hiertcn
