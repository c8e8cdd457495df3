// SPDX-License-Identifier: Apache-2.0
//
// Immutable on-disk item-embedding cache served through a read-only
// memory mapping; lookups return pointers straight into the mapped
// block, so unlimited concurrent readers are safe.
//
// File layout: 8-byte magic "HTCNEMB1", u32 version, u64 N, u32 d,
// then N x d little-endian float32 rows, then N u64 item IDs (row i
// belongs to the i-th ID).
#pragma once

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hiertcn/embeddings.hpp"
#include "hiertcn/io.hpp"

namespace hiertcn {

static_assert(std::endian::native == std::endian::little,
              "embedding table maps little-endian files directly");

inline constexpr char kEmbeddingMagic[8] = {'H', 'T', 'C', 'N', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 8 + 4 + 8 + 4;

inline void write_embedding_table(const std::string& path, const std::vector<std::uint64_t>& ids,
                                  const Tensor<float>& rows) {
  require_shape(rows.rank() == 2 && rows.dim(0) == ids.size(), "embedding table: bad rows shape");
  std::unordered_set<std::uint64_t> seen;
  for (auto id : ids)
    if (!seen.insert(id).second)
      throw DataError("embedding table: duplicate item id " + std::to_string(id));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kEmbeddingMagic, 8);
  io::write_pod<std::uint32_t>(os, kEmbeddingVersion);
  io::write_pod<std::uint64_t>(os, ids.size());
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(rows.dim(1)));
  os.write(reinterpret_cast<const char*>(rows.v.data()),
           static_cast<std::streamsize>(rows.numel() * sizeof(float)));
  for (auto id : ids) io::write_pod<std::uint64_t>(os, id);
  if (!os) throw DataError("write failed: " + path);
}

template <class S>
inline void write_embedding_table(const std::string& path, const DenseEmbeddings<S>& emb) {
  const auto ids = emb.ids();
  Tensor<float> rows({ids.size(), emb.dim()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const S* r = emb.row(ids[i]);
    for (std::size_t c = 0; c < emb.dim(); ++c) rows.at(i, c) = static_cast<float>(r[c]);
  }
  write_embedding_table(path, ids, rows);
}

class EmbeddingTable final : public EmbeddingSource<float> {
 public:
  explicit EmbeddingTable(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) throw DataError("cannot open: " + path);
    struct stat st{};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw DataError("cannot stat: " + path);
    }
    bytes_ = static_cast<std::size_t>(st.st_size);
    if (bytes_ < kEmbeddingHeaderBytes) {
      ::close(fd_);
      throw DataError("not an embedding table (too small): " + path);
    }
    map_ = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd_, 0);
    if (map_ == MAP_FAILED) {
      ::close(fd_);
      throw DataError("mmap failed: " + path);
    }
    try {
      parse_header();
    } catch (...) {
      unmap();
      throw;
    }
  }

  ~EmbeddingTable() override { unmap(); }
  EmbeddingTable(const EmbeddingTable&) = delete;
  EmbeddingTable& operator=(const EmbeddingTable&) = delete;

  std::size_t dim() const override { return d_; }
  std::size_t size() const override { return n_; }
  bool has(std::uint64_t id) const override { return index_.count(id) != 0; }

  const float* row(std::uint64_t id) const override {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown item id " + std::to_string(id));
    return rows_ + it->second * d_;
  }

  std::vector<std::uint64_t> ids() const override { return ids_; }

 private:
  void parse_header() {
    const char* base = static_cast<const char*>(map_);
    if (std::memcmp(base, kEmbeddingMagic, 8) != 0)
      throw DataError("not an embedding table (bad magic): " + path_);
    std::uint32_t version = 0, d32 = 0;
    std::uint64_t n64 = 0;
    std::memcpy(&version, base + 8, 4);
    std::memcpy(&n64, base + 12, 8);
    std::memcpy(&d32, base + 20, 4);
    if (version != kEmbeddingVersion)
      throw DataError("unsupported embedding table version " + std::to_string(version));
    n_ = static_cast<std::size_t>(n64);
    d_ = d32;
    if (d_ == 0) throw DataError("embedding table with zero dim: " + path_);
    const std::size_t want = kEmbeddingHeaderBytes + n_ * d_ * sizeof(float) + n_ * 8;
    if (bytes_ != want) throw DataError("embedding table truncated or oversized: " + path_);
    rows_ = reinterpret_cast<const float*>(base + kEmbeddingHeaderBytes);
    const char* idp = base + kEmbeddingHeaderBytes + n_ * d_ * sizeof(float);
    ids_.resize(n_);
    index_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      std::uint64_t id = 0;
      std::memcpy(&id, idp + i * 8, 8);  // ID block may be 8-byte misaligned
      ids_[i] = id;
      if (!index_.emplace(id, i).second)
        throw DataError("embedding table: duplicate item id " + std::to_string(id));
    }
  }

  void unmap() {
    if (map_ != nullptr && map_ != MAP_FAILED) ::munmap(map_, bytes_);
    if (fd_ >= 0) ::close(fd_);
    map_ = nullptr;
    fd_ = -1;
  }

  std::string path_;
  int fd_ = -1;
  void* map_ = nullptr;
  std::size_t bytes_ = 0;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  const float* rows_ = nullptr;
  std::vector<std::uint64_t> ids_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace hiertcn
