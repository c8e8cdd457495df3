// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary stream helpers shared by the checkpoint and
// embedding-table formats.
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hiertcn/tensor.hpp"

namespace hiertcn {
namespace io {

template <class T>
inline void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
inline T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated file while reading " + what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const std::string& what) {
  const auto n = read_pod<std::uint32_t>(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("truncated file while reading " + what);
  return s;
}

template <class S>
inline void write_tensor(std::ostream& os, const std::string& name, const Tensor<S>& t) {
  write_string(os, name);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape) write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.v.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(S)));
}

template <class S = float>
inline std::pair<std::string, Tensor<S>> read_tensor(std::istream& is) {
  std::string name = read_string(is, "tensor name");
  const auto rank = read_pod<std::uint32_t>(is, "tensor rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(is, "tensor dim"));
  Tensor<S> t(shape);
  is.read(reinterpret_cast<char*>(t.v.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(S)));
  if (!is) throw DataError("truncated tensor data for " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace io
}  // namespace hiertcn
