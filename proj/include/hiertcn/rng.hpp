// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "hiertcn/tensor.hpp"

namespace hiertcn {

inline std::uint64_t mix64(std::uint64_t s) {
  s ^= s >> 30;
  s *= 0xbf58476d1ce4e5b9ull;
  s ^= s >> 27;
  s *= 0x94d049bb133111ebull;
  s ^= s >> 31;
  return s;
}

// Deterministic RNG. Thin wrapper over mt19937_64 with serialization so
// training runs can be resumed bit-identically.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), eng_(seed) {}

  std::uint64_t u64() { return eng_(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(eng_);
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }

  // Poisson draw; used by the synthetic generator's count distributions.
  std::uint64_t poisson(double mean) {
    std::poisson_distribution<std::uint64_t> d(mean);
    return d(eng_);
  }

  bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }

  // Derive an independent stream keyed on (seed, salt), e.g. one per user.
  Rng split(std::uint64_t salt) const {
    return Rng(mix64(seed_ ^ mix64(salt + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t seed() const { return seed_; }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

  std::mt19937_64& engine() { return eng_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

// uniform(-a, a) with a = 1/sqrt(fan_in)
template <class S>
inline void init_uniform_fanin(Tensor<S>& t, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (auto& x : t.v) x = static_cast<S>(rng.uniform(-a, a));
}

}  // namespace hiertcn
