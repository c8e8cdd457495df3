// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hiertcn/gradcheck.hpp"
#include "hiertcn/objectives.hpp"
#include "hiertcn/rng.hpp"

using namespace hiertcn;

namespace {

const double kLog2 = std::log(2.0);

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

NegativeSet<double> negs_of(const std::vector<std::vector<double>>& rows) {
  NegativeSet<double> s;
  for (const auto& r : rows) s.rows.push_back(r.data());
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// L2
// ---------------------------------------------------------------------------

TEST_CASE("l2 zero at the target") {
  std::vector<double> u = {0.4, -1.0}, x = u;
  REQUIRE(l2_loss(u.data(), x.data(), 2) == 0.0);
}

TEST_CASE("l2 pythagorean") {
  std::vector<double> u = {0.0, 0.0}, x = {3.0, 4.0};
  REQUIRE(l2_loss(u.data(), x.data(), 2) == Catch::Approx(5.0));
}

TEST_CASE("l2 gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto u = rand_vec(5, rng);
    auto x = rand_vec(5, rng);
    std::vector<double> du(5, 0.0);
    l2_loss(u.data(), x.data(), 5, du.data());
    auto loss = [&] { return l2_loss<double>(u.data(), x.data(), 5); };
    auto res = finite_difference_check(loss, {{u.data(), 5, du.data()}});
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// NCE
// ---------------------------------------------------------------------------

TEST_CASE("nce all-zero scores") {
  std::vector<double> u = {0.0, 0.0}, x = {1.0, 0.0};
  std::vector<std::vector<double>> negs = {{1.0, 1.0}, {0.0, 2.0}, {3.0, 0.0}};
  auto ns = negs_of(negs);
  REQUIRE(nce_loss(u.data(), x.data(), ns, 2) == Catch::Approx(4.0 * kLog2));
}

TEST_CASE("nce asymptote toward zero") {
  std::vector<double> u = {50.0}, x = {1.0};
  std::vector<std::vector<double>> negs = {{-1.0}};
  auto ns = negs_of(negs);
  REQUIRE(nce_loss(u.data(), x.data(), ns, 1) < 1e-10);
}

TEST_CASE("nce random instance vs scalar evaluation") {
  Rng rng(77);
  auto u = rand_vec(3, rng);
  auto x = rand_vec(3, rng);
  std::vector<std::vector<double>> negs = {rand_vec(3, rng), rand_vec(3, rng), rand_vec(3, rng)};
  auto ns = negs_of(negs);
  double expect = -std::log(1.0 / (1.0 + std::exp(-dot(x, u))));
  for (const auto& c : negs) expect += -std::log(1.0 / (1.0 + std::exp(dot(c, u))));
  REQUIRE(nce_loss(u.data(), x.data(), ns, 3) == Catch::Approx(expect));
}

TEST_CASE("nce requires a negative") {
  std::vector<double> u = {1.0}, x = {1.0};
  NegativeSet<double> ns;
  REQUIRE_THROWS_AS(nce_loss(u.data(), x.data(), ns, 1), Error);
}

// ---------------------------------------------------------------------------
// BPR
// ---------------------------------------------------------------------------

TEST_CASE("bpr equal scores") {
  std::vector<double> u = {1.0, 1.0}, x = {0.5, 0.5};
  std::vector<std::vector<double>> negs = {{0.5, 0.5}, {1.0, 0.0}};  // both dot to 1.0
  auto ns = negs_of(negs);
  REQUIRE(bpr_loss(u.data(), x.data(), ns, 2) == Catch::Approx(2.0 * kLog2));
}

TEST_CASE("bpr asymptote toward zero") {
  std::vector<double> u = {1.0}, x = {60.0};
  std::vector<std::vector<double>> negs = {{0.0}};
  auto ns = negs_of(negs);
  REQUIRE(bpr_loss(u.data(), x.data(), ns, 1) < 1e-10);
}

TEST_CASE("bpr shift invariance") {
  // Raising every item's score against u by the same constant must not move
  // the loss; realize the shift by augmenting a constant-one coordinate.
  Rng rng(5);
  std::vector<double> u = {0.7, -0.2, 1.0}, x = {0.1, 0.9, 0.0};
  std::vector<std::vector<double>> negs = {{-0.4, 0.3, 0.0}, {0.8, 0.8, 0.0}};
  auto base = bpr_loss(u.data(), x.data(), negs_of(negs), 3);
  auto x2 = x;
  x2[2] = 1.7;  // shift every score through u[2] = 1
  auto negs2 = negs;
  for (auto& c : negs2) c[2] = 1.7;
  auto shifted = bpr_loss(u.data(), x2.data(), negs_of(negs2), 3);
  REQUIRE(shifted == Catch::Approx(base).margin(1e-12));
  (void)rng;
}

// ---------------------------------------------------------------------------
// Hinge
// ---------------------------------------------------------------------------

TEST_CASE("hinge satisfied margin is free") {
  std::vector<double> u = {1.0}, x = {1.0};
  std::vector<std::vector<double>> negs = {{0.0}};
  auto ns = negs_of(negs);
  REQUIRE(hinge_loss(u.data(), x.data(), ns, 1, 0.5) == 0.0);
}

TEST_CASE("hinge equal scores pay the margin per negative") {
  std::vector<double> u = {1.0}, x = {0.3};
  std::vector<std::vector<double>> negs = {{0.3}, {0.3}, {0.3}};
  auto ns = negs_of(negs);
  REQUIRE(hinge_loss(u.data(), x.data(), ns, 1, 0.5) == Catch::Approx(1.5));
}

TEST_CASE("hinge mixed margins hand evaluation") {
  std::vector<double> u = {1.0};
  std::vector<double> x = {1.0};  // pos score 1
  std::vector<std::vector<double>> negs = {{0.2}, {0.9}, {1.4}};
  auto ns = negs_of(negs);
  // terms: 0.5+0.2-1=-0.3 -> 0; 0.5+0.9-1=0.4; 0.5+1.4-1=0.9
  REQUIRE(hinge_loss(u.data(), x.data(), ns, 1, 0.5) == Catch::Approx(1.3));
}

TEST_CASE("hinge shift invariance") {
  std::vector<double> u = {0.5, 1.0}, x = {2.0, 0.0};
  std::vector<std::vector<double>> negs = {{1.0, 0.0}, {-1.0, 0.5}};
  auto base = hinge_loss(u.data(), x.data(), negs_of(negs), 2, 0.5);
  auto x2 = x;
  x2[1] += 3.0;
  auto negs2 = negs;
  for (auto& c : negs2) c[1] += 3.0;
  auto shifted = hinge_loss(u.data(), x2.data(), negs_of(negs2), 2, 0.5);
  REQUIRE(shifted == Catch::Approx(base).margin(1e-12));
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

TEST_CASE("cross entropy uniform logits") {
  std::vector<double> logits(7, 0.25);
  REQUIRE(cross_entropy_loss(logits, 3) == Catch::Approx(std::log(7.0)));
}

TEST_CASE("cross entropy confident target") {
  std::vector<double> logits = {0.0, 40.0, 0.0};
  REQUIRE(cross_entropy_loss(logits, 1) < 1e-10);
}

TEST_CASE("cross entropy random logits vs hand softmax") {
  std::vector<double> logits = {0.3, -1.2, 0.8};
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  REQUIRE(cross_entropy_loss(logits, 2) == Catch::Approx(-std::log(std::exp(0.8) / z)));
}

TEST_CASE("cross entropy rejects out-of-catalog target") {
  std::vector<double> logits = {0.0, 0.0};
  REQUIRE_THROWS_AS(cross_entropy_loss(logits, 2), ShapeError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed + 9);
    auto logits = rand_vec(6, rng);
    std::vector<double> dl;
    cross_entropy_loss(logits, 2, &dl);
    auto loss = [&] { return cross_entropy_loss(logits, 2); };
    auto res = finite_difference_check(loss, {{logits.data(), 6, dl.data()}});
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Shared properties
// ---------------------------------------------------------------------------

TEST_CASE("losses drop as the positive score rises") {
  // x is aligned with a coordinate the negatives never use, so sweeping
  // u along it moves only the positive score.
  std::vector<double> x2 = {1.0, 0.0};
  std::vector<std::vector<double>> negs2 = {{0.0, 0.4}, {0.0, 0.6}};
  auto ns2 = negs_of(negs2);
  double prev_nce = 1e30, prev_bpr = 1e30, prev_hinge = 1e30;
  for (double s = -2.0; s <= 2.0; s += 0.25) {
    std::vector<double> u = {s, 0.3};
    const double n = nce_loss(u.data(), x2.data(), ns2, 2);
    const double b = bpr_loss(u.data(), x2.data(), ns2, 2);
    const double h = hinge_loss(u.data(), x2.data(), ns2, 2, 0.5);
    REQUIRE(n < prev_nce);
    REQUIRE(b < prev_bpr);
    REQUIRE(h <= prev_hinge);
    REQUIRE(n >= 0.0);
    REQUIRE(b >= 0.0);
    REQUIRE(h >= 0.0);
    prev_nce = n;
    prev_bpr = b;
    prev_hinge = h;
  }
}

TEST_CASE("masked negatives never change the value") {
  Rng rng(15);
  auto u = rand_vec(4, rng);
  auto x = rand_vec(4, rng);
  std::vector<std::vector<double>> negs = {rand_vec(4, rng), rand_vec(4, rng)};
  auto ns = negs_of(negs);

  auto padded = negs;
  padded.push_back(rand_vec(4, rng));
  padded.push_back(rand_vec(4, rng));
  auto ns_pad = negs_of(padded);
  ns_pad.valid = {1, 1, 0, 0};

  REQUIRE(ns_pad.valid_count() == 2);
  REQUIRE(nce_loss(u.data(), x.data(), ns_pad, 4) ==
          Catch::Approx(nce_loss(u.data(), x.data(), ns, 4)).margin(1e-12));
  REQUIRE(bpr_loss(u.data(), x.data(), ns_pad, 4) ==
          Catch::Approx(bpr_loss(u.data(), x.data(), ns, 4)).margin(1e-12));
  REQUIRE(hinge_loss(u.data(), x.data(), ns_pad, 4, 0.5) ==
          Catch::Approx(hinge_loss(u.data(), x.data(), ns, 4, 0.5)).margin(1e-12));
}

TEST_CASE("pairwise loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 3 + 1);
    auto u = rand_vec(4, rng);
    auto x = rand_vec(4, rng);
    std::vector<std::vector<double>> negs = {rand_vec(4, rng), rand_vec(4, rng), rand_vec(4, rng)};
    auto ns = negs_of(negs);

    for (auto kind : {ObjectiveKind::NCE, ObjectiveKind::BPR, ObjectiveKind::Hinge}) {
      ObjectiveConfig cfg;
      cfg.kind = kind;
      cfg.margin = 0.5;
      std::vector<double> du(4, 0.0);
      objective_loss(cfg, u.data(), x.data(), ns, 4, du.data());
      auto loss = [&] { return objective_loss<double>(cfg, u.data(), x.data(), ns, 4); };
      auto res = finite_difference_check(loss, {{u.data(), 4, du.data()}});
      INFO("seed " << seed << " kind " << to_string(kind));
      REQUIRE(res.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("objective config validation") {
  ObjectiveConfig cfg;
  cfg.kind = ObjectiveKind::Hinge;
  cfg.margin = -0.1;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg.margin = 0.5;
  cfg.negatives = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg.kind = ObjectiveKind::L2;
  REQUIRE_NOTHROW(cfg.validate());
  REQUIRE(objective_from_string("bpr") == ObjectiveKind::BPR);
  REQUIRE_THROWS_AS(objective_from_string("zzz"), ConfigError);
}
