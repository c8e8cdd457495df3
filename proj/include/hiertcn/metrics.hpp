// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics over candidate pools.  Ranks are 1-indexed and
// pessimistic: candidates scoring strictly higher than the ground truth
// rank ahead of it, and so does every other candidate tied with it, so
// a constant scorer earns the worst possible rank.
#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiertcn/common.hpp"

namespace hiertcn {

// `scores` holds every pool candidate exactly once, the ground truth
// included at `gt_index`.
inline std::size_t pessimistic_rank(const std::vector<double>& scores, std::size_t gt_index) {
  require(gt_index < scores.size(), "rank: ground-truth index out of range");
  const double gt = scores[gt_index];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == gt_index) continue;
    if (scores[i] >= gt) ++rank;
  }
  return rank;
}

inline double recall_at_k(std::size_t rank, std::size_t k) {
  require(rank >= 1, "recall: rank is 1-indexed");
  return rank <= k ? 1.0 : 0.0;
}

inline double reciprocal_rank(std::size_t rank) {
  require(rank >= 1, "mrr: rank is 1-indexed");
  return 1.0 / static_cast<double>(rank);
}

inline double rank_percentile(std::size_t rank, std::size_t pool_size) {
  require(rank >= 1 && rank <= pool_size, "mrp: need 1 <= rank <= pool size");
  return static_cast<double>(rank) / static_cast<double>(pool_size);
}

// Segment axes mirroring the breakdown plots: how much history the user
// has, where the event sits inside its session, and how long the user
// was away before the session started.
struct SegmentKey {
  std::size_t history_len = 0;   // interactions before this one
  std::size_t pos_in_session = 0;
  std::int64_t gap_seconds = -1;  // since the previous session; -1 = first session
};

inline std::string history_bucket(std::size_t len) {
  if (len == 0) return "0";
  std::size_t lo = 1;
  while (lo * 2 <= len) lo *= 2;
  if (lo == 1) return "1";
  return std::to_string(lo) + "-" + std::to_string(2 * lo - 1);
}

inline std::string position_bucket(std::size_t pos) {
  return pos >= 8 ? std::string("8+") : std::to_string(pos);
}

inline std::string gap_bucket(std::int64_t gap_seconds) {
  if (gap_seconds < 0) return "none";
  const double h = static_cast<double>(gap_seconds) / 3600.0;
  if (h < 1) return "<1h";
  std::int64_t lo = 1;
  while (lo * 2 <= h) lo *= 2;
  if (lo >= 64) return ">=64h";
  return std::to_string(lo) + "-" + std::to_string(2 * lo) + "h";
}

struct MetricBucket {
  std::size_t n = 0;
  double recall1 = 0.0, recall5 = 0.0, recall10 = 0.0;
  double mrr = 0.0, mrp = 0.0;

  void add(std::size_t rank, std::size_t pool_size) {
    ++n;
    recall1 += recall_at_k(rank, 1);
    recall5 += recall_at_k(rank, 5);
    recall10 += recall_at_k(rank, 10);
    mrr += reciprocal_rank(rank);
    mrp += rank_percentile(rank, pool_size);
  }

  void merge(const MetricBucket& o) {
    n += o.n;
    recall1 += o.recall1;
    recall5 += o.recall5;
    recall10 += o.recall10;
    mrr += o.mrr;
    mrp += o.mrp;
  }

  nlohmann::json to_json() const {
    const double dn = n == 0 ? 1.0 : static_cast<double>(n);
    return {{"n", n},          {"recall@1", recall1 / dn},  {"recall@5", recall5 / dn},
            {"recall@10", recall10 / dn}, {"mrr", mrr / dn}, {"mrp", mrp / dn}};
  }
};

struct MetricsReport {
  MetricBucket all;
  std::size_t skipped = 0;  // targets without a usable pool
  std::map<std::string, MetricBucket> by_history;
  std::map<std::string, MetricBucket> by_position;
  std::map<std::string, MetricBucket> by_gap;

  void add(std::size_t rank, std::size_t pool_size, const SegmentKey& seg) {
    all.add(rank, pool_size);
    by_history[history_bucket(seg.history_len)].add(rank, pool_size);
    by_position[position_bucket(seg.pos_in_session)].add(rank, pool_size);
    if (seg.pos_in_session == 0) by_gap[gap_bucket(seg.gap_seconds)].add(rank, pool_size);
  }

  void merge(const MetricsReport& o) {
    all.merge(o.all);
    skipped += o.skipped;
    for (const auto& [k, v] : o.by_history) by_history[k].merge(v);
    for (const auto& [k, v] : o.by_position) by_position[k].merge(v);
    for (const auto& [k, v] : o.by_gap) by_gap[k].merge(v);
  }

  double recall(std::size_t k) const {
    const double dn = all.n == 0 ? 1.0 : static_cast<double>(all.n);
    if (k == 1) return all.recall1 / dn;
    if (k == 5) return all.recall5 / dn;
    if (k == 10) return all.recall10 / dn;
    throw ConfigError("report tracks recall at K in {1,5,10}");
  }
  double mrr() const { return all.n == 0 ? 0.0 : all.mrr / static_cast<double>(all.n); }
  double mrp() const { return all.n == 0 ? 0.0 : all.mrp / static_cast<double>(all.n); }

  nlohmann::json to_json() const {
    nlohmann::json hist, pos, gap;
    for (const auto& [k, v] : by_history) hist[k] = v.to_json();
    for (const auto& [k, v] : by_position) pos[k] = v.to_json();
    for (const auto& [k, v] : by_gap) gap[k] = v.to_json();
    return {{"version", 1},
            {"scored", all.n},
            {"skipped", skipped},
            {"metrics", all.to_json()},
            {"breakdowns",
             {{"history_length", hist}, {"session_position", pos}, {"session_gap", gap}}}};
  }

  // Flat rows for plotting: segment,label,n,recall@1,recall@5,recall@10,mrr,mrp
  std::string to_csv() const {
    std::ostringstream os;
    os << "segment,label,n,recall@1,recall@5,recall@10,mrr,mrp\n";
    auto row = [&](const std::string& seg, const std::string& label, const MetricBucket& b) {
      const double dn = b.n == 0 ? 1.0 : static_cast<double>(b.n);
      os << seg << ',' << label << ',' << b.n << ',' << b.recall1 / dn << ',' << b.recall5 / dn
         << ',' << b.recall10 / dn << ',' << b.mrr / dn << ',' << b.mrp / dn << '\n';
    };
    row("all", "all", all);
    for (const auto& [k, v] : by_history) row("history_length", k, v);
    for (const auto& [k, v] : by_position) row("session_position", k, v);
    for (const auto& [k, v] : by_gap) row("session_gap", k, v);
    return os.str();
  }
};

}  // namespace hiertcn
