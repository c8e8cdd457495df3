// SPDX-License-Identifier: Apache-2.0
//
// Queue-based mini-batch assembly.  Arriving users go, whole, to the
// queue currently holding the fewest pending sessions (ties: lowest
// index), so one queue carries a user's sessions contiguously and in
// order.  Each batch takes up to max_unroll_sessions sessions per queue
// but never crosses a user boundary inside a row; gradient truncation
// across those per-batch groups is the consumer's business.
//
// The queue structure is the synchronization point: any number of
// enqueue workers may feed one consumer calling next().
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "hiertcn/batch_types.hpp"
#include "hiertcn/common.hpp"

namespace hiertcn {

class MiniBatchGenerator {
 public:
  // pad_limit > 0 caps session length; longer sessions are split into
  // chunks the consumer sees as consecutive per-user groups (its carried
  // state bridges them), counted and reported through the logger.
  MiniBatchGenerator(std::size_t batch_size, std::size_t max_unroll_sessions = 4,
                     std::size_t pad_limit = 0,
                     std::function<void(const std::string&)> logger = nullptr)
      : queues_(batch_size), max_unroll_(max_unroll_sessions), pad_limit_(pad_limit),
        logger_(std::move(logger)) {
    require(batch_size > 0, "minibatch: batch size must be positive");
    require(max_unroll_ > 0, "minibatch: max_unroll_sessions must be positive");
  }

  // Convenience: a fixed offline stream.
  MiniBatchGenerator(std::vector<UserWork> users, std::size_t batch_size,
                     std::size_t max_unroll_sessions = 4, std::size_t pad_limit = 0,
                     std::function<void(const std::string&)> logger = nullptr)
      : MiniBatchGenerator(batch_size, max_unroll_sessions, pad_limit, std::move(logger)) {
    for (auto& u : users) enqueue_user(std::move(u));
    finish();
  }

  void enqueue_user(UserWork u) {
    require(!u.sessions.empty(), "minibatch: user with no sessions");
    for (const auto& s : u.sessions)
      require(!s.events.empty(), "minibatch: empty session");
    {
      std::lock_guard<std::mutex> lk(m_);
      require(!finished_, "minibatch: enqueue after finish");
      arrivals_.push_back(std::move(u));
    }
    cv_.notify_one();
  }

  void finish() {
    {
      std::lock_guard<std::mutex> lk(m_);
      finished_ = true;
    }
    cv_.notify_one();
  }

  // Fills one row per queue (empty rows for idle queues); false once all
  // queues and arrivals are drained.  Single consumer.
  bool next(std::vector<HierRowTask>& rows) {
    std::unique_lock<std::mutex> lk(m_);
    top_up(lk);

    rows.assign(queues_.size(), HierRowTask{});
    bool any = false;
    for (std::size_t q = 0; q < queues_.size(); ++q) {
      auto& queue = queues_[q];
      if (queue.empty()) continue;
      auto& row = rows[q];
      row.user = queue.front().user;
      row.reset = queue.front().user_first;
      while (!queue.empty() && queue.front().user == row.user &&
             row.sessions.size() < max_unroll_) {
        row.sessions.push_back(std::move(queue.front().sess));
        queue.pop_front();
      }
      any = true;
    }
    return any;
  }

  std::size_t split_count() const {
    std::lock_guard<std::mutex> lk(m_);
    return split_count_;
  }

 private:
  struct QueueItem {
    std::uint64_t user = 0;
    TrainSession sess;
    bool user_first = false;
  };

  // Pull arrivals (in order) until every queue holds a full unroll group
  // or the stream dries up; assignment happens here, against live counts.
  void top_up(std::unique_lock<std::mutex>& lk) {
    for (;;) {
      std::size_t least = 0;
      for (std::size_t q = 1; q < queues_.size(); ++q)
        if (queues_[q].size() < queues_[least].size()) least = q;
      if (queues_[least].size() >= max_unroll_) return;
      cv_.wait(lk, [&] { return !arrivals_.empty() || finished_; });
      if (arrivals_.empty()) return;
      assign(std::move(arrivals_.front()), least);
      arrivals_.pop_front();
    }
  }

  void assign(UserWork u, std::size_t q) {
    bool first = true;
    for (auto& sess : u.sessions) {
      if (pad_limit_ > 0 && sess.events.size() > pad_limit_) {
        ++split_count_;
        if (logger_)
          logger_("splitting a session of " + std::to_string(sess.events.size()) +
                  " events for user " + std::to_string(u.user) + " at the pad limit " +
                  std::to_string(pad_limit_));
        for (std::size_t at = 0; at < sess.events.size(); at += pad_limit_) {
          QueueItem item;
          item.user = u.user;
          item.user_first = first;
          first = false;
          const std::size_t n = std::min(pad_limit_, sess.events.size() - at);
          item.sess.events.assign(sess.events.begin() + static_cast<std::ptrdiff_t>(at),
                                  sess.events.begin() + static_cast<std::ptrdiff_t>(at + n));
          queues_[q].push_back(std::move(item));
        }
      } else {
        QueueItem item;
        item.user = u.user;
        item.user_first = first;
        first = false;
        item.sess = std::move(sess);
        queues_[q].push_back(std::move(item));
      }
    }
  }

  mutable std::mutex m_;
  std::condition_variable cv_;
  std::vector<std::deque<QueueItem>> queues_;
  std::deque<UserWork> arrivals_;
  bool finished_ = false;
  std::size_t max_unroll_;
  std::size_t pad_limit_;
  std::size_t split_count_ = 0;
  std::function<void(const std::string&)> logger_;
};

// Full-history batches for the single-level models: rows in arrival
// order, batch_size rows per batch.
inline std::vector<std::vector<FlatRowTask>> flat_row_batches(const std::vector<UserWork>& users,
                                                              std::size_t batch_size) {
  require(batch_size > 0, "minibatch: batch size must be positive");
  std::vector<std::vector<FlatRowTask>> batches;
  for (const auto& u : users) {
    require(!u.sessions.empty(), "minibatch: user with no sessions");
    if (batches.empty() || batches.back().size() == batch_size) batches.emplace_back();
    batches.back().push_back({u.user, u.sessions});
  }
  return batches;
}

}  // namespace hiertcn
