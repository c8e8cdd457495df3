// SPDX-License-Identifier: Apache-2.0
//
// Tab-separated interaction log and idle-gap session segmentation.
//
// File layout (version marker, then a fixed column header, then records):
//   # htcn-interactions v1
//   user_id<TAB>item_id<TAB>timestamp<TAB>kind<TAB>impression_group
// kind is "interaction" or "impression"; impression_group is a positive
// ID shared by an interaction and the impressions shown with it, or 0
// when none were recorded.  Records are per-user chronological.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiertcn/batch_types.hpp"
#include "hiertcn/common.hpp"
#include "hiertcn/model.hpp"

namespace hiertcn {

inline constexpr const char* kInteractionsHeader = "# htcn-interactions v1";
inline constexpr const char* kInteractionsColumns =
    "user_id\titem_id\ttimestamp\tkind\timpression_group";

enum class EventKind { Interaction, Impression };

struct Interaction {
  std::uint64_t user = 0;
  std::uint64_t item = 0;
  std::int64_t timestamp = 0;
  EventKind kind = EventKind::Interaction;
  std::uint64_t group = 0;  // impression group, 0 = none

  bool operator==(const Interaction&) const = default;
};

inline void write_interactions(const std::string& path, const std::vector<Interaction>& events) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << kInteractionsHeader << '\n' << kInteractionsColumns << '\n';
  for (const auto& e : events) {
    os << e.user << '\t' << e.item << '\t' << e.timestamp << '\t'
       << (e.kind == EventKind::Interaction ? "interaction" : "impression") << '\t' << e.group
       << '\n';
  }
  if (!os) throw DataError("write failed: " + path);
}

inline std::vector<Interaction> read_interactions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kInteractionsHeader)
    throw DataError("not an interaction log (bad version line): " + path);
  if (!std::getline(is, line) || line != kInteractionsColumns)
    throw DataError("not an interaction log (bad column header): " + path);

  std::vector<Interaction> events;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Interaction e;
    std::string kind;
    char t1, t2, t3, t4;
    if (!(ls >> e.user >> std::noskipws >> t1 >> std::skipws >> e.item >> std::noskipws >> t2 >>
          std::skipws >> e.timestamp >> std::noskipws >> t3) ||
        t1 != '\t' || t2 != '\t' || t3 != '\t')
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed record");
    std::getline(ls, kind, '\t');
    t4 = ls.eof() ? '\0' : '\t';
    if (t4 != '\t' || !(ls >> e.group))
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed record");
    if (kind == "interaction")
      e.kind = EventKind::Interaction;
    else if (kind == "impression")
      e.kind = EventKind::Impression;
    else
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown kind '" + kind + "'");
    events.push_back(e);
  }
  return events;
}

// Stable per-user split preserving record order.
inline std::map<std::uint64_t, std::vector<Interaction>> group_by_user(
    const std::vector<Interaction>& events) {
  std::map<std::uint64_t, std::vector<Interaction>> users;
  for (const auto& e : events) users[e.user].push_back(e);
  return users;
}

// One user's interactions segmented into idle-gap sessions.  `sessions`
// holds indices into the user's event vector (interaction records only);
// timestep t of the interaction sequence maps to session session_of(t).
struct UserSessions {
  std::uint64_t user = 0;
  std::vector<std::vector<std::size_t>> sessions;

  std::size_t interaction_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.size();
    return n;
  }

  std::size_t session_of(std::size_t t) const {
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      if (t < sessions[s].size()) return s;
      t -= sessions[s].size();
    }
    throw Error("session_of: timestep out of range");
  }
};

// A gap strictly greater than the threshold starts a new session; a gap
// of exactly the threshold does not.
inline UserSessions segment_sessions(const std::vector<Interaction>& events,
                                     std::int64_t idle_threshold_seconds = 1800) {
  UserSessions out;
  std::int64_t prev_ts = 0, prev_int_ts = 0;
  bool have_prev = false;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (i > 0 && e.user != events[0].user) throw DataError("segment_sessions: mixed users");
    if (have_prev && e.timestamp < prev_ts)
      throw DataError("segment_sessions: timestamps not sorted");
    prev_ts = e.timestamp;
    have_prev = true;
    if (e.kind != EventKind::Interaction) continue;  // gaps are between interactions
    out.user = e.user;
    if (out.sessions.empty() || e.timestamp - prev_int_ts > idle_threshold_seconds)
      out.sessions.emplace_back();
    out.sessions.back().push_back(i);
    prev_int_ts = e.timestamp;
  }
  return out;
}

// Item-ID view of a segmented history, for model consumption.
inline SessionizedHistory to_history(const std::vector<Interaction>& events,
                                     const UserSessions& us) {
  SessionizedHistory hist;
  hist.reserve(us.sessions.size());
  for (const auto& sess : us.sessions) {
    std::vector<std::uint64_t> items;
    items.reserve(sess.size());
    for (auto i : sess) items.push_back(events[i].item);
    hist.push_back(std::move(items));
  }
  return hist;
}

// Training view: events with negatives reconstructed from impression
// groups (all impression items in the group except the positive).
inline std::vector<TrainSession> to_train_sessions(const std::vector<Interaction>& events,
                                                   const UserSessions& us) {
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> groups;
  for (const auto& e : events)
    if (e.kind == EventKind::Impression && e.group != 0) groups[e.group].push_back(e.item);

  std::vector<TrainSession> out;
  out.reserve(us.sessions.size());
  for (const auto& sess : us.sessions) {
    TrainSession ts;
    ts.events.reserve(sess.size());
    for (auto i : sess) {
      TrainEvent ev;
      ev.item = events[i].item;
      if (events[i].group != 0) {
        auto it = groups.find(events[i].group);
        if (it != groups.end()) {
          bool self_seen = false;  // drop one copy of the positive
          for (auto id : it->second) {
            if (!self_seen && id == ev.item) {
              self_seen = true;
              continue;
            }
            ev.negatives.push_back(id);
          }
        }
      }
      ts.events.push_back(std::move(ev));
    }
    out.push_back(std::move(ts));
  }
  return out;
}

// Full-log convenience: per-user segmentation into generator-ready work
// units, ordered by user ID.
inline std::vector<UserWork> load_user_works(const std::vector<Interaction>& events,
                                             std::int64_t idle_threshold_seconds = 1800) {
  std::vector<UserWork> out;
  for (auto& [uid, evs] : group_by_user(events)) {
    auto us = segment_sessions(evs, idle_threshold_seconds);
    if (us.sessions.empty()) continue;
    out.push_back({uid, to_train_sessions(evs, us)});
  }
  return out;
}

}  // namespace hiertcn
