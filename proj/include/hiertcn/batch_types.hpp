// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch row shapes shared by the batch generators and the training
// step.  A target event carries its positive item and the impression
// negatives observed with it.
#pragma once

#include <cstdint>
#include <vector>

namespace hiertcn {

struct TrainEvent {
  std::uint64_t item = 0;
  std::vector<std::uint64_t> negatives;  // impressions minus the positive; may be empty
};

struct TrainSession {
  std::vector<TrainEvent> events;
};

// One batch row for the hierarchical path: a run of consecutive sessions
// from a single user.  reset marks the first chunk of a user's stream;
// otherwise the trainer resumes from the carried high state.
struct HierRowTask {
  std::uint64_t user = 0;
  bool reset = true;
  std::vector<TrainSession> sessions;
};

// One batch row for the single-level path: a user's full history.
struct FlatRowTask {
  std::uint64_t user = 0;
  std::vector<TrainSession> sessions;
};

// A user's full training stream as it enters a batch generator.
struct UserWork {
  std::uint64_t user = 0;
  std::vector<TrainSession> sessions;
};

// Instrumentation for the memory-direction comparison: float counts of
// the materialized model-input blocks (the embedding channels only).
struct BatchCounters {
  std::size_t raw_input_floats = 0;   // sum over blocks materialized this step
  std::size_t peak_block_floats = 0;  // largest single block
  std::size_t targets = 0;

  void add_block(std::size_t rows, std::size_t steps, std::size_t embed_dim) {
    const std::size_t n = rows * steps * embed_dim;
    raw_input_floats += n;
    if (n > peak_block_floats) peak_block_floats = n;
  }
};

}  // namespace hiertcn
