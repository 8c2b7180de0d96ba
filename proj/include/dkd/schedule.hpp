#pragma once

#include <cstdint>
#include <vector>

#include "dkd/featureset.hpp"

namespace dkd {

// Partition of class ids into a base session and N-way K-shot sessions.
struct SessionSchedule {
  std::vector<int> base_classes;               // sorted
  std::vector<std::vector<int>> incremental;   // each sorted
  std::size_t way = 0;
  std::size_t shot = 0;

  std::size_t incremental_sessions() const noexcept { return incremental.size(); }
  std::size_t total_sessions() const noexcept { return incremental.size() + 1; }

  // Session that introduces `cls`, or -1.
  int session_of(int cls) const;
  bool is_base(int cls) const { return session_of(cls) == 0; }

  // Classes of one session / of sessions 0..tau, ascending.
  std::vector<int> classes_of(std::size_t session) const;
  std::vector<int> classes_up_to(std::size_t tau) const;

  // Throws InvalidArgument if sets overlap or a session is not `way` wide.
  void validate() const;
  bool operator==(const SessionSchedule&) const = default;
};

// Seeded permutation of 0..total-1: the first `base` ids form session 0 and
// the rest are cut into sessions of `way` classes.
SessionSchedule build_schedule(std::size_t total_classes, std::size_t base_count, std::size_t way,
                               std::size_t shot, std::uint64_t seed);

// Reads the partition from the session tags of a training set and checks
// that every incremental class has the same number of shots.
SessionSchedule schedule_from_features(const FeatureSet& train);

}  // namespace dkd
