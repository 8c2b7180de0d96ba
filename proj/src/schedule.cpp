#include "dkd/schedule.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "dkd/rng.hpp"

namespace dkd {

int SessionSchedule::session_of(int cls) const {
  if (std::binary_search(base_classes.begin(), base_classes.end(), cls)) return 0;
  for (std::size_t s = 0; s < incremental.size(); ++s)
    if (std::binary_search(incremental[s].begin(), incremental[s].end(), cls))
      return static_cast<int>(s + 1);
  return -1;
}

std::vector<int> SessionSchedule::classes_of(std::size_t session) const {
  if (session == 0) return base_classes;
  if (session > incremental.size()) throw InvalidArgument("schedule: session out of range");
  return incremental[session - 1];
}

std::vector<int> SessionSchedule::classes_up_to(std::size_t tau) const {
  if (tau > incremental.size()) throw InvalidArgument("schedule: session out of range");
  std::vector<int> out = base_classes;
  for (std::size_t s = 0; s < tau; ++s)
    out.insert(out.end(), incremental[s].begin(), incremental[s].end());
  std::sort(out.begin(), out.end());
  return out;
}

void SessionSchedule::validate() const {
  if (base_classes.empty()) throw InvalidArgument("schedule: empty base session");
  std::set<int> seen;
  auto take = [&](const std::vector<int>& classes) {
    for (int c : classes)
      if (!seen.insert(c).second)
        throw InvalidArgument("schedule: class " + std::to_string(c) + " in two sessions");
  };
  take(base_classes);
  for (std::size_t s = 0; s < incremental.size(); ++s) {
    if (incremental[s].size() != way)
      throw InvalidArgument("schedule: session " + std::to_string(s + 1) + " has " +
                            std::to_string(incremental[s].size()) + " classes, expected " +
                            std::to_string(way));
    take(incremental[s]);
  }
}

SessionSchedule build_schedule(std::size_t total_classes, std::size_t base_count, std::size_t way,
                               std::size_t shot, std::uint64_t seed) {
  if (base_count == 0 || base_count > total_classes)
    throw InvalidArgument("build_schedule: base count must be in [1, total]");
  if (way == 0) throw InvalidArgument("build_schedule: way must be >= 1");
  if (shot == 0) throw InvalidArgument("build_schedule: shot must be >= 1");
  if ((total_classes - base_count) % way != 0)
    throw InvalidArgument("build_schedule: " + std::to_string(total_classes - base_count) +
                          " novel classes do not split into " + std::to_string(way) + "-way sessions");
  std::vector<int> ids(total_classes);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, 0x5c4ed));
  rng.shuffle(ids);

  SessionSchedule s;
  s.way = way;
  s.shot = shot;
  s.base_classes.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(base_count));
  std::sort(s.base_classes.begin(), s.base_classes.end());
  for (std::size_t at = base_count; at < total_classes; at += way) {
    std::vector<int> session(ids.begin() + static_cast<std::ptrdiff_t>(at),
                             ids.begin() + static_cast<std::ptrdiff_t>(at + way));
    std::sort(session.begin(), session.end());
    s.incremental.push_back(std::move(session));
  }
  return s;
}

SessionSchedule schedule_from_features(const FeatureSet& train) {
  std::map<int, std::map<int, std::size_t>> per_session;  // session -> class -> count
  std::map<int, int> class_session;
  for (const Record& r : train.records) {
    if (r.split != Split::train) continue;
    auto [it, fresh] = class_session.emplace(r.label, r.session);
    if (!fresh && it->second != r.session)
      throw InvalidArgument("schedule: class " + std::to_string(r.label) +
                            " tagged with two sessions");
    ++per_session[r.session][r.label];
  }
  if (per_session.empty() || per_session.begin()->first != 0)
    throw InvalidArgument("schedule: training data has no session-0 records");

  SessionSchedule s;
  int expected = 0;
  for (const auto& [session, classes] : per_session) {
    if (session != expected++)
      throw InvalidArgument("schedule: session tags are not contiguous from 0");
    std::vector<int> ids;
    for (const auto& [cls, count] : classes) {
      ids.push_back(cls);
      if (session == 0) continue;
      if (s.shot == 0) s.shot = count;
      if (count != s.shot)
        throw InvalidArgument("schedule: class " + std::to_string(cls) + " has " +
                              std::to_string(count) + " shots, expected " + std::to_string(s.shot));
    }
    if (session == 0) {
      s.base_classes = std::move(ids);
    } else {
      if (s.way == 0) s.way = ids.size();
      s.incremental.push_back(std::move(ids));
    }
  }
  s.validate();
  return s;
}

}  // namespace dkd
