#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dkd/protocol.hpp"

namespace dkd {

// `session,acc,acc_b,acc_n,sa,kr,ad`, six decimals, LF line endings.
std::string sessions_csv(const std::vector<MetricRow>& rows);
// `arm,momentum,triplet,acc_b,acc_n,sa,kr`
std::string ablation_csv(const std::vector<AblationRow>& rows);
// `arm,pct,acc0,acc_final,ad`
std::string attack_csv(const std::vector<AttackRow>& rows);

inline constexpr const char* kSessionsHeader = "session,acc,acc_b,acc_n,sa,kr,ad";
inline constexpr const char* kAblationHeader = "arm,momentum,triplet,acc_b,acc_n,sa,kr";
inline constexpr const char* kAttackHeader = "arm,pct,acc0,acc_final,ad";

// Run manifest: format, version, seed, config, schedule, per-session rows
// (all MetricRow fields) and the AA/AF/KR/AD summary.
nlohmann::ordered_json manifest_json(const RunReport& report);

struct ManifestDiff {
  bool identical = true;
  std::string text;  // one line per differing config key or metric
};
ManifestDiff compare_manifests(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace dkd
