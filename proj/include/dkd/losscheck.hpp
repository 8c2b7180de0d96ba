#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dkd {

struct LossCheckOptions {
  std::size_t n = 8;        // largest batch size drawn
  std::size_t c = 16;       // largest logit width drawn
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  void validate() const;  // n >= 2, c >= 2, trials >= 1
};

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest error (or smallest margin) seen
  double tol = 0.0;
  std::string detail;
};

struct LossCheckReport {
  LossCheckOptions options;
  std::vector<CheckResult> checks;
  bool passed() const;
  std::string text() const;  // header line, then one line per check
};

// Gradient checks against central differences, naive-loop equivalence,
// translation invariance, the mirrored-neighbour construction and the
// outlier-pollution counts.
LossCheckReport run_losscheck(const LossCheckOptions& options);

}  // namespace dkd
