#pragma once

#include <cstdint>
#include <string>

#include "dkd/featureset.hpp"
#include "dkd/schedule.hpp"

namespace dkd {

struct GenSpec {
  std::size_t classes = 10;
  std::size_t base_classes = 6;
  std::size_t way = 2;
  std::size_t shot = 5;
  std::size_t dim = 16;
  std::size_t train_per_class = 50;  // base classes; novel classes get `shot`
  std::size_t test_per_class = 30;
  double spread = 4.0;      // radius of the ball holding class centers
  double within_std = 1.0;  // isotropic per-class standard deviation
  double gap = 0.0;         // extra offset of novel centers along one direction
  std::uint64_t seed = 0;

  void validate() const;
};

// Gaussian mixture with session tags taken from
// build_schedule(classes, base_classes, way, shot, seed).
FeatureSet gen_gaussian_mixture(const GenSpec& spec);
SessionSchedule gen_schedule(const GenSpec& spec);

enum class FeatureFormat { csv, jsonl };

// csv for ".csv", jsonl for ".jsonl" / ".json"; anything else throws.
FeatureFormat format_for_path(const std::string& path);

// CSV: header `label,split,session,f0,...,f{d-1}`. JSONL: one object per
// line with keys label, split, session, feature. UTF-8, LF endings.
std::string write_features(const FeatureSet& set, FeatureFormat format);
FeatureSet read_features(const std::string& text, FeatureFormat format);

void save_features(const FeatureSet& set, const std::string& path);
void save_features(const FeatureSet& set, const std::string& path, FeatureFormat format);
FeatureSet load_features(const std::string& path);
FeatureSet load_features(const std::string& path, FeatureFormat format);

// Replaces floor(pct/100 * n_s) training features in every session s >=
// min_session with draws from N(mu + 10 sigma u, sigma^2 I), where mu and
// sigma are the training mean and global standard deviation and u is a
// seeded unit direction. Labels and tags are kept. `replaced`, if given,
// receives the sorted record indices that changed.
FeatureSet make_outliers(const FeatureSet& set, double pct, std::uint64_t seed,
                         int min_session = 0, std::vector<std::size_t>* replaced = nullptr);

}  // namespace dkd
