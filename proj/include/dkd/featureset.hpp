#pragma once

#include <string_view>

#include "dkd/types.hpp"

namespace dkd {

enum class Split { train, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Record {
  Vec feature;
  int label = 0;
  int session = 0;  // session of origin
  Split split = Split::train;

  bool operator==(const Record&) const = default;
};

// Labeled feature vectors sharing one dimension.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<Record> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  // Throws SchemaError on a dimension mismatch or negative label / session.
  void validate() const;
  void add(Record r);

  FeatureSet filter_split(Split s) const;
  bool operator==(const FeatureSet&) const = default;
};

}  // namespace dkd
