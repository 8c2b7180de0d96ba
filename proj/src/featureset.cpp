#include "dkd/featureset.hpp"

#include <cmath>
#include <string>

namespace dkd {

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

void FeatureSet::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    if (r.feature.size() != dim)
      throw SchemaError("record " + std::to_string(i) + ": dimension " +
                        std::to_string(r.feature.size()) + " != " + std::to_string(dim));
    if (r.label < 0) throw SchemaError("record " + std::to_string(i) + ": negative label");
    if (r.session < 0) throw SchemaError("record " + std::to_string(i) + ": negative session");
    for (double x : r.feature)
      if (!std::isfinite(x)) throw SchemaError("record " + std::to_string(i) + ": non-finite value");
  }
}

void FeatureSet::add(Record r) {
  if (records.empty() && dim == 0) dim = r.feature.size();
  if (r.feature.size() != dim) throw SchemaError("FeatureSet::add: dimension mismatch");
  records.push_back(std::move(r));
}

FeatureSet FeatureSet::filter_split(Split s) const {
  FeatureSet out;
  out.dim = dim;
  for (const Record& r : records)
    if (r.split == s) out.records.push_back(r);
  return out;
}

}  // namespace dkd
