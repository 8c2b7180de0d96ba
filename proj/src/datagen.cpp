#include "dkd/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dkd/rng.hpp"

namespace dkd {
namespace {

Vec unit_direction(Rng& rng, std::size_t dim) {
  Vec u(dim);
  double n2 = 0.0;
  while (n2 == 0.0) {
    n2 = 0.0;
    for (double& x : u) {
      x = rng.normal();
      n2 += x * x;
    }
  }
  const double n = std::sqrt(n2);
  for (double& x : u) x /= n;
  return u;
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ParseError("not a number: '" + std::string(s) + "'", line);
  return v;
}

int parse_int(std::string_view s, std::size_t line) {
  int v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ParseError("not an integer: '" + std::string(s) + "'", line);
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    std::string_view l = text.substr(start, pos - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    out.push_back(l);
    start = pos + 1;
  }
  return out;
}

FeatureSet read_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("missing header", 1);
  const auto header = split_commas(lines[0]);
  if (header.size() < 3 || header[0] != "label" || header[1] != "split" || header[2] != "session")
    throw ParseError("header must start with label,split,session", 1);
  FeatureSet set;
  set.dim = header.size() - 3;
  for (std::size_t k = 0; k < set.dim; ++k)
    if (header[3 + k] != "f" + std::to_string(k))
      throw ParseError("header column " + std::to_string(3 + k) + " must be f" + std::to_string(k), 1);

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) {
      if (ln + 1 == lines.size()) break;
      throw ParseError("empty row", ln + 1);
    }
    const auto fields = split_commas(lines[ln]);
    if (fields.size() != 3 + set.dim)
      throw SchemaError("line " + std::to_string(ln + 1) + ": expected " +
                        std::to_string(3 + set.dim) + " fields, got " +
                        std::to_string(fields.size()));
    Record r;
    r.label = parse_int(fields[0], ln + 1);
    try {
      r.split = parse_split(fields[1]);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), ln + 1);
    }
    r.session = parse_int(fields[2], ln + 1);
    r.feature.resize(set.dim);
    for (std::size_t k = 0; k < set.dim; ++k) r.feature[k] = parse_double(fields[3 + k], ln + 1);
    set.records.push_back(std::move(r));
  }
  set.validate();
  return set;
}

FeatureSet read_jsonl(std::string_view text) {
  FeatureSet set;
  bool have_dim = false;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[ln]);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), ln + 1);
    }
    Record r;
    try {
      r.label = j.at("label").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.session = j.at("session").get<int>();
      r.feature = j.at("feature").get<Vec>();
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad record: ") + e.what(), ln + 1);
    }
    if (!have_dim) {
      set.dim = r.feature.size();
      have_dim = true;
    } else if (r.feature.size() != set.dim) {
      throw SchemaError("line " + std::to_string(ln + 1) + ": dimension " +
                        std::to_string(r.feature.size()) + " != " + std::to_string(set.dim));
    }
    set.records.push_back(std::move(r));
  }
  set.validate();
  return set;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void GenSpec::validate() const {
  if (classes < 1 || dim < 1 || train_per_class < 1 || test_per_class < 1 || way < 1 || shot < 1)
    throw InvalidArgument("GenSpec: counts must be >= 1");
  if (!(within_std > 0.0)) throw InvalidArgument("GenSpec: within_std must be > 0");
  if (!(spread >= 0.0)) throw InvalidArgument("GenSpec: spread must be >= 0");
}

SessionSchedule gen_schedule(const GenSpec& spec) {
  return build_schedule(spec.classes, spec.base_classes, spec.way, spec.shot, spec.seed);
}

FeatureSet gen_gaussian_mixture(const GenSpec& spec) {
  spec.validate();
  const SessionSchedule schedule = gen_schedule(spec);
  Rng rng(derive_seed(spec.seed, 0xda7a));
  const Vec gap_dir = unit_direction(rng, spec.dim);

  std::vector<Vec> centers(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Vec u = unit_direction(rng, spec.dim);
    const double radius = spec.spread * std::pow(rng.uniform(), 1.0 / static_cast<double>(spec.dim));
    for (double& x : u) x *= radius;
    if (!schedule.is_base(static_cast<int>(c)))
      for (std::size_t k = 0; k < spec.dim; ++k) u[k] += spec.gap * gap_dir[k];
    centers[c] = std::move(u);
  }

  FeatureSet set;
  set.dim = spec.dim;
  for (Split split : {Split::train, Split::test}) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const int session = schedule.session_of(static_cast<int>(c));
      const std::size_t count = split == Split::test ? spec.test_per_class
                                : session == 0       ? spec.train_per_class
                                                     : spec.shot;
      for (std::size_t i = 0; i < count; ++i) {
        Record r;
        r.label = static_cast<int>(c);
        r.session = session;
        r.split = split;
        r.feature = centers[c];
        for (double& x : r.feature) x += spec.within_std * rng.normal();
        set.records.push_back(std::move(r));
      }
    }
  }
  return set;
}

FeatureFormat format_for_path(const std::string& path) {
  auto ends_with = [&](std::string_view suf) {
    return path.size() >= suf.size() && path.compare(path.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".csv")) return FeatureFormat::csv;
  if (ends_with(".jsonl") || ends_with(".json")) return FeatureFormat::jsonl;
  throw InvalidArgument("cannot infer feature format from '" + path + "'");
}

std::string write_features(const FeatureSet& set, FeatureFormat format) {
  set.validate();
  std::string out;
  if (format == FeatureFormat::csv) {
    out += "label,split,session";
    for (std::size_t k = 0; k < set.dim; ++k) out += ",f" + std::to_string(k);
    out += '\n';
    for (const Record& r : set.records) {
      out += std::to_string(r.label);
      out += ',';
      out += to_string(r.split);
      out += ',';
      out += std::to_string(r.session);
      for (double x : r.feature) {
        out += ',';
        out += format_double(x);
      }
      out += '\n';
    }
  } else {
    for (const Record& r : set.records) {
      nlohmann::ordered_json j;
      j["label"] = r.label;
      j["split"] = std::string(to_string(r.split));
      j["session"] = r.session;
      j["feature"] = r.feature;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

FeatureSet read_features(const std::string& text, FeatureFormat format) {
  return format == FeatureFormat::csv ? read_csv(text) : read_jsonl(text);
}

void save_features(const FeatureSet& set, const std::string& path) {
  save_features(set, path, format_for_path(path));
}

void save_features(const FeatureSet& set, const std::string& path, FeatureFormat format) {
  const std::string text = write_features(set, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

FeatureSet load_features(const std::string& path) { return load_features(path, format_for_path(path)); }

FeatureSet load_features(const std::string& path, FeatureFormat format) {
  return read_features(read_file(path), format);
}

FeatureSet make_outliers(const FeatureSet& set, double pct, std::uint64_t seed, int min_session,
                         std::vector<std::size_t>* replaced) {
  if (!(pct >= 0.0 && pct <= 100.0)) throw InvalidArgument("make_outliers: pct must be in [0,100]");
  if (replaced) replaced->clear();
  FeatureSet out = set;
  if (pct == 0.0 || set.empty()) return out;

  // Global statistics of the training features.
  Vec mean(set.dim, 0.0);
  std::size_t n_train = 0;
  for (const Record& r : set.records) {
    if (r.split != Split::train) continue;
    for (std::size_t k = 0; k < set.dim; ++k) mean[k] += r.feature[k];
    ++n_train;
  }
  if (n_train == 0) return out;
  for (double& m : mean) m /= static_cast<double>(n_train);
  double var = 0.0;
  for (const Record& r : set.records) {
    if (r.split != Split::train) continue;
    for (std::size_t k = 0; k < set.dim; ++k) var += (r.feature[k] - mean[k]) * (r.feature[k] - mean[k]);
  }
  const double sigma = std::sqrt(var / static_cast<double>(n_train * set.dim));

  Rng rng(derive_seed(seed, 0x0717));
  const Vec dir = unit_direction(rng, set.dim);
  Vec center(set.dim);
  for (std::size_t k = 0; k < set.dim; ++k) center[k] = mean[k] + 10.0 * sigma * dir[k];

  std::map<int, std::vector<std::size_t>> by_session;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const Record& r = set.records[i];
    if (r.split == Split::train && r.session >= min_session) by_session[r.session].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (auto& [session, idx] : by_session) {
    const auto count =
        static_cast<std::size_t>(std::floor(pct / 100.0 * static_cast<double>(idx.size()) + 1e-9));
    rng.shuffle(idx);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  }
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen)
    for (std::size_t k = 0; k < set.dim; ++k) out.records[i].feature[k] = center[k] + sigma * rng.normal();
  if (replaced) *replaced = std::move(chosen);
  return out;
}

}  // namespace dkd
