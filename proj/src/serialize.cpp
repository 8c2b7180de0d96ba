#include "dkd/serialize.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dkd {
namespace {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing key '") + key + "'");
  return *it;
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("key '") + key + "': " + e.what());
  }
}

ojson mlp_to_json(const Mlp& m) {
  ojson layers = ojson::array();
  for (const Layer& l : m.layers()) {
    ojson jl;
    jl["in"] = l.in();
    jl["out"] = l.out();
    jl["frozen"] = l.frozen;
    jl["weight"] = l.weight.data();
    jl["bias"] = l.bias;
    layers.push_back(std::move(jl));
  }
  return layers;
}

Mlp mlp_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("layers must be an array");
  std::vector<Layer> layers;
  for (const json& jl : j) {
    const auto in = get<std::size_t>(jl, "in"), out = get<std::size_t>(jl, "out");
    const auto w = get<Vec>(jl, "weight");
    const auto b = get<Vec>(jl, "bias");
    if (w.size() != in * out || b.size() != out) throw SchemaError("layer shape does not match data");
    Layer l;
    l.weight = Matrix(out, in);
    std::copy(w.begin(), w.end(), l.weight.data().begin());
    l.bias = b;
    l.frozen = get<bool>(jl, "frozen");
    layers.push_back(std::move(l));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
}

ojson bank_to_json(const PrototypeBank& b) {
  ojson j;
  j["dim"] = b.dim();
  ojson classes = ojson::array();
  for (const auto& [id, v] : b.entries()) classes.push_back({{"id", id}, {"vector", v}});
  j["classes"] = std::move(classes);
  return j;
}

PrototypeBank bank_from_json(const json& j) {
  PrototypeBank b(get<std::size_t>(j, "dim"));
  for (const json& c : field(j, "classes")) {
    Vec v = get<Vec>(c, "vector");
    if (v.size() != b.dim()) throw SchemaError("prototype dimension mismatch");
    b.set(get<int>(c, "id"), std::move(v));
  }
  return b;
}

ojson record_to_json(const Record& r) {
  ojson j;
  j["label"] = r.label;
  j["split"] = std::string(to_string(r.split));
  j["session"] = r.session;
  j["feature"] = r.feature;
  return j;
}

Record record_from_json(const json& j) {
  Record r;
  r.label = get<int>(j, "label");
  r.session = get<int>(j, "session");
  try {
    r.split = parse_split(get<std::string>(j, "split"));
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
  r.feature = get<Vec>(j, "feature");
  return r;
}

}  // namespace

ojson schedule_to_json(const SessionSchedule& s) {
  ojson j;
  j["base_classes"] = s.base_classes;
  j["incremental"] = s.incremental;
  j["way"] = s.way;
  j["shot"] = s.shot;
  return j;
}

SessionSchedule schedule_from_json(const json& j) {
  SessionSchedule s;
  s.base_classes = get<std::vector<int>>(j, "base_classes");
  s.incremental = get<std::vector<std::vector<int>>>(j, "incremental");
  s.way = get<std::size_t>(j, "way");
  s.shot = get<std::size_t>(j, "shot");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
  return s;
}

ojson genspec_to_json(const GenSpec& g) {
  ojson j;
  j["classes"] = g.classes;
  j["base_classes"] = g.base_classes;
  j["way"] = g.way;
  j["shot"] = g.shot;
  j["dim"] = g.dim;
  j["train_per_class"] = g.train_per_class;
  j["test_per_class"] = g.test_per_class;
  j["spread"] = g.spread;
  j["within_std"] = g.within_std;
  j["gap"] = g.gap;
  j["seed"] = g.seed;
  return j;
}

GenSpec genspec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generator spec must be a JSON object");
  const ojson known = genspec_to_json(GenSpec{});
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("unknown generator key '" + it.key() + "'");
  GenSpec g;
  auto count = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0)
      throw ConfigError(std::string("'") + key + "' must be a nonnegative integer");
    out = j[key].get<std::size_t>();
  };
  auto real = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
    out = j[key].get<double>();
  };
  count("classes", g.classes);
  count("base_classes", g.base_classes);
  count("way", g.way);
  count("shot", g.shot);
  count("dim", g.dim);
  count("train_per_class", g.train_per_class);
  count("test_per_class", g.test_per_class);
  real("spread", g.spread);
  real("within_std", g.within_std);
  real("gap", g.gap);
  std::size_t seed = g.seed;
  count("seed", seed);
  g.seed = seed;
  try {
    g.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

ojson state_to_json(const DdnetState& s) {
  ojson j;
  j["format"] = "dkd-checkpoint";
  j["version"] = 1;
  j["sessions_done"] = s.sessions_done;
  j["schedule"] = schedule_to_json(s.schedule);
  j["current"] = mlp_to_json(s.current);
  j["base"] = mlp_to_json(s.base);
  j["protos"] = bank_to_json(s.protos);
  j["base_protos"] = bank_to_json(s.base_protos);
  ojson sel;
  sel["head"] = mlp_to_json(s.selector.head);
  sel["proto_novel"] = s.selector.proto_novel;
  sel["proto_base"] = s.selector.proto_base;
  sel["initialized"] = s.selector.initialized;
  sel["alpha"] = s.selector.alpha;
  sel["margin"] = s.selector.margin;
  sel["trunk_layers"] = s.selector.trunk_layers;
  j["selector"] = std::move(sel);
  ojson mem = ojson::array();
  for (const Record& r : s.memory.records()) mem.push_back(record_to_json(r));
  j["memory"] = std::move(mem);
  j["rng"] = s.rng.state();
  return j;
}

DdnetState state_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "dkd-checkpoint")
    throw SchemaError("not a dkd checkpoint");
  if (get<int>(j, "version") != 1) throw SchemaError("unsupported checkpoint version");
  DdnetState s;
  s.sessions_done = get<std::size_t>(j, "sessions_done");
  s.schedule = schedule_from_json(field(j, "schedule"));
  s.current = mlp_from_json(field(j, "current"));
  s.base = mlp_from_json(field(j, "base"));
  s.protos = bank_from_json(field(j, "protos"));
  s.base_protos = bank_from_json(field(j, "base_protos"));
  const json& sel = field(j, "selector");
  s.selector.head = mlp_from_json(field(sel, "head"));
  s.selector.proto_novel = get<Vec>(sel, "proto_novel");
  s.selector.proto_base = get<Vec>(sel, "proto_base");
  s.selector.initialized = get<bool>(sel, "initialized");
  s.selector.alpha = get<double>(sel, "alpha");
  s.selector.margin = get<double>(sel, "margin");
  s.selector.trunk_layers = get<std::size_t>(sel, "trunk_layers");
  for (const json& r : field(j, "memory")) {
    Record rec = record_from_json(r);
    s.memory.by_class[rec.label].push_back(std::move(rec));
  }
  try {
    s.rng.set_state(get<std::string>(j, "rng"));
  } catch (const ParseError& e) {
    throw SchemaError(e.what());
  }
  return s;
}

void save_checkpoint(const DdnetState& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << state_to_json(s).dump(1) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

DdnetState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  return state_from_json(j);
}

}  // namespace dkd
