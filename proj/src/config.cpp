#include "dkd/config.hpp"

#include <set>

namespace dkd {

Arm parse_arm(std::string_view name) {
  if (name == "ikd") return Arm::ikd;
  if (name == "ikd+rkd") return Arm::ikd_rkd;
  if (name == "ikd+dkd") return Arm::ikd_dkd;
  throw ConfigError("unknown arm '" + std::string(name) + "' (expected ikd, ikd+rkd, ikd+dkd)");
}

std::string_view to_string(Arm arm) {
  switch (arm) {
    case Arm::ikd: return "ikd";
    case Arm::ikd_rkd: return "ikd+rkd";
    case Arm::ikd_dkd: return "ikd+dkd";
  }
  return "ikd";
}

PreorderLoss preorder_loss_for(Arm arm) {
  switch (arm) {
    case Arm::ikd: return PreorderLoss::ikd;
    case Arm::ikd_rkd: return PreorderLoss::rkd;
    case Arm::ikd_dkd: return PreorderLoss::dkd;
  }
  return PreorderLoss::ikd;
}

MemoryPolicy parse_memory_policy(std::string_view name) {
  if (name == "random") return MemoryPolicy::random;
  if (name == "closest") return MemoryPolicy::closest;
  throw ConfigError("unknown memory policy '" + std::string(name) + "'");
}

std::string_view to_string(MemoryPolicy p) { return p == MemoryPolicy::random ? "random" : "closest"; }

void RunConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(lr > 0.0, "lr must be > 0");
  need(incremental_lr > 0.0, "incremental_lr must be > 0");
  need(selector_lr > 0.0, "selector_lr must be > 0");
  need(epochs >= 1, "epochs must be >= 1");
  need(incremental_epochs >= 1, "incremental_epochs must be >= 1");
  need(batch_size >= 2, "batch_size must be >= 2");
  need(w1 >= 0.0 && w2 >= 0.0, "w1, w2 must be >= 0");
  need(beta1 >= 0.0 && beta2 >= 0.0, "beta1, beta2 must be >= 0");
  need(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1]");
  need(gamma > 0.0, "gamma must be > 0");
  need(feature_dim >= 1, "feature_dim must be >= 1");
  for (std::size_t h : hidden) need(h >= 1, "hidden widths must be >= 1");
  need(trunk_layers >= 1 && trunk_layers <= hidden.size(),
       "trunk_layers must be in [1, number of hidden layers]");
  need(trainable_layers >= 1 && trainable_layers <= hidden.size() + 1,
       "trainable_layers must be in [1, depth]");
}

TrainConfig RunConfig::base_train() const { return {lr, epochs, batch_size, cosine, seed}; }

TrainConfig RunConfig::incremental_train() const {
  return {incremental_lr, incremental_epochs, batch_size, cosine, seed};
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["cosine"] = cosine;
  j["incremental_lr"] = incremental_lr;
  j["incremental_epochs"] = incremental_epochs;
  j["selector_lr"] = selector_lr;
  j["w1"] = w1;
  j["w2"] = w2;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["alpha"] = alpha;
  j["gamma"] = gamma;
  j["memory"] = memory;
  j["memory_policy"] = std::string(to_string(memory_policy));
  j["arm"] = std::string(to_string(arm));
  j["rkd_variant"] = std::string(to_string(rkd_variant));
  j["selector_momentum"] = selector_momentum;
  j["selector_triplet"] = selector_triplet;
  j["hidden"] = hidden;
  j["feature_dim"] = feature_dim;
  j["trunk_layers"] = trunk_layers;
  j["trainable_layers"] = trainable_layers;
  j["way"] = way;
  j["shot"] = shot;
  return j;
}

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer() || it->get<long long>() < 0)
        throw ConfigError(std::string("'") + key + "' must be a nonnegative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(std::string("'") + key + "' must be a boolean");
    }
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("'") + key + "': " + e.what());
  }
}

std::string read_string(const nlohmann::json& j, const char* key, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const RunConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = base;
  const nlohmann::ordered_json known = c.to_json();
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

  read(j, "seed", c.seed);
  read(j, "lr", c.lr);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "cosine", c.cosine);
  read(j, "incremental_lr", c.incremental_lr);
  read(j, "incremental_epochs", c.incremental_epochs);
  read(j, "selector_lr", c.selector_lr);
  read(j, "w1", c.w1);
  read(j, "w2", c.w2);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "alpha", c.alpha);
  read(j, "gamma", c.gamma);
  read(j, "memory", c.memory);
  c.memory_policy = parse_memory_policy(read_string(j, "memory_policy", std::string(to_string(c.memory_policy))));
  c.arm = parse_arm(read_string(j, "arm", std::string(to_string(c.arm))));
  try {
    c.rkd_variant = parse_rkd_variant(read_string(j, "rkd_variant", std::string(to_string(c.rkd_variant))));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  read(j, "selector_momentum", c.selector_momentum);
  read(j, "selector_triplet", c.selector_triplet);
  if (j.contains("hidden")) {
    const auto& h = j.at("hidden");
    if (!h.is_array()) throw ConfigError("'hidden' must be an array of widths");
    c.hidden.clear();
    for (const auto& w : h) {
      if (!w.is_number_integer() || w.get<long long>() < 1)
        throw ConfigError("'hidden' widths must be positive integers");
      c.hidden.push_back(w.get<std::size_t>());
    }
  }
  read(j, "feature_dim", c.feature_dim);
  read(j, "trunk_layers", c.trunk_layers);
  read(j, "trainable_layers", c.trainable_layers);
  read(j, "way", c.way);
  read(j, "shot", c.shot);
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_text(const std::string& text, const RunConfig& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j, base);
}

RunConfig RunConfig::from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }

RunConfig RunConfig::from_json_text(const std::string& text) {
  return from_json_text(text, RunConfig{});
}

}  // namespace dkd
