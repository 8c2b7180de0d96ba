#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dkd/distill.hpp"
#include "dkd/model.hpp"

namespace dkd {

// Distillation applied to pre-order members; base members always use IKD.
enum class Arm { ikd, ikd_rkd, ikd_dkd };

Arm parse_arm(std::string_view name);
std::string_view to_string(Arm arm);
PreorderLoss preorder_loss_for(Arm arm);

enum class MemoryPolicy { random, closest };

MemoryPolicy parse_memory_policy(std::string_view name);
std::string_view to_string(MemoryPolicy p);

struct RunConfig {
  std::uint64_t seed = 0;

  // Base session.
  double lr = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  bool cosine = true;

  // Incremental sessions.
  double incremental_lr = 0.1;
  std::size_t incremental_epochs = 200;
  double selector_lr = 0.1;

  double w1 = 50.0;
  double w2 = 50.0;
  double beta1 = 0.2;
  double beta2 = 0.8;
  double alpha = 0.9;
  double gamma = 1.0;

  std::size_t memory = 1;
  MemoryPolicy memory_policy = MemoryPolicy::closest;

  Arm arm = Arm::ikd_dkd;
  RkdVariant rkd_variant = RkdVariant::inner;
  bool selector_momentum = true;
  bool selector_triplet = true;

  std::vector<std::size_t> hidden = {32, 32};
  std::size_t feature_dim = 16;
  std::size_t trunk_layers = 1;      // extractor layers shared with the selector head
  std::size_t trainable_layers = 1;  // trailing extractor layers kept trainable after session 0

  // Expected schedule shape; 0 accepts whatever the data carries.
  std::size_t way = 0;
  std::size_t shot = 0;

  // Throws ConfigError.
  void validate() const;

  TrainConfig base_train() const;
  TrainConfig incremental_train() const;

  nlohmann::ordered_json to_json() const;

  // Keys absent from `j` keep the value in `base`; unknown keys throw.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json(const nlohmann::json& j, const RunConfig& base);
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_text(const std::string& text, const RunConfig& base);
};

}  // namespace dkd
