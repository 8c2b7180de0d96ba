#pragma once

#include <string>

#include "json.hpp"

#include "dkd/datagen.hpp"
#include "dkd/protocol.hpp"

namespace dkd {

nlohmann::ordered_json schedule_to_json(const SessionSchedule& s);
SessionSchedule schedule_from_json(const nlohmann::json& j);

// Unknown keys are rejected; absent keys keep their defaults.
nlohmann::ordered_json genspec_to_json(const GenSpec& g);
GenSpec genspec_from_json(const nlohmann::json& j);

// Checkpoint document (format "dkd-checkpoint", version 1):
//   sessions_done, schedule, current, base   extractor layers with
//                                            {in, out, frozen, weight, bias}
//   protos, base_protos                      {dim, classes: [{id, vector}]}
//   selector                                 head layers, both prototypes,
//                                            initialized, alpha, margin, trunk_layers
//   memory                                   records with origin session
//   rng                                      generator state string
// Weights are stored row-major (out x in) as shortest round-trip decimals.
nlohmann::ordered_json state_to_json(const DdnetState& s);
DdnetState state_from_json(const nlohmann::json& j);

void save_checkpoint(const DdnetState& s, const std::string& path);
DdnetState load_checkpoint(const std::string& path);

}  // namespace dkd
