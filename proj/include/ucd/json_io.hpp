#pragma once

// JSON (de)serialization of configs and reports. Missing keys keep defaults.

#include <json.hpp>

#include "ucd/model.hpp"
#include "ucd/objective.hpp"
#include "ucd/synthgen.hpp"
#include "ucd/trainer.hpp"

namespace ucd {

using json = nlohmann::json;

void to_json(json& j, const BackboneConfig& c);
void from_json(const json& j, BackboneConfig& c);
void to_json(json& j, const TfrConfig& c);
void from_json(const json& j, TfrConfig& c);
void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const SceneSpec& s);
void from_json(const json& j, SceneSpec& s);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const EvalReport& r);
void to_json(json& j, const Counts& c);

json edges_to_json(const EdgeSet& edges);
EdgeSet edges_from_json(const json& j);

}  // namespace ucd
