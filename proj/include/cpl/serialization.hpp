#pragma once

// JSON mapping of the configuration structs. Missing keys keep the struct
// defaults; unknown keys are rejected.

#include "cpl/data.hpp"
#include "cpl/evaluation.hpp"
#include "cpl/frame_generator.hpp"
#include "cpl/replay.hpp"
#include "cpl/task_inference.hpp"
#include "cpl/world_model.hpp"

#include <json.hpp>

namespace cpl {

using json = nlohmann::json;

void to_json(json& j, const WorldModelConfig& c);
void from_json(const json& j, WorldModelConfig& c);
void to_json(json& j, const GeneratorConfig& c);
void from_json(const json& j, GeneratorConfig& c);
void to_json(json& j, const TrainSchedule& c);
void from_json(const json& j, TrainSchedule& c);
void to_json(json& j, const SyntheticTaskConfig& c);
void from_json(const json& j, SyntheticTaskConfig& c);
void to_json(json& j, const AdaptOptions& c);
void from_json(const json& j, AdaptOptions& c);

/// Throws ConfigError listing keys of `j` not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where);

} // namespace cpl
