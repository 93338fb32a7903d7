#pragma once

// JSON conversions for configuration types. Requires nlohmann/json
// ("json.hpp") on the include path.

#include "json.hpp"
#include "sevq/model_config.hpp"
#include "sevq/preprocessing.hpp"
#include "sevq/synthetic.hpp"
#include "sevq/training.hpp"

namespace sevq {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);
void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace sevq
