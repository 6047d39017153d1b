#pragma once

// nlohmann::json conversions for configuration types shared by checkpoints,
// trial logs and experiment configs.

#include "json.hpp"
#include "tsgnn/models.hpp"

namespace tsgnn {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

}  // namespace tsgnn
