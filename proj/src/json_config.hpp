#pragma once

#include "fieldguide/learner.hpp"

#include <json.hpp>

namespace fieldguide {

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace fieldguide
