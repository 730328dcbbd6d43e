#pragma once

#include <json.hpp>

#include "carl/trainer.hpp"

namespace carl {

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const PTDConfig& c);
void from_json(const nlohmann::json& j, PTDConfig& c);
void to_json(nlohmann::json& j, const CarlConfig& c);
void from_json(const nlohmann::json& j, CarlConfig& c);

}  // namespace carl
