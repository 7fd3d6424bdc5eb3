#pragma once

#include <nlohmann/json.hpp>

#include "evoqf/cohort.hpp"
#include "evoqf/model.hpp"
#include "evoqf/trainer.hpp"

namespace evoqf {

using Json = nlohmann::json;

// Missing keys take the struct defaults; wrong types or values throw
// ConfigInvalid (BadManifest for manifests).
Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainOptions& options);
TrainOptions train_options_from_json(const Json& j);

Json to_json(const CohortManifest& manifest);
CohortManifest manifest_from_json(const Json& j);

std::string_view to_string(HeadMode mode) noexcept;
HeadMode head_mode_from_string(std::string_view text);

}  // namespace evoqf
