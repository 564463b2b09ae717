#pragma once

// Model checkpoints: `<path>` holds every parameter as raw little-endian
// 64-bit reals in registration order; `<path>.json` records the model
// configuration, both vocabularies and each parameter's name, offset and
// shape.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "logos/model.hpp"

namespace logos {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

void save_checkpoint(const LogosModel& model, const std::filesystem::path& path);
LogosModel load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace logos
