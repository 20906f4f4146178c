#pragma once

#include "spco/core.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace spco::io {

inline constexpr int kSchemaVersion = 1;

nlohmann::json model_to_json(const TrainedModel& model);
// Throws ParseError on schema problems and on validation failure.
TrainedModel model_from_json(const nlohmann::json& j);

// JSON text with every real printed to 17 significant digits.
std::string dump_exact(const nlohmann::json& j, int indent = 1);

void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace spco::io
