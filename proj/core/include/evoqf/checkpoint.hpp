#pragma once

#include <filesystem>

#include "evoqf/config_io.hpp"
#include "evoqf/model.hpp"

namespace evoqf {

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON object: format version, config snapshot, seed, lineage, head and
/// adapter metadata, and every parameter as a named flat float64 array.
Json checkpoint_json(const SurvivalModel& model);
SurvivalModel model_from_checkpoint(const Json& j);  // CorruptFile, VersionMismatch

void save_checkpoint(const std::filesystem::path& path, const SurvivalModel& model);
SurvivalModel load_checkpoint(const std::filesystem::path& path);

}  // namespace evoqf
