#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evoqf/config_io.hpp"
#include "evoqf/continual.hpp"

namespace evoqf::cli {

struct StageConfig {
  std::vector<std::string> modalities;  // cumulative
  TrainOptions train;
  std::optional<StageTrainable> trainable;  // unset = default freeze set
};

struct CompareConfig {
  std::vector<FusionKind> methods;
  bool single_modality = true;  // add one single-modality smqf row per modality
  std::vector<std::filesystem::path> cohorts;  // columns; empty = the run cohort
};

/// Parsed run configuration plus the canonical JSON it was read from.
struct RunConfig {
  Json raw;
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainOptions train;
  std::vector<StageConfig> stages;
  std::optional<CohortManifest> manifest;
  std::optional<std::filesystem::path> cohort;
  CompareConfig compare;
  std::filesystem::path out_dir = ".";
  std::string checkpoint_name = "checkpoint.json";

  // FNV-1a of the canonical dump of `raw` (after any --seed override).
  std::string hash() const;
  std::vector<std::string> model_modalities() const;
};

/// Throws ConfigInvalid on schema or consistency errors.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Replaces the seed everywhere it is used.
void override_seed(RunConfig& config, std::uint64_t seed);

}  // namespace evoqf::cli
