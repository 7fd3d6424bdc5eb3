#pragma once

#include <filesystem>

#include "evoqf/cohort.hpp"

namespace evoqf {

inline constexpr int kCohortSchemaVersion = 1;

/// Line-delimited JSON: line 1 is the manifest header, then one patient per
/// line with patient_id, split, time, event, risk and per-modality nested
/// arrays. Doubles are written in shortest round-trip form.
void save_cohort(const std::filesystem::path& path, const Cohort& cohort);

/// Throws IoError, VersionMismatch, or CorruptFile (malformed line, schema
/// violation, non-finite value, dims disagreeing with the manifest, wrong
/// record count).
Cohort load_cohort(const std::filesystem::path& path);

}  // namespace evoqf
