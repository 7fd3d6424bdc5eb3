#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "evoqf/model.hpp"
#include "evoqf/trainer.hpp"

namespace evoqf {

/// Which parameter groups a stage may update.
struct StageTrainable {
  bool base = false;                   // shared q-former stack
  std::set<std::string> modalities;    // query bank + input adapter
  std::set<std::string> adapters;      // LoRA adapter sets, by modality
  std::set<std::string> theta_groups;  // smqf column groups
  bool theta_bias = false;
  bool fusion = false;  // non-theta fusion parameters
  bool head = true;     // the head selected for this stage's modality set
};

struct StagePlan {
  std::size_t stage = 1;               // 1-based
  std::vector<std::string> modalities;  // cumulative modality set
  StageTrainable trainable;
  TrainOptions train;
  std::uint64_t seed = 0;
};

/// Stage 1: everything trainable.
StagePlan default_first_stage(std::vector<std::string> modalities, const TrainOptions& train, std::uint64_t seed);

/// Stage s > 1: only what belongs to the modalities new in this stage, plus
/// the head.
StagePlan default_next_stage(const StagePlan& previous, std::vector<std::string> added, const TrainOptions& train,
                             std::uint64_t seed);

/// Stage modality sets must strictly grow and the base may train only in
/// stage 1. Throws BadConfig.
void validate_stage_plans(const std::vector<StagePlan>& plans);

/// Registers a new modality: query bank + input adapter, LoRA adapters at the
/// configured sites (B = 0), a zero smqf column group and, for routed heads,
/// a copy of the latest head keyed by the enlarged modality set. No existing
/// parameter is modified.
void add_modality(SurvivalModel& model, const std::string& name, std::size_t native_dim, std::size_t rank,
                  std::uint64_t seed);

/// Sets requires_grad on every parameter according to `trainable`.
/// Returns the number of trainable scalars.
std::size_t apply_trainability(SurvivalModel& model, const StagePlan& plan);

struct StageReport {
  std::size_t stage = 0;
  std::vector<std::string> modalities;
  TrainResult training;
  double val_cindex = 0.0;  // after training, on this stage's modalities
  std::optional<double> test_cindex;
  std::size_t trainable_scalars = 0;
  std::string base_hash_before;
  std::string base_hash_after;
  std::string frozen_hash_before;  // every parameter the stage did not train
  std::string frozen_hash_after;
};

/// Throws MissingModalityInCohort, UnknownModality.
StageReport train_stage(SurvivalModel& model, const StagePlan& plan, const Cohort& cohort);

struct NonInterferenceReport {
  std::size_t probes = 0;
  double max_abs_diff = 0.0;
  bool bit_identical = false;
  double cindex_before = 0.0;
  double cindex_after = 0.0;
  double cindex_delta() const { return cindex_after - cindex_before; }
};

/// Compares predictions of two models of one lineage on the same probe batch.
/// Throws LineageMismatch.
NonInterferenceReport non_interference_check(const SurvivalModel& before, const SurvivalModel& after,
                                             const LabeledBatch& probes);

}  // namespace evoqf
