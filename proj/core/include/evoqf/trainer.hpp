#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evoqf/cohort.hpp"
#include "evoqf/model.hpp"
#include "evoqf/optim.hpp"

namespace evoqf {

/// Stacks the named modalities of `patients` into one batch.
/// Throws MissingModalityInCohort when a patient lacks one of them.
Batch make_batch(std::span<const PatientRecord* const> patients, std::span<const std::string> modalities);
std::vector<SurvivalRecord> survival_records(std::span<const PatientRecord* const> patients);

/// A batch with its labels.
struct LabeledBatch {
  Batch batch;
  std::vector<SurvivalRecord> records;
};

LabeledBatch labeled_batch(const Cohort& cohort, Split split, std::span<const std::string> modalities);

struct TrainOptions {
  std::size_t epochs = 100;
  AdamConfig adam;
  // Keep the parameters of the epoch with the best validation c-index.
  bool restore_best = true;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // Cox loss before this epoch's update
  std::optional<double> val_cindex;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::optional<double> best_val_cindex;
  std::size_t best_epoch = 0;  // 0 = initial parameters
};

/// Full-batch training with Adam. Only tensors that require grad change.
/// Throws NumericalFailure on a non-finite loss.
TrainResult train_model(SurvivalModel& model, const LabeledBatch& train, const LabeledBatch* val,
                        const TrainOptions& options);

double evaluate_cindex(const SurvivalModel& model, const LabeledBatch& data);

}  // namespace evoqf
