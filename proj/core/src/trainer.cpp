#include "evoqf/trainer.hpp"

#include <cmath>
#include <cstring>

#include "evoqf/error.hpp"
#include "evoqf/log.hpp"

namespace evoqf {

Batch make_batch(std::span<const PatientRecord* const> patients, std::span<const std::string> modalities) {
  if (patients.empty()) fail(ErrorCode::EmptyInput, "batch has no patients");
  Batch batch;
  batch.patients = patients.size();
  for (const auto& name : modalities) {
    std::size_t rows = 0;
    std::size_t width = 0;
    for (const PatientRecord* p : patients) {
      auto it = p->modalities.find(name);
      if (it == p->modalities.end()) {
        fail(ErrorCode::MissingModalityInCohort, "patient " + p->patient_id + " has no modality '" + name + "'");
      }
      if (width == 0) width = it->second.cols();
      if (it->second.cols() != width) {
        fail(ErrorCode::ShapeMismatch, "patient " + p->patient_id + " has width " + std::to_string(it->second.cols()) +
                                           " for '" + name + "', expected " + std::to_string(width));
      }
      rows += it->second.rows();
    }
    FeatureBatch fb;
    fb.features = Tensor({rows, width});
    auto out = fb.features.data();
    std::size_t offset = 0;
    for (const PatientRecord* p : patients) {
      const Tensor& x = p->modalities.at(name);
      std::memcpy(out.data() + offset, x.data().data(), x.size() * sizeof(double));
      offset += x.size();
      fb.lengths.push_back(x.rows());
    }
    batch.modalities.emplace(name, std::move(fb));
  }
  return batch;
}

std::vector<SurvivalRecord> survival_records(std::span<const PatientRecord* const> patients) {
  std::vector<SurvivalRecord> out;
  out.reserve(patients.size());
  for (const PatientRecord* p : patients) out.push_back(p->survival());
  return out;
}

LabeledBatch labeled_batch(const Cohort& cohort, Split split, std::span<const std::string> modalities) {
  const auto patients = cohort.split(split);
  if (patients.empty()) fail(ErrorCode::EmptyInput, "cohort has no " + std::string(to_string(split)) + " patients");
  return {make_batch(patients, modalities), survival_records(patients)};
}

double evaluate_cindex(const SurvivalModel& model, const LabeledBatch& data) {
  const auto risk = predict(model, data.batch);
  return concordance_index(risk, data.records);
}

TrainResult train_model(SurvivalModel& model, const LabeledBatch& train, const LabeledBatch* val,
                        const TrainOptions& options) {
  std::vector<Tensor*> params;
  model.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
  std::vector<Tensor*> trainable;
  for (Tensor* t : params) {
    if (t->requires_grad()) trainable.push_back(t);
  }

  Adam adam(options.adam);
  TrainResult result;
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (Tensor* t : trainable) best.emplace_back(t->data().begin(), t->data().end());
  };
  if (val) {
    result.best_val_cindex = evaluate_cindex(model, *val);
    snapshot();
  }

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    {
      Graph g;
      Var risk = forward_risk(g, model, train.batch);
      Var loss = cox_partial_likelihood(risk, train.records);
      log.loss = loss.value().item();
      if (!std::isfinite(log.loss)) {
        fail(ErrorCode::NumericalFailure, "non-finite training loss at epoch " + std::to_string(epoch));
      }
      g.backward(loss);
    }
    adam.step(trainable);
    if (val) {
      log.val_cindex = evaluate_cindex(model, *val);
      if (*log.val_cindex > *result.best_val_cindex) {
        result.best_val_cindex = log.val_cindex;
        result.best_epoch = epoch;
        snapshot();
      }
    }
    log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(log.loss) +
             (log.val_cindex ? " val_c " + std::to_string(*log.val_cindex) : ""));
    result.epochs.push_back(log);
  }

  if (val && options.restore_best) {
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      std::memcpy(trainable[i]->data().data(), best[i].data(), best[i].size() * sizeof(double));
    }
  }
  for (Tensor* t : params) t->clear_grad();
  return result;
}

}  // namespace evoqf
