#include "evoqf/continual.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "evoqf/error.hpp"
#include "evoqf/hash.hpp"

namespace evoqf {

namespace {

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

// "modality.<m>.x", "lora.<m>.<site>.A" -> "<m>"
std::string second_field(const std::string& name) {
  const auto a = name.find('.');
  const auto b = name.find('.', a + 1);
  return name.substr(a + 1, b - a - 1);
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

bool is_trainable(const std::string& name, const StageTrainable& t, std::size_t head) {
  if (starts_with(name, "qformer.")) return t.base;
  if (starts_with(name, "modality.")) return t.modalities.contains(second_field(name));
  if (starts_with(name, "lora.")) return t.adapters.contains(second_field(name));
  if (name == "fusion.theta.bias") return t.theta_bias;
  if (starts_with(name, "fusion.theta.")) return t.theta_groups.contains(name.substr(std::string("fusion.theta.").size()));
  if (starts_with(name, "fusion.")) return t.fusion;
  if (starts_with(name, "head.")) return t.head && std::stoul(second_field(name)) == head;
  fail(ErrorCode::BadConfig, "parameter '" + name + "' belongs to no trainability group");
}

std::string frozen_hash(const SurvivalModel& model) {
  Fnv1a64 h;
  model.visit([&](const std::string& n, const Tensor& t) {
    if (t.requires_grad()) return;
    h.update(n);
    h.update(t.data());
  });
  return h.hex();
}

}  // namespace

StagePlan default_first_stage(std::vector<std::string> modalities, const TrainOptions& train, std::uint64_t seed) {
  StagePlan p;
  p.stage = 1;
  p.modalities = std::move(modalities);
  p.trainable.base = true;
  p.trainable.modalities = as_set(p.modalities);
  p.trainable.adapters = p.trainable.modalities;
  p.trainable.theta_groups = p.trainable.modalities;
  p.trainable.theta_bias = true;
  p.trainable.fusion = true;
  p.trainable.head = true;
  p.train = train;
  p.seed = seed;
  return p;
}

StagePlan default_next_stage(const StagePlan& previous, std::vector<std::string> added, const TrainOptions& train,
                             std::uint64_t seed) {
  StagePlan p;
  p.stage = previous.stage + 1;
  p.modalities = previous.modalities;
  for (const auto& m : added) p.modalities.push_back(m);
  p.trainable.modalities = as_set(added);
  p.trainable.adapters = p.trainable.modalities;
  p.trainable.theta_groups = p.trainable.modalities;
  p.trainable.head = true;
  p.train = train;
  p.seed = seed;
  return p;
}

void validate_stage_plans(const std::vector<StagePlan>& plans) {
  if (plans.empty()) fail(ErrorCode::BadConfig, "no stage plans");
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    if (p.stage != i + 1) fail(ErrorCode::BadConfig, "stage plans must be numbered 1, 2, ... in order");
    if (p.modalities.empty()) fail(ErrorCode::BadConfig, "stage " + std::to_string(p.stage) + " has no modalities");
    const auto now = as_set(p.modalities);
    if (now.size() != p.modalities.size()) {
      fail(ErrorCode::BadConfig, "stage " + std::to_string(p.stage) + " lists a modality twice");
    }
    if (i > 0) {
      const auto before = as_set(plans[i - 1].modalities);
      if (!std::includes(now.begin(), now.end(), before.begin(), before.end()) || now.size() <= before.size()) {
        fail(ErrorCode::BadConfig, "stage " + std::to_string(p.stage) + " must strictly extend the previous modality set");
      }
      if (p.trainable.base) fail(ErrorCode::BadConfig, "the base q-former may only train in stage 1");
    }
  }
}

void add_modality(SurvivalModel& model, const std::string& name, std::size_t native_dim, std::size_t rank,
                  std::uint64_t seed) {
  if (model.qformer.has_modality(name) || model.adapters.knows(name)) {
    fail(ErrorCode::DuplicateModality, "modality '" + name + "' is already registered");
  }
  if (model.fusion.kind != FusionKind::Smqf) {
    fail(ErrorCode::BadConfig, "adding a modality requires smqf fusion, model uses " +
                                   std::string(to_string(model.fusion.kind)));
  }
  const ModalitySpec spec{name, native_dim};
  const std::size_t d = model.config.qformer.embed_dim;
  if (model.config.lora.enabled && (rank == 0 || rank >= d)) {
    fail(ErrorCode::RankTooLarge, "lora rank must satisfy 1 <= r < embed_dim");
  }

  add_qformer_modality(model.qformer, spec, seed);
  model.adapters.register_modality(name);
  if (model.config.lora.enabled) {
    for (const auto& site : expand_sites(model.config.qformer.depth, model.config.lora.kinds)) {
      const Tensor& w = model.qformer.site_weight(site);
      model.adapters.attach(name, site, w.rows(), w.cols(), rank, model.config.lora.alpha, seed);
    }
  }
  model.fusion.inputs.push_back({name, d});
  model.fusion.theta.add_group(name);
  model.config.modalities.push_back(spec);

  if (model.config.head_mode == HeadMode::Routed) {
    RiskHead head = model.heads.back();
    head.modalities.insert(name);
    model.heads.push_back(std::move(head));
  } else {
    model.heads.front().modalities.insert(name);
  }
}

std::size_t apply_trainability(SurvivalModel& model, const StagePlan& plan) {
  const std::size_t head = model.select_head(as_set(plan.modalities));
  std::size_t count = 0;
  model.visit([&](const std::string& n, Tensor& t) {
    const bool on = is_trainable(n, plan.trainable, head);
    t.set_requires_grad(on);
    t.clear_grad();
    if (on) count += t.size();
  });
  return count;
}

StageReport train_stage(SurvivalModel& model, const StagePlan& plan, const Cohort& cohort) {
  for (const auto& m : plan.modalities) {
    if (!model.qformer.has_modality(m)) fail(ErrorCode::UnknownModality, "model has no modality '" + m + "'");
    if (!cohort.manifest.has_modality(m)) {
      fail(ErrorCode::MissingModalityInCohort, "cohort does not provide modality '" + m + "'");
    }
  }
  StageReport report;
  report.stage = plan.stage;
  report.modalities = plan.modalities;
  report.trainable_scalars = apply_trainability(model, plan);
  report.base_hash_before = model.base_hash();
  report.frozen_hash_before = frozen_hash(model);

  const LabeledBatch train = labeled_batch(cohort, Split::Train, plan.modalities);
  const LabeledBatch val = labeled_batch(cohort, Split::Val, plan.modalities);
  report.training = train_model(model, train, &val, plan.train);
  report.val_cindex = evaluate_cindex(model, val);
  if (!cohort.split(Split::Test).empty()) {
    report.test_cindex = evaluate_cindex(model, labeled_batch(cohort, Split::Test, plan.modalities));
  }

  report.base_hash_after = model.base_hash();
  report.frozen_hash_after = frozen_hash(model);
  return report;
}

NonInterferenceReport non_interference_check(const SurvivalModel& before, const SurvivalModel& after,
                                             const LabeledBatch& probes) {
  if (before.lineage != after.lineage) {
    fail(ErrorCode::LineageMismatch, "models come from different stage-1 runs (" + before.lineage + " vs " +
                                         after.lineage + ")");
  }
  const auto a = predict(before, probes.batch);
  const auto b = predict(after, probes.batch);
  NonInterferenceReport r;
  r.probes = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) r.max_abs_diff = std::max(r.max_abs_diff, std::abs(a[i] - b[i]));
  r.bit_identical = std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  r.cindex_before = concordance_index(a, probes.records);
  r.cindex_after = concordance_index(b, probes.records);
  return r;
}

}  // namespace evoqf
