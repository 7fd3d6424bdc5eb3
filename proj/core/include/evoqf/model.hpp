#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "evoqf/fusion.hpp"
#include "evoqf/lora.hpp"
#include "evoqf/qformer.hpp"

namespace evoqf {

struct LoraConfig {
  bool enabled = true;
  std::vector<Proj> kinds{Proj::Q, Proj::K, Proj::V};
  std::size_t rank = 4;
  double alpha = 4.0;
};

// How stage heads are used after a modality is added.
//   routed: each stage owns a head; inputs use the head of the largest stage
//           modality set they cover, so old-modality inputs keep their head.
//   shared: one head for every input, retrained in later stages.
enum class HeadMode { Routed, Shared };

struct ModelConfig {
  QFormerConfig qformer;
  LoraConfig lora;
  FusionKind fusion = FusionKind::Smqf;
  FusionOptions fusion_options;
  std::vector<ModalitySpec> modalities;
  std::string primary;
  HeadMode head_mode = HeadMode::Routed;

  void validate() const;  // BadConfig
};

struct RiskHead {
  std::set<std::string> modalities;
  Tensor weight;  // 1 x representation_dim
  Tensor bias;    // 1
};

/// A patient batch: per-modality stacked feature sequences.
struct Batch {
  std::size_t patients = 0;
  std::map<std::string, FeatureBatch> modalities;
};

/// Q-Former encoder with per-modality LoRA routing, a fusion method and risk head(s).
struct SurvivalModel {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::string lineage;  // fingerprint of the stage-1 config and seed
  QFormerWeights qformer;
  AdapterRegistry adapters;
  FusionMethod fusion;
  std::vector<RiskHead> heads;

  // Stable-name traversal of every parameter.
  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;

  Tensor* find_param(const std::string& name);
  std::size_t parameter_count() const;

  // FNV-1a over (name, shape, bytes) of the selected parameters.
  std::string parameter_hash() const;
  std::string base_hash() const;  // shared q-former stack only

  std::vector<std::string> modality_names() const;
  std::size_t select_head(const std::set<std::string>& present) const;
};

SurvivalModel build_model(const ModelConfig& config, std::uint64_t seed);

/// Risk scores (patients x 1) for a batch.
Var forward_risk(Graph& g, SurvivalModel& model, const Batch& batch);

/// Inference without gradient tracking. Safe to call concurrently on a
/// model that no one is mutating.
std::vector<double> predict(const SurvivalModel& model, const Batch& batch);

std::string lineage_fingerprint(const ModelConfig& config, std::uint64_t seed);

}  // namespace evoqf
