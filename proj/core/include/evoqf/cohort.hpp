#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evoqf/survival.hpp"
#include "evoqf/tensor.hpp"

namespace evoqf {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split) noexcept;
Split split_from_string(std::string_view text);  // BadManifest

struct PatientRecord {
  std::string patient_id;
  std::map<std::string, Tensor> modalities;  // tokens x native_dim
  double time = 1.0;
  bool event = false;
  Split split = Split::Train;
  double risk = 0.0;  // ground-truth log hazard

  SurvivalRecord survival() const { return {time, event}; }
};

struct ModalityManifest {
  std::string name;
  std::size_t native_dim = 0;
  std::size_t tokens = 4;
  std::size_t latent_dim = 2;
  double hazard_weight = 1.0;
  double noise = 1.0;  // per-entry feature noise stddev
};

struct OracleSummary {
  double all = 0.0;
  std::map<std::string, double> single;
  bool complementary = false;
};

struct CohortManifest {
  int schema_version = 1;
  std::string rng_algorithm;
  std::uint64_t seed = 0;
  std::size_t size = 512;
  std::vector<ModalityManifest> modalities;
  double censoring_rate = 0.3;
  double risk_scale = 10.0;
  double baseline_hazard = 1e-3;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  // Filled in by generate_cohort; computed on uncensored times.
  std::optional<OracleSummary> oracle;

  void validate() const;  // BadManifest
  const ModalityManifest& modality(const std::string& name) const;
  bool has_modality(const std::string& name) const;
};

/// Modality names and dims used for the default cohort.
CohortManifest default_manifest(std::uint64_t seed);

struct Cohort {
  CohortManifest manifest;
  std::vector<PatientRecord> patients;

  std::vector<const PatientRecord*> split(Split which) const;
};

/// Synthetic cohort with a known hazard.
///   z_m ~ N(0, I) per patient and modality (latent_dim each)
///   risk = risk_scale * sum_m w_m * <beta_m, z_m> / ||w||, |beta_m| = 1
///   T ~ Exp(baseline_hazard * exp(risk)); censored w.p. censoring_rate at T * U
///   token rows of modality m: L_m z_m + noise * eps
/// Each patient draws from its own substream, so records do not depend on
/// generation order.
Cohort generate_cohort(const CohortManifest& manifest);

/// C-index of the true risk against uncensored event times, for all
/// modalities together and for each modality's own risk term.
OracleSummary oracle_cindex(const CohortManifest& manifest);

}  // namespace evoqf
