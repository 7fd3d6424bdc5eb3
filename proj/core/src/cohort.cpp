#include "evoqf/cohort.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "evoqf/error.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

struct Latent {
  Split split = Split::Train;
  std::vector<std::vector<double>> z;  // per modality
  std::vector<double> partial;         // <beta_m, z_m>
  double risk = 0.0;
  double event_time = 0.0;  // uncensored
  bool censored = false;
  double observed = 0.0;
};

struct Loadings {
  std::vector<Tensor> matrix;              // native x latent
  std::vector<std::vector<double>> beta;   // unit norm
  std::vector<double> weight;              // w_m / ||w||
};

Loadings make_loadings(const CohortManifest& m) {
  Loadings out;
  double norm = 0.0;
  for (const auto& mod : m.modalities) norm += mod.hazard_weight * mod.hazard_weight;
  norm = std::sqrt(norm);
  for (const auto& mod : m.modalities) {
    Rng lr = Rng::named(m.seed, "loading." + mod.name);
    Tensor l({mod.native_dim, mod.latent_dim});
    const double sd = 1.0 / std::sqrt(static_cast<double>(mod.latent_dim));
    for (double& v : l.data()) v = lr.normal(0.0, sd);
    out.matrix.push_back(std::move(l));

    Rng br = Rng::named(m.seed, "beta." + mod.name);
    std::vector<double> beta(mod.latent_dim);
    double bn = 0.0;
    for (double& v : beta) {
      v = br.normal();
      bn += v * v;
    }
    bn = std::sqrt(bn);
    for (double& v : beta) v /= bn;
    out.beta.push_back(std::move(beta));
    out.weight.push_back(norm > 0.0 ? mod.hazard_weight / norm : 0.0);
  }
  return out;
}

std::string patient_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%05zu", i);
  return buf;
}

Latent draw_latent(const CohortManifest& m, const Loadings& load, std::size_t i) {
  Rng rng = Rng::named(m.seed, "patient." + patient_id(i));
  Latent p;
  const double u = rng.uniform();
  p.split = u < m.train_fraction ? Split::Train : (u < m.train_fraction + m.val_fraction ? Split::Val : Split::Test);
  double risk = 0.0;
  for (std::size_t k = 0; k < m.modalities.size(); ++k) {
    std::vector<double> z(m.modalities[k].latent_dim);
    double dot = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] = rng.normal();
      dot += load.beta[k][j] * z[j];
    }
    p.z.push_back(std::move(z));
    p.partial.push_back(dot);
    risk += load.weight[k] * dot;
  }
  p.risk = m.risk_scale * risk;
  p.event_time = rng.exponential(m.baseline_hazard * std::exp(p.risk));
  p.censored = rng.bernoulli(m.censoring_rate);
  const double cut = rng.uniform();
  p.observed = p.censored ? p.event_time * cut : p.event_time;
  return p;
}

}  // namespace

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  fail(ErrorCode::BadManifest, "unknown split '" + std::string(text) + "'");
}

void CohortManifest::validate() const {
  if (size < 2) fail(ErrorCode::BadManifest, "cohort size must be >= 2");
  if (modalities.empty()) fail(ErrorCode::BadManifest, "cohort needs at least one modality");
  if (!(censoring_rate >= 0.0 && censoring_rate < 1.0)) fail(ErrorCode::BadManifest, "censoring rate must be in [0, 1)");
  if (!(risk_scale >= 0.0) || !std::isfinite(risk_scale)) fail(ErrorCode::BadManifest, "risk_scale must be >= 0");
  if (!(baseline_hazard > 0.0) || !std::isfinite(baseline_hazard)) {
    fail(ErrorCode::BadManifest, "baseline_hazard must be > 0");
  }
  if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction > 1.0) {
    fail(ErrorCode::BadManifest, "split fractions must be positive and sum to at most 1");
  }
  std::set<std::string> names;
  for (const auto& m : modalities) {
    if (m.name.empty()) fail(ErrorCode::BadManifest, "modality name is empty");
    if (!names.insert(m.name).second) fail(ErrorCode::BadManifest, "modality '" + m.name + "' listed twice");
    if (m.native_dim == 0 || m.tokens == 0 || m.latent_dim == 0) {
      fail(ErrorCode::BadManifest, "modality '" + m.name + "' needs dims >= 1");
    }
    if (!std::isfinite(m.hazard_weight) || !(m.noise >= 0.0)) {
      fail(ErrorCode::BadManifest, "modality '" + m.name + "' has a bad weight or noise level");
    }
  }
}

const ModalityManifest& CohortManifest::modality(const std::string& name) const {
  for (const auto& m : modalities) {
    if (m.name == name) return m;
  }
  fail(ErrorCode::MissingModalityInCohort, "cohort has no modality '" + name + "'");
}

bool CohortManifest::has_modality(const std::string& name) const {
  for (const auto& m : modalities) {
    if (m.name == name) return true;
  }
  return false;
}

CohortManifest default_manifest(std::uint64_t seed) {
  CohortManifest m;
  m.rng_algorithm = std::string(kRngAlgorithm);
  m.seed = seed;
  m.modalities = {{"text", 768}, {"image", 2048}, {"rna", 256}};
  return m;
}

std::vector<const PatientRecord*> Cohort::split(Split which) const {
  std::vector<const PatientRecord*> out;
  for (const auto& p : patients) {
    if (p.split == which) out.push_back(&p);
  }
  return out;
}

OracleSummary oracle_cindex(const CohortManifest& manifest) {
  manifest.validate();
  const Loadings load = make_loadings(manifest);
  std::vector<SurvivalRecord> records;
  std::vector<double> all;
  std::vector<std::vector<double>> single(manifest.modalities.size());
  for (std::size_t i = 0; i < manifest.size; ++i) {
    const Latent p = draw_latent(manifest, load, i);
    records.push_back({p.event_time, true});
    all.push_back(p.risk);
    for (std::size_t k = 0; k < single.size(); ++k) single[k].push_back(p.partial[k]);
  }
  OracleSummary out;
  out.all = concordance_index(all, records);
  out.complementary = true;
  for (std::size_t k = 0; k < single.size(); ++k) {
    const double c = concordance_index(single[k], records);
    out.single[manifest.modalities[k].name] = c;
    out.complementary = out.complementary && c < out.all;
  }
  return out;
}

Cohort generate_cohort(const CohortManifest& manifest) {
  manifest.validate();
  Cohort cohort;
  cohort.manifest = manifest;
  cohort.manifest.rng_algorithm = std::string(kRngAlgorithm);
  cohort.manifest.oracle = oracle_cindex(manifest);

  const Loadings load = make_loadings(manifest);
  cohort.patients.reserve(manifest.size);
  for (std::size_t i = 0; i < manifest.size; ++i) {
    const Latent lat = draw_latent(manifest, load, i);
    PatientRecord rec;
    rec.patient_id = patient_id(i);
    rec.split = lat.split;
    rec.risk = lat.risk;
    rec.time = lat.observed;
    rec.event = !lat.censored;
    for (std::size_t k = 0; k < manifest.modalities.size(); ++k) {
      const auto& mod = manifest.modalities[k];
      Rng rng = Rng::named(manifest.seed, "features." + rec.patient_id + "." + mod.name);
      const Tensor& l = load.matrix[k];
      const auto& z = lat.z[k];
      Tensor x({mod.tokens, mod.native_dim});
      for (std::size_t t = 0; t < mod.tokens; ++t) {
        for (std::size_t c = 0; c < mod.native_dim; ++c) {
          double v = 0.0;
          for (std::size_t j = 0; j < mod.latent_dim; ++j) v += l(c, j) * z[j];
          x(t, c) = v + mod.noise * rng.normal();
        }
      }
      rec.modalities.emplace(mod.name, std::move(x));
    }
    if (!(rec.time > 0.0) || !std::isfinite(rec.time)) {
      fail(ErrorCode::BadManifest, "risk_scale/baseline_hazard produce unusable survival times");
    }
    cohort.patients.push_back(std::move(rec));
  }
  return cohort;
}

}  // namespace evoqf
