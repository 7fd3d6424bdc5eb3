#include "evoqf/model.hpp"

#include <algorithm>
#include <cmath>

#include "evoqf/error.hpp"
#include "evoqf/hash.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

RiskHead make_head(std::set<std::string> modalities, std::size_t in_dim, std::uint64_t seed, std::size_t index) {
  RiskHead h;
  h.modalities = std::move(modalities);
  h.weight = Tensor({1, in_dim});
  Rng rng = Rng::named(seed, "head." + std::to_string(index));
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : h.weight.data()) v = rng.normal(0.0, stddev);
  h.bias = Tensor({1}, 0.0);
  h.weight.set_requires_grad(true);
  h.bias.set_requires_grad(true);
  return h;
}

template <class Model, class Fn>
void visit_model(Model& m, Fn&& fn) {
  m.qformer.visit_shared(fn);
  for (const auto& name : m.qformer.modality_order) m.qformer.visit_modality(name, fn);
  for (auto& [key, adapter] : m.adapters.adapters()) {
    const std::string p = "lora." + key.modality + "." + key.site.name();
    fn(p + ".A", adapter.a);
    fn(p + ".B", adapter.b);
  }
  m.fusion.visit(fn);
  for (std::size_t i = 0; i < m.heads.size(); ++i) {
    fn("head." + std::to_string(i) + ".w", m.heads[i].weight);
    fn("head." + std::to_string(i) + ".b", m.heads[i].bias);
  }
}

void hash_param(Fnv1a64& h, const std::string& name, const Tensor& t) {
  h.update(name);
  for (auto dim : t.shape()) h.update(static_cast<std::uint64_t>(dim));
  h.update(t.data());
}

}  // namespace

void ModelConfig::validate() const {
  qformer.validate();
  if (modalities.empty()) fail(ErrorCode::BadConfig, "model needs at least one modality");
  std::set<std::string> names;
  for (const auto& m : modalities) {
    if (!names.insert(m.name).second) fail(ErrorCode::DuplicateModality, "modality '" + m.name + "' listed twice");
  }
  if (!names.contains(primary)) fail(ErrorCode::BadConfig, "primary modality '" + primary + "' is not listed");
  if (lora.enabled && (lora.rank == 0 || lora.rank >= qformer.embed_dim)) {
    fail(ErrorCode::RankTooLarge, "lora rank must satisfy 1 <= r < embed_dim");
  }
}

void SurvivalModel::visit(const ParamVisitor& fn) { visit_model(*this, fn); }
void SurvivalModel::visit(const ConstParamVisitor& fn) const { visit_model(*this, fn); }

Tensor* SurvivalModel::find_param(const std::string& name) {
  Tensor* found = nullptr;
  visit([&](const std::string& n, Tensor& t) {
    if (n == name) found = &t;
  });
  return found;
}

std::size_t SurvivalModel::parameter_count() const {
  std::size_t total = 0;
  visit([&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

std::string SurvivalModel::parameter_hash() const {
  Fnv1a64 h;
  visit([&](const std::string& n, const Tensor& t) { hash_param(h, n, t); });
  return h.hex();
}

std::string SurvivalModel::base_hash() const {
  Fnv1a64 h;
  qformer.visit_shared([&](const std::string& n, const Tensor& t) { hash_param(h, n, t); });
  return h.hex();
}

std::vector<std::string> SurvivalModel::modality_names() const { return qformer.modality_order; }

std::size_t SurvivalModel::select_head(const std::set<std::string>& present) const {
  if (heads.empty()) fail(ErrorCode::BadConfig, "model has no risk head");
  if (config.head_mode == HeadMode::Shared) return 0;
  std::size_t best = 0;
  std::size_t best_size = 0;
  bool found = false;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& set = heads[i].modalities;
    const bool covered = std::includes(present.begin(), present.end(), set.begin(), set.end());
    if (covered && (!found || set.size() >= best_size)) {
      best = i;
      best_size = set.size();
      found = true;
    }
  }
  return best;
}

std::string lineage_fingerprint(const ModelConfig& config, std::uint64_t seed) {
  Fnv1a64 h;
  h.update(seed);
  h.update(static_cast<std::uint64_t>(config.qformer.depth));
  h.update(static_cast<std::uint64_t>(config.qformer.embed_dim));
  h.update(static_cast<std::uint64_t>(config.qformer.heads));
  h.update(static_cast<std::uint64_t>(config.qformer.queries_per_modality));
  h.update(static_cast<std::uint64_t>(config.qformer.ffn_multiplier));
  h.update(to_string(config.fusion));
  h.update(config.primary);
  for (const auto& m : config.modalities) {
    h.update(m.name);
    h.update(static_cast<std::uint64_t>(m.native_dim));
  }
  return h.hex();
}

SurvivalModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SurvivalModel m;
  m.config = config;
  m.seed = seed;
  m.lineage = lineage_fingerprint(config, seed);
  m.qformer = init_qformer(config.qformer, config.modalities, seed);

  const std::size_t d = config.qformer.embed_dim;
  const auto sites = expand_sites(config.qformer.depth, config.lora.kinds);
  for (const auto& spec : config.modalities) {
    m.adapters.register_modality(spec.name);
    if (!config.lora.enabled) continue;
    for (const auto& site : sites) {
      const Tensor& w = m.qformer.site_weight(site);
      m.adapters.attach(spec.name, site, w.rows(), w.cols(), config.lora.rank, config.lora.alpha, seed);
    }
  }

  std::vector<ModalitySpec> fusion_inputs;
  for (const auto& spec : config.modalities) fusion_inputs.push_back({spec.name, d});
  m.fusion = init_fusion(config.fusion, fusion_inputs, config.primary, d, seed, config.fusion_options);

  std::set<std::string> all;
  for (const auto& spec : config.modalities) all.insert(spec.name);
  m.heads.push_back(make_head(all, m.fusion.representation_dim(), seed, 0));
  return m;
}

Var forward_risk(Graph& g, SurvivalModel& model, const Batch& batch) {
  if (batch.patients == 0) fail(ErrorCode::EmptyInput, "empty batch");
  std::map<std::string, FusionInput> embeddings;
  std::set<std::string> present;
  const std::size_t k = model.qformer.config.queries_per_modality;
  AdapterRegistry* adapters = model.config.lora.enabled ? &model.adapters : nullptr;
  for (const auto& [name, features] : batch.modalities) {
    if (features.patients() != batch.patients) {
      fail(ErrorCode::ShapeMismatch, "modality '" + name + "' covers " + std::to_string(features.patients()) +
                                         " of " + std::to_string(batch.patients) + " patients");
    }
    Var x = qformer_forward(g, model.qformer, name, features, adapters);
    embeddings.emplace(name, FusionInput{x, k});
    present.insert(name);
  }
  Var rep = baseline_fuse(g, model.fusion, embeddings, batch.patients);
  if (model.fusion.produces_score()) return rep;
  RiskHead& head = model.heads[model.select_head(present)];
  return linear(rep, g.param(head.weight), g.param(head.bias));
}

std::vector<double> predict(const SurvivalModel& model, const Batch& batch) {
  // forward_risk only binds parameters; without backward() nothing is written.
  Graph g;
  Var risk = forward_risk(g, const_cast<SurvivalModel&>(model), batch);
  const auto data = risk.value().data();
  return {data.begin(), data.end()};
}

}  // namespace evoqf
