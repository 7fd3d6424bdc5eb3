#include "evoqf/model_check.hpp"

#include "evoqf/rng.hpp"
#include "evoqf/survival.hpp"

namespace evoqf {

ModelConfig tiny_model_config(FusionKind fusion) {
  ModelConfig c;
  c.qformer.depth = 1;
  c.qformer.embed_dim = 8;
  c.qformer.heads = 2;
  c.qformer.queries_per_modality = 2;
  c.qformer.ffn_multiplier = 2;
  c.lora.rank = 2;
  c.lora.alpha = 2.0;
  c.fusion = fusion;
  c.fusion_options.heads = 2;
  c.fusion_options.tensor_fusion_dim = 3;
  c.modalities = {{"text", 5}, {"image", 6}, {"rna", 4}};
  c.primary = "text";
  return c;
}

GradCheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, const ModelGradcheckOptions& options) {
  SurvivalModel model = build_model(config, seed);
  Rng rng = Rng::named(seed, "gradcheck");
  if (options.perturb) {
    model.visit([&](const std::string&, Tensor& t) {
      for (double& v : t.data()) v += rng.normal(0.0, 0.3);
    });
  }

  Batch batch;
  batch.patients = options.patients;
  for (const auto& spec : config.modalities) {
    FeatureBatch fb;
    std::size_t rows = 0;
    for (std::size_t p = 0; p < options.patients; ++p) {
      fb.lengths.push_back(1 + (p + spec.native_dim) % options.max_tokens);
      rows += fb.lengths.back();
    }
    fb.features = Tensor({rows, spec.native_dim});
    for (double& v : fb.features.data()) v = rng.normal();
    batch.modalities.emplace(spec.name, std::move(fb));
  }
  std::vector<SurvivalRecord> records;
  for (std::size_t p = 0; p < options.patients; ++p) {
    records.push_back({1.0 + static_cast<double>(p) + rng.uniform(), p % 3 != 2});
  }

  std::vector<LabeledTensor> wrt;
  model.visit([&](const std::string& name, Tensor& t) { wrt.push_back({name, &t}); });
  auto loss = [&](Graph& g) { return cox_partial_likelihood(forward_risk(g, model, batch), records); };
  return grad_check(loss, wrt, options.step, options.tolerance);
}

}  // namespace evoqf
