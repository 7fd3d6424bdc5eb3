#include "evoqf/config_io.hpp"

#include "evoqf/error.hpp"
#include "evoqf/rng.hpp"

namespace evoqf {

namespace {

template <class T>
T field(const Json& j, const char* key, T fallback, ErrorCode code) {
  if (!j.is_object()) fail(code, "expected an object around '" + std::string(key) + "'");
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    fail(code, "field '" + std::string(key) + "': " + e.what());
  }
}

template <class T>
T required(const Json& j, const char* key, ErrorCode code) {
  if (!j.is_object() || !j.contains(key)) fail(code, "missing field '" + std::string(key) + "'");
  return field<T>(j, key, T{}, code);
}

constexpr ErrorCode kCfg = ErrorCode::ConfigInvalid;
constexpr ErrorCode kMan = ErrorCode::BadManifest;

}  // namespace

std::string_view to_string(HeadMode mode) noexcept { return mode == HeadMode::Routed ? "routed" : "shared"; }

HeadMode head_mode_from_string(std::string_view text) {
  if (text == "routed") return HeadMode::Routed;
  if (text == "shared") return HeadMode::Shared;
  fail(kCfg, "head_mode must be 'routed' or 'shared', got '" + std::string(text) + "'");
}

Json to_json(const ModelConfig& c) {
  Json kinds = Json::array();
  for (Proj p : c.lora.kinds) kinds.push_back(std::string(to_string(p)));
  Json mods = Json::array();
  for (const auto& m : c.modalities) mods.push_back({{"name", m.name}, {"native_dim", m.native_dim}});
  return {
      {"qformer",
       {{"depth", c.qformer.depth},
        {"embed_dim", c.qformer.embed_dim},
        {"heads", c.qformer.heads},
        {"queries_per_modality", c.qformer.queries_per_modality},
        {"ffn_multiplier", c.qformer.ffn_multiplier},
        {"max_tokens", c.qformer.max_tokens}}},
      {"lora", {{"enabled", c.lora.enabled}, {"kinds", kinds}, {"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
      {"fusion", std::string(to_string(c.fusion))},
      {"fusion_options", {{"heads", c.fusion_options.heads}, {"tensor_fusion_dim", c.fusion_options.tensor_fusion_dim}}},
      {"modalities", mods},
      {"primary", c.primary},
      {"head_mode", std::string(to_string(c.head_mode))},
  };
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  if (!j.is_object()) fail(kCfg, "model section must be an object");
  if (j.contains("qformer")) {
    const Json& q = j["qformer"];
    c.qformer.depth = field(q, "depth", c.qformer.depth, kCfg);
    c.qformer.embed_dim = field(q, "embed_dim", c.qformer.embed_dim, kCfg);
    c.qformer.heads = field(q, "heads", c.qformer.heads, kCfg);
    c.qformer.queries_per_modality = field(q, "queries_per_modality", c.qformer.queries_per_modality, kCfg);
    c.qformer.ffn_multiplier = field(q, "ffn_multiplier", c.qformer.ffn_multiplier, kCfg);
    c.qformer.max_tokens = field(q, "max_tokens", c.qformer.max_tokens, kCfg);
  }
  if (j.contains("lora")) {
    const Json& l = j["lora"];
    c.lora.enabled = field(l, "enabled", c.lora.enabled, kCfg);
    c.lora.rank = field(l, "rank", c.lora.rank, kCfg);
    c.lora.alpha = field(l, "alpha", c.lora.alpha, kCfg);
    if (l.contains("kinds")) {
      c.lora.kinds.clear();
      for (const auto& k : field<std::vector<std::string>>(l, "kinds", {}, kCfg)) {
        try {
          c.lora.kinds.push_back(proj_from_string(k));
        } catch (const Error& e) {
          fail(kCfg, e.what());
        }
      }
    }
  }
  try {
    c.fusion = fusion_kind_from_string(field<std::string>(j, "fusion", "smqf", kCfg));
  } catch (const Error& e) {
    if (e.code() == kCfg) throw;
    fail(kCfg, e.what());
  }
  if (j.contains("fusion_options")) {
    const Json& f = j["fusion_options"];
    c.fusion_options.heads = field(f, "heads", c.fusion_options.heads, kCfg);
    c.fusion_options.tensor_fusion_dim = field(f, "tensor_fusion_dim", c.fusion_options.tensor_fusion_dim, kCfg);
  }
  const Json mods = field<Json>(j, "modalities", Json::array(), kCfg);
  if (!mods.is_array()) fail(kCfg, "'modalities' must be an array");
  for (const auto& m : mods) {
    c.modalities.push_back({required<std::string>(m, "name", kCfg), required<std::size_t>(m, "native_dim", kCfg)});
  }
  c.primary = field<std::string>(j, "primary", c.modalities.empty() ? "" : c.modalities.front().name, kCfg);
  c.head_mode = head_mode_from_string(field<std::string>(j, "head_mode", "routed", kCfg));
  return c;
}

Json to_json(const TrainOptions& o) {
  return {{"epochs", o.epochs},   {"lr", o.adam.lr},   {"beta1", o.adam.beta1},
          {"beta2", o.adam.beta2}, {"eps", o.adam.eps}, {"restore_best", o.restore_best}};
}

TrainOptions train_options_from_json(const Json& j) {
  TrainOptions o;
  if (j.is_null()) return o;
  o.epochs = field(j, "epochs", o.epochs, kCfg);
  o.adam.lr = field(j, "lr", o.adam.lr, kCfg);
  o.adam.beta1 = field(j, "beta1", o.adam.beta1, kCfg);
  o.adam.beta2 = field(j, "beta2", o.adam.beta2, kCfg);
  o.adam.eps = field(j, "eps", o.adam.eps, kCfg);
  o.restore_best = field(j, "restore_best", o.restore_best, kCfg);
  return o;
}

Json to_json(const CohortManifest& m) {
  Json mods = Json::array();
  for (const auto& x : m.modalities) {
    mods.push_back({{"name", x.name},
                    {"native_dim", x.native_dim},
                    {"tokens", x.tokens},
                    {"latent_dim", x.latent_dim},
                    {"hazard_weight", x.hazard_weight},
                    {"noise", x.noise}});
  }
  Json j = {{"schema_version", m.schema_version},
            {"rng_algorithm", m.rng_algorithm},
            {"seed", m.seed},
            {"size", m.size},
            {"modalities", mods},
            {"censoring_rate", m.censoring_rate},
            {"risk_scale", m.risk_scale},
            {"baseline_hazard", m.baseline_hazard},
            {"train_fraction", m.train_fraction},
            {"val_fraction", m.val_fraction}};
  if (m.oracle) {
    j["oracle_cindex"] = {{"all", m.oracle->all}, {"single", m.oracle->single}, {"complementary", m.oracle->complementary}};
  }
  return j;
}

CohortManifest manifest_from_json(const Json& j) {
  CohortManifest m;
  if (!j.is_object()) fail(kMan, "manifest must be an object");
  m.schema_version = field(j, "schema_version", m.schema_version, kMan);
  m.rng_algorithm = field<std::string>(j, "rng_algorithm", std::string(kRngAlgorithm), kMan);
  m.seed = field(j, "seed", m.seed, kMan);
  m.size = field(j, "size", m.size, kMan);
  m.censoring_rate = field(j, "censoring_rate", m.censoring_rate, kMan);
  m.risk_scale = field(j, "risk_scale", m.risk_scale, kMan);
  m.baseline_hazard = field(j, "baseline_hazard", m.baseline_hazard, kMan);
  m.train_fraction = field(j, "train_fraction", m.train_fraction, kMan);
  m.val_fraction = field(j, "val_fraction", m.val_fraction, kMan);
  const Json mods = field<Json>(j, "modalities", Json::array(), kMan);
  if (!mods.is_array()) fail(kMan, "'modalities' must be an array");
  for (const auto& x : mods) {
    ModalityManifest mm;
    mm.name = required<std::string>(x, "name", kMan);
    mm.native_dim = required<std::size_t>(x, "native_dim", kMan);
    mm.tokens = field(x, "tokens", mm.tokens, kMan);
    mm.latent_dim = field(x, "latent_dim", mm.latent_dim, kMan);
    mm.hazard_weight = field(x, "hazard_weight", mm.hazard_weight, kMan);
    mm.noise = field(x, "noise", mm.noise, kMan);
    m.modalities.push_back(std::move(mm));
  }
  if (j.contains("oracle_cindex")) {
    const Json& o = j["oracle_cindex"];
    OracleSummary s;
    s.all = required<double>(o, "all", kMan);
    s.single = field<std::map<std::string, double>>(o, "single", {}, kMan);
    s.complementary = field(o, "complementary", false, kMan);
    m.oracle = s;
  }
  return m;
}

}  // namespace evoqf
