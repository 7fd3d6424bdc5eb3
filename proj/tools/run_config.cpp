#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "evoqf/error.hpp"
#include "evoqf/hash.hpp"

namespace evoqf::cli {

namespace {

[[noreturn]] void invalid(const std::string& what) { fail(ErrorCode::ConfigInvalid, what); }

std::vector<std::string> string_list(const Json& j, const char* what) {
  if (!j.is_array()) invalid(std::string(what) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) invalid(std::string(what) + " must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::set<std::string> string_set(const Json& j, const char* key) {
  if (!j.contains(key)) return {};
  const auto v = string_list(j[key], key);
  return {v.begin(), v.end()};
}

bool flag(const Json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) invalid(std::string("'") + key + "' must be a boolean");
  return j[key].get<bool>();
}

StageTrainable trainable_from_json(const Json& j) {
  if (!j.is_object()) invalid("stage 'trainable' must be \"default\" or an object");
  StageTrainable t;
  t.base = flag(j, "base", false);
  t.modalities = string_set(j, "modalities");
  t.adapters = string_set(j, "adapters");
  t.theta_groups = string_set(j, "theta_groups");
  t.theta_bias = flag(j, "theta_bias", false);
  t.fusion = flag(j, "fusion", false);
  t.head = flag(j, "head", true);
  return t;
}

}  // namespace

std::string RunConfig::hash() const { return Fnv1a64().update(raw.dump()).hex(); }

std::vector<std::string> RunConfig::model_modalities() const {
  std::vector<std::string> out;
  for (const auto& m : model.modalities) out.push_back(m.name);
  return out;
}

RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) invalid("config must be a JSON object");
  RunConfig c;
  c.raw = j;
  if (!j.contains("seed") || !j["seed"].is_number_unsigned()) invalid("'seed' is mandatory and must be a non-negative integer");
  c.seed = j["seed"].get<std::uint64_t>();

  if (!j.contains("model")) invalid("missing 'model' section");
  c.model = model_config_from_json(j["model"]);
  try {
    c.model.validate();
  } catch (const Error& e) {
    invalid(std::string("model: ") + e.what());
  }
  std::set<std::string> known;
  for (const auto& m : c.model.modalities) known.insert(m.name);

  const Json training = j.value("training", Json::object());
  c.train = train_options_from_json(training);
  if (training.contains("stages")) {
    if (!training["stages"].is_array()) invalid("'training.stages' must be an array");
    for (const auto& s : training["stages"]) {
      StageConfig st;
      if (!s.is_object() || !s.contains("modalities")) invalid("every stage needs 'modalities'");
      st.modalities = string_list(s["modalities"], "stage modalities");
      Json merged = to_json(c.train);
      for (const auto& [k, v] : s.items()) {
        if (merged.contains(k)) merged[k] = v;
      }
      st.train = train_options_from_json(merged);
      if (s.contains("trainable") && !(s["trainable"].is_string() && s["trainable"] == "default")) {
        st.trainable = trainable_from_json(s["trainable"]);
      }
      for (const auto& m : st.modalities) {
        if (!known.contains(m)) invalid("stage modality '" + m + "' is not declared in model.modalities");
      }
      c.stages.push_back(std::move(st));
    }
    if (!c.stages.empty()) {
      const auto& first = c.stages.front().modalities;
      if (std::find(first.begin(), first.end(), c.model.primary) == first.end()) {
        invalid("stage 1 must include the primary modality '" + c.model.primary + "'");
      }
    }
  }

  const Json data = j.value("data", Json::object());
  if (data.contains("cohort")) {
    if (!data["cohort"].is_string()) invalid("'data.cohort' must be a path");
    c.cohort = data["cohort"].get<std::string>();
  }
  if (data.contains("manifest")) {
    try {
      c.manifest = manifest_from_json(data["manifest"]);
      c.manifest->seed = c.seed;
      c.manifest->validate();
    } catch (const Error& e) {
      invalid(std::string("data.manifest: ") + e.what());
    }
    for (const auto& m : c.model.modalities) {
      if (!c.manifest->has_modality(m.name)) invalid("modality '" + m.name + "' is missing from data.manifest");
      if (c.manifest->modality(m.name).native_dim != m.native_dim) {
        invalid("modality '" + m.name + "' has native_dim " + std::to_string(m.native_dim) + " in model but " +
                std::to_string(c.manifest->modality(m.name).native_dim) + " in data.manifest");
      }
    }
  }

  const Json compare = j.value("compare", Json::object());
  if (compare.contains("methods")) {
    for (const auto& name : string_list(compare["methods"], "compare.methods")) {
      try {
        c.compare.methods.push_back(fusion_kind_from_string(name));
      } catch (const Error& e) {
        invalid(e.what());
      }
    }
  } else {
    c.compare.methods = all_fusion_kinds();
  }
  c.compare.single_modality = flag(compare, "single_modality", true);
  if (compare.contains("cohorts")) {
    for (const auto& p : string_list(compare["cohorts"], "compare.cohorts")) c.compare.cohorts.emplace_back(p);
  }

  const Json output = j.value("output", Json::object());
  if (output.contains("dir")) c.out_dir = output["dir"].get<std::string>();
  if (output.contains("checkpoint")) c.checkpoint_name = output["checkpoint"].get<std::string>();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) invalid("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::exception& e) {
    invalid("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

void override_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.raw["seed"] = seed;
  if (config.manifest) config.manifest->seed = seed;
}

}  // namespace evoqf::cli
