#include "evoqf/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "evoqf/error.hpp"

namespace evoqf {

namespace {

[[noreturn]] void corrupt(const std::string& what) { fail(ErrorCode::CorruptFile, "checkpoint: " + what); }

}  // namespace

Json checkpoint_json(const SurvivalModel& model) {
  Json arrays = Json::object();
  model.visit([&](const std::string& name, const Tensor& t) {
    arrays[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  });
  Json heads = Json::array();
  for (const auto& h : model.heads) heads.push_back({{"modalities", h.modalities}});
  Json adapters = Json::array();
  for (const auto& [key, a] : model.adapters.adapters()) {
    adapters.push_back({{"modality", key.modality}, {"site", key.site.name()}, {"rank", a.rank}, {"alpha", a.alpha}});
  }
  return {{"format", "evoqf.checkpoint"},
          {"format_version", kCheckpointFormatVersion},
          {"config", to_json(model.config)},
          {"seed", model.seed},
          {"lineage", model.lineage},
          {"heads", heads},
          {"adapters", adapters},
          {"arrays", arrays}};
}

SurvivalModel model_from_checkpoint(const Json& j) {
  if (!j.is_object() || j.value("format", "") != "evoqf.checkpoint") corrupt("not an evoqf checkpoint");
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) corrupt("missing format_version");
  if (j["format_version"].get<int>() != kCheckpointFormatVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint format " + j["format_version"].dump() + ", expected " +
                                         std::to_string(kCheckpointFormatVersion));
  }
  for (const char* key : {"config", "seed", "lineage", "heads", "adapters", "arrays"}) {
    if (!j.contains(key)) corrupt(std::string("missing '") + key + "'");
  }

  try {
    SurvivalModel m = build_model(model_config_from_json(j["config"]), j["seed"].get<std::uint64_t>());
    m.lineage = j["lineage"].get<std::string>();

    m.adapters = AdapterRegistry{};
    for (const auto& spec : m.config.modalities) m.adapters.register_modality(spec.name);
    for (const auto& a : j["adapters"]) {
      const Site site = Site::parse(a.at("site").get<std::string>());
      const Tensor& w = m.qformer.site_weight(site);
      m.adapters.attach(a.at("modality").get<std::string>(), site, w.rows(), w.cols(), a.at("rank").get<std::size_t>(),
                        a.at("alpha").get<double>(), m.seed);
    }

    const RiskHead proto = m.heads.front();
    m.heads.clear();
    for (const auto& h : j["heads"]) {
      RiskHead head = proto;
      head.modalities = h.at("modalities").get<std::set<std::string>>();
      m.heads.push_back(std::move(head));
    }
    if (m.heads.empty()) corrupt("no risk heads");

    const Json& arrays = j["arrays"];
    std::size_t seen = 0;
    m.visit([&](const std::string& name, Tensor& t) {
      if (!arrays.contains(name)) corrupt("missing array '" + name + "'");
      const Json& a = arrays[name];
      if (a.at("shape").get<Shape>() != t.shape()) corrupt("array '" + name + "' has the wrong shape");
      const auto data = a.at("data").get<std::vector<double>>();
      if (data.size() != t.size()) corrupt("array '" + name + "' has the wrong length");
      auto dst = t.data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) corrupt("array '" + name + "' holds a non-finite value");
        dst[i] = data[i];
      }
      ++seen;
    });
    if (seen != arrays.size()) corrupt("unexpected extra arrays");
    return m;
  } catch (const Json::exception& e) {
    corrupt(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile) throw;
    corrupt(e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const SurvivalModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << checkpoint_json(model).dump() << '\n';
  out.flush();
  if (!out) fail(ErrorCode::IoError, "failed while writing " + path.string());
}

SurvivalModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return model_from_checkpoint(j);
}

}  // namespace evoqf
