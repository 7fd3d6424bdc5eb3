#include "evoqf/dataset_io.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "evoqf/config_io.hpp"
#include "evoqf/error.hpp"

namespace evoqf {

namespace {

Json matrix_json(const Tensor& t) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.data().subspan(r * t.cols(), t.cols());
    rows.push_back(Json(std::vector<double>(row.begin(), row.end())));
  }
  return rows;
}

[[noreturn]] void corrupt(std::size_t line, const std::string& what) {
  fail(ErrorCode::CorruptFile, "line " + std::to_string(line) + ": " + what);
}

double finite_number(const Json& j, std::size_t line, const char* what) {
  if (!j.is_number()) corrupt(line, std::string(what) + " is not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) corrupt(line, std::string(what) + " is not finite");
  return v;
}

Tensor matrix_from_json(const Json& j, std::size_t width, std::size_t line, const std::string& name) {
  if (!j.is_array() || j.empty()) corrupt(line, "modality '" + name + "' must be a non-empty array of rows");
  Tensor t({j.size(), width});
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Json& row = j[r];
    if (!row.is_array() || row.size() != width) {
      corrupt(line, "modality '" + name + "' row " + std::to_string(r) + " does not have " + std::to_string(width) +
                        " values");
    }
    for (std::size_t c = 0; c < width; ++c) t(r, c) = finite_number(row[c], line, "feature value");
  }
  return t;
}

}  // namespace

void save_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  Json header = to_json(cohort.manifest);
  header["schema_version"] = kCohortSchemaVersion;
  out << header.dump() << '\n';
  for (const auto& p : cohort.patients) {
    Json mods = Json::object();
    for (const auto& [name, x] : p.modalities) mods[name] = matrix_json(x);
    const Json rec = {{"patient_id", p.patient_id}, {"split", std::string(to_string(p.split))},
                      {"time", p.time},             {"event", p.event},
                      {"risk", p.risk},             {"modalities", std::move(mods)}};
    out << rec.dump() << '\n';
  }
  out.flush();
  if (!out) fail(ErrorCode::IoError, "failed while writing " + path.string());
}

Cohort load_cohort(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::string text;
  if (!std::getline(in, text)) fail(ErrorCode::CorruptFile, path.string() + " is empty");

  Cohort cohort;
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    corrupt(1, std::string("bad manifest header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("schema_version") || !header["schema_version"].is_number_integer()) {
    corrupt(1, "manifest header lacks an integer schema_version");
  }
  if (header["schema_version"].get<int>() != kCohortSchemaVersion) {
    fail(ErrorCode::VersionMismatch, "cohort schema version " + header["schema_version"].dump() + ", expected " +
                                         std::to_string(kCohortSchemaVersion));
  }
  try {
    cohort.manifest = manifest_from_json(header);
    cohort.manifest.validate();
  } catch (const Error& e) {
    corrupt(1, e.what());
  }

  std::set<std::string> ids;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      corrupt(line, std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) corrupt(line, "record is not an object");
    PatientRecord p;
    for (const char* key : {"patient_id", "split", "time", "event", "modalities"}) {
      if (!j.contains(key)) corrupt(line, std::string("missing field '") + key + "'");
    }
    if (!j["patient_id"].is_string() || !j["split"].is_string() || !j["event"].is_boolean() ||
        !j["modalities"].is_object()) {
      corrupt(line, "record field has the wrong type");
    }
    p.patient_id = j["patient_id"].get<std::string>();
    if (!ids.insert(p.patient_id).second) corrupt(line, "duplicate patient_id " + p.patient_id);
    try {
      p.split = split_from_string(j["split"].get<std::string>());
    } catch (const Error& e) {
      corrupt(line, e.what());
    }
    p.time = finite_number(j["time"], line, "time");
    if (!(p.time > 0.0)) corrupt(line, "time must be > 0");
    p.event = j["event"].get<bool>();
    p.risk = j.contains("risk") ? finite_number(j["risk"], line, "risk") : 0.0;
    for (const auto& [name, value] : j["modalities"].items()) {
      if (!cohort.manifest.has_modality(name)) corrupt(line, "modality '" + name + "' is not in the manifest");
      const std::size_t width = cohort.manifest.modality(name).native_dim;
      p.modalities.emplace(name, matrix_from_json(value, width, line, name));
    }
    cohort.patients.push_back(std::move(p));
  }
  if (cohort.patients.size() != cohort.manifest.size) {
    fail(ErrorCode::CorruptFile, "manifest announces " + std::to_string(cohort.manifest.size) + " patients, file has " +
                                     std::to_string(cohort.patients.size()));
  }
  return cohort;
}

}  // namespace evoqf
