#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evoqf/cohort.hpp"
#include "evoqf/model.hpp"

namespace evoqf::test {

// Small cohort: native dims 6/5/4, two tokens per modality.
inline CohortManifest small_manifest(std::uint64_t seed, std::size_t size = 160) {
  CohortManifest m = default_manifest(seed);
  m.size = size;
  m.modalities = {{"text", 6, 2, 2, 1.0, 0.5}, {"image", 5, 2, 2, 1.0, 0.5}, {"rna", 4, 2, 2, 1.0, 0.5}};
  return m;
}

inline ModelConfig small_model_config(std::vector<std::string> modalities = {"text", "image", "rna"},
                                      FusionKind fusion = FusionKind::Smqf) {
  const std::map<std::string, std::size_t> dims{{"text", 6}, {"image", 5}, {"rna", 4}};
  ModelConfig c;
  c.qformer.depth = 1;
  c.qformer.embed_dim = 8;
  c.qformer.heads = 2;
  c.qformer.queries_per_modality = 2;
  c.lora.rank = 2;
  c.lora.alpha = 2.0;
  c.fusion = fusion;
  c.fusion_options.heads = 2;
  c.fusion_options.tensor_fusion_dim = 2;
  for (const auto& m : modalities) c.modalities.push_back({m, dims.at(m)});
  c.primary = "text";
  return c;
}

// Per-test scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() /
              ("evoqf-" + tag + "-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
               std::to_string(reinterpret_cast<std::uintptr_t>(this)))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace evoqf::test
