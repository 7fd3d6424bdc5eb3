#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "evoqf/config_io.hpp"
#include "evoqf/dataset_io.hpp"
#include "evoqf/entropy.hpp"
#include "evoqf/survival.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace evoqf;
using evoqf::test::code_of;
using evoqf::test::small_manifest;
using evoqf::test::TempDir;

namespace {

bool same_record(const PatientRecord& a, const PatientRecord& b) {
  if (a.patient_id != b.patient_id || a.split != b.split || a.event != b.event) return false;
  if (std::memcmp(&a.time, &b.time, sizeof(double)) != 0 || std::memcmp(&a.risk, &b.risk, sizeof(double)) != 0) {
    return false;
  }
  if (a.modalities.size() != b.modalities.size()) return false;
  for (const auto& [name, t] : a.modalities) {
    auto it = b.modalities.find(name);
    if (it == b.modalities.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

bool same_cohort(const Cohort& a, const Cohort& b) {
  if (a.patients.size() != b.patients.size()) return false;
  if (to_json(a.manifest) != to_json(b.manifest)) return false;
  for (std::size_t i = 0; i < a.patients.size(); ++i) {
    if (!same_record(a.patients[i], b.patients[i])) return false;
  }
  return true;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

Patch uniform_histogram_patch() {
  std::vector<std::uint8_t> px(kPatchSide * kPatchSide);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i % 256);
  return Patch::from_pixels(std::move(px));
}

}  // namespace

TEST(Cohort, DefaultDims) {
  CohortManifest m = default_manifest(1);
  m.size = 6;
  const Cohort c = generate_cohort(m);
  ASSERT_EQ(c.patients.size(), 6u);
  for (const auto& p : c.patients) {
    EXPECT_EQ(p.modalities.at("text").cols(), 768u);
    EXPECT_EQ(p.modalities.at("image").cols(), 2048u);
    EXPECT_EQ(p.modalities.at("rna").cols(), 256u);
    for (const auto& [name, t] : p.modalities) {
      EXPECT_EQ(t.rows(), m.modality(name).tokens);
      EXPECT_TRUE(t.all_finite());
    }
    EXPECT_GT(p.time, 0.0);
  }
  EXPECT_EQ(c.patients[0].patient_id, "P00000");
}

TEST(Cohort, SameSeedIsBitIdentical) {
  EXPECT_TRUE(same_cohort(generate_cohort(small_manifest(4)), generate_cohort(small_manifest(4))));
  EXPECT_FALSE(same_cohort(generate_cohort(small_manifest(4)), generate_cohort(small_manifest(5))));
}

TEST(Cohort, RecordsDoNotDependOnCohortSize) {
  const Cohort small = generate_cohort(small_manifest(4, 30));
  const Cohort large = generate_cohort(small_manifest(4, 90));
  for (std::size_t i = 0; i < small.patients.size(); ++i) {
    EXPECT_TRUE(same_record(small.patients[i], large.patients[i])) << i;
  }
}

TEST(Cohort, SplitsAndCensoring) {
  const Cohort c = generate_cohort(small_manifest(7, 2000));
  const double n = 2000.0;
  EXPECT_NEAR(c.split(Split::Train).size() / n, 0.6, 0.04);
  EXPECT_NEAR(c.split(Split::Val).size() / n, 0.2, 0.04);
  EXPECT_NEAR(c.split(Split::Test).size() / n, 0.2, 0.04);
  std::size_t censored = 0;
  for (const auto& p : c.patients) censored += p.event ? 0 : 1;
  EXPECT_NEAR(censored / n, 0.3, 0.04);
}

TEST(Cohort, OracleAboveThresholdAndComplementary) {
  const OracleSummary o = oracle_cindex(default_manifest(42));
  EXPECT_GT(o.all, 0.95);
  EXPECT_TRUE(o.complementary);
  ASSERT_EQ(o.single.size(), 3u);
  for (const auto& [name, c] : o.single) EXPECT_LT(c, o.all) << name;
  const Cohort c = generate_cohort(default_manifest(42));
  ASSERT_TRUE(c.manifest.oracle.has_value());
  EXPECT_EQ(c.manifest.oracle->all, o.all);
}

// Brute-force c of the stored true risks against the observed, censored times.
TEST(Cohort, StoredRiskDrivesSurvival) {
  const Cohort c = generate_cohort(small_manifest(8, 600));
  std::vector<double> eta;
  std::vector<SurvivalRecord> recs;
  for (const auto& p : c.patients) {
    eta.push_back(p.risk);
    recs.push_back(p.survival());
  }
  EXPECT_GT(concordance_bruteforce(eta, recs), 0.85);
}

TEST(Cohort, ManifestValidation) {
  CohortManifest m = small_manifest(1);
  m.size = 1;
  EXPECT_EQ(code_of([&] { generate_cohort(m); }), ErrorCode::BadManifest);
  m = small_manifest(1);
  m.censoring_rate = 1.0;
  EXPECT_EQ(code_of([&] { generate_cohort(m); }), ErrorCode::BadManifest);
  m = small_manifest(1);
  m.modalities[1].native_dim = 0;
  EXPECT_EQ(code_of([&] { generate_cohort(m); }), ErrorCode::BadManifest);
  m = small_manifest(1);
  m.modalities[1].name = "text";
  EXPECT_EQ(code_of([&] { generate_cohort(m); }), ErrorCode::BadManifest);
  EXPECT_EQ(code_of([&] { small_manifest(1).modality("audio"); }), ErrorCode::MissingModalityInCohort);
}

TEST(Entropy, Examples) {
  EXPECT_EQ(patch_entropy(Patch::constant(17)), 0.0);
  EXPECT_EQ(patch_entropy(uniform_histogram_patch()), 8.0);
  std::vector<std::uint8_t> px(kPatchSide * kPatchSide, 0);
  std::fill(px.begin() + static_cast<std::ptrdiff_t>(px.size() / 2), px.end(), 255);
  EXPECT_EQ(patch_entropy(Patch::from_pixels(px)), 1.0);
  EXPECT_EQ(code_of([] { Patch::from_pixels(std::vector<std::uint8_t>(100)); }), ErrorCode::ShapeMismatch);
}

TEST(Entropy, FilterKeepsHighEntropyInOrder) {
  const std::vector<Patch> patches{Patch::constant(0), uniform_histogram_patch(), Patch::constant(200),
                                   uniform_histogram_patch()};
  const FilterResult r = entropy_filter(patches);
  EXPECT_EQ(r.kept.size(), 2u);
  EXPECT_EQ(r.discarded, 2u);
  const FilterResult none = entropy_filter({});
  EXPECT_TRUE(none.kept.empty());
  EXPECT_EQ(none.discarded, 0u);
  EXPECT_EQ(code_of([&] { entropy_filter(patches, -1.0); }), ErrorCode::BadConfig);
}

TEST(Entropy, FilterIsThresholdMonotone) {
  Rng rng(1);
  std::vector<Patch> patches;
  for (int i = 0; i < 40; ++i) {
    std::vector<std::uint8_t> px(kPatchSide * kPatchSide);
    const double spread = 1.0 + i * 6.0;
    for (auto& v : px) v = static_cast<std::uint8_t>(std::min(255.0, std::floor(rng.uniform() * spread)));
    patches.push_back(Patch::from_pixels(std::move(px)));
  }
  std::size_t prev = patches.size() + 1;
  for (double t = 0.0; t <= 8.5; t += 0.25) {
    const FilterResult r = entropy_filter(patches, t);
    EXPECT_LE(r.kept.size(), prev);
    EXPECT_EQ(r.kept.size() + r.discarded, patches.size());
    for (const Patch& p : r.kept) EXPECT_GE(patch_entropy(p), t);
    prev = r.kept.size();
  }
}

TEST(Entropy, ExtractPatchesDropsPartialTiles) {
  const std::size_t w = 2 * kPatchSide + 10;
  const std::size_t h = kPatchSide + 100;
  std::vector<std::uint8_t> img(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) img[y * w + x] = static_cast<std::uint8_t>(x / kPatchSide);
  }
  const auto tiles = extract_patches(img, w, h);
  ASSERT_EQ(tiles.size(), 2u);
  EXPECT_EQ(tiles[0].pixels[0], 0);
  EXPECT_EQ(tiles[1].pixels[0], 1);
  EXPECT_EQ(patch_entropy(tiles[1]), 0.0);
}

TEST(CohortIo, RoundTripIsBitExact) {
  TempDir dir("cohort");
  const Cohort c = generate_cohort(small_manifest(3, 3));
  save_cohort(dir / "c.jsonl", c);
  EXPECT_TRUE(same_cohort(load_cohort(dir / "c.jsonl"), c));
  const Cohort big = generate_cohort(small_manifest(3, 200));
  save_cohort(dir / "big.jsonl", big);
  EXPECT_TRUE(same_cohort(load_cohort(dir / "big.jsonl"), big));
}

TEST(CohortIo, DamagedFiles) {
  TempDir dir("cohort-bad");
  save_cohort(dir / "c.jsonl", generate_cohort(small_manifest(3, 4)));
  const auto lines = read_lines(dir / "c.jsonl");
  ASSERT_EQ(lines.size(), 5u);

  auto lines_cut = lines;
  lines_cut.pop_back();
  write_lines(dir / "short.jsonl", lines_cut);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "short.jsonl"); }), ErrorCode::CorruptFile);

  std::string text;
  for (const auto& l : lines) text += l + "\n";
  std::ofstream(dir / "trunc.jsonl") << text.substr(0, text.size() - 40);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "trunc.jsonl"); }), ErrorCode::CorruptFile);

  Json header = Json::parse(lines[0]);
  header["modalities"][0]["native_dim"] = 7;
  auto dims = lines;
  dims[0] = header.dump();
  write_lines(dir / "dims.jsonl", dims);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "dims.jsonl"); }), ErrorCode::CorruptFile);

  Json rec = Json::parse(lines[2]);
  rec["time"] = nullptr;
  auto nonfinite = lines;
  nonfinite[2] = rec.dump();
  write_lines(dir / "nan.jsonl", nonfinite);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "nan.jsonl"); }), ErrorCode::CorruptFile);

  auto dup = lines;
  dup[2] = lines[1];
  write_lines(dir / "dup.jsonl", dup);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "dup.jsonl"); }), ErrorCode::CorruptFile);

  header = Json::parse(lines[0]);
  header["schema_version"] = kCohortSchemaVersion + 1;
  auto version = lines;
  version[0] = header.dump();
  write_lines(dir / "version.jsonl", version);
  EXPECT_EQ(code_of([&] { load_cohort(dir / "version.jsonl"); }), ErrorCode::VersionMismatch);

  EXPECT_EQ(code_of([&] { load_cohort(dir / "absent.jsonl"); }), ErrorCode::IoError);
}
