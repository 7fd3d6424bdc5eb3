#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "evoqf/checkpoint.hpp"
#include "evoqf/config_io.hpp"
#include "evoqf/continual.hpp"
#include "evoqf/model_check.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/optim.hpp"
#include "evoqf/trainer.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace evoqf;
using evoqf::test::code_of;
using evoqf::test::small_manifest;
using evoqf::test::small_model_config;
using evoqf::test::TempDir;

namespace {

const Cohort& small_cohort() {
  static const Cohort c = generate_cohort(small_manifest(5));
  return c;
}

const std::vector<std::string> kAll{"text", "image", "rna"};

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = small_model_config();
  c.primary = "audio";
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = small_model_config();
  c.modalities.push_back({"text", 3});
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::DuplicateModality);
  c = small_model_config();
  c.lora.rank = 8;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::RankTooLarge);
  c = small_model_config();
  c.fusion = FusionKind::TensorFusion;
  c.modalities.push_back({"extra", 2});
  EXPECT_EQ(code_of([&] { build_model(c, 1); }), ErrorCode::UnsupportedArity);
}

TEST(Model, BuildIsDeterministic) {
  const ModelConfig c = small_model_config();
  EXPECT_EQ(build_model(c, 3).parameter_hash(), build_model(c, 3).parameter_hash());
  EXPECT_NE(build_model(c, 3).parameter_hash(), build_model(c, 4).parameter_hash());
  EXPECT_EQ(build_model(c, 3).lineage, lineage_fingerprint(c, 3));
}

TEST(Model, ParameterNamesAreUniqueAndFindable) {
  SurvivalModel m = build_model(small_model_config(), 3);
  std::set<std::string> names;
  std::size_t scalars = 0;
  m.visit([&](const std::string& name, Tensor& t) {
    EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_EQ(m.find_param(name), &t);
    scalars += t.size();
  });
  EXPECT_EQ(scalars, m.parameter_count());
  EXPECT_EQ(m.find_param("no.such.param"), nullptr);
  EXPECT_TRUE(names.contains("qformer.l0.cross.q"));
  EXPECT_TRUE(names.contains("fusion.theta.image"));
  EXPECT_TRUE(names.contains("head.0.w"));
}

TEST(Model, ZeroAdaptersMatchAdapterFreeModel) {
  ModelConfig with = small_model_config();
  ModelConfig without = with;
  without.lora.enabled = false;
  const SurvivalModel a = build_model(with, 8);
  const SurvivalModel b = build_model(without, 8);
  const LabeledBatch val = labeled_batch(small_cohort(), Split::Val, kAll);
  const auto pa = predict(a, val.batch);
  const auto pb = predict(b, val.batch);
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_EQ(0, std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)));
}

TEST(Model, EveryFusionKindPredicts) {
  const LabeledBatch val = labeled_batch(small_cohort(), Split::Val, kAll);
  for (FusionKind kind : all_fusion_kinds()) {
    SurvivalModel m = build_model(small_model_config(kAll, kind), 2);
    const auto p1 = predict(m, val.batch);
    const auto p2 = predict(m, val.batch);
    ASSERT_EQ(p1.size(), val.records.size());
    EXPECT_EQ(p1, p2);
    Graph g;
    const Tensor r = forward_risk(g, m, val.batch).value();
    for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(r[i], p1[i]);
  }
}

TEST(Model, ForwardErrors) {
  SurvivalModel m = build_model(small_model_config(), 2);
  Graph g;
  EXPECT_EQ(code_of([&] { forward_risk(g, m, Batch{}); }), ErrorCode::EmptyInput);
  const LabeledBatch val = labeled_batch(small_cohort(), Split::Val, kAll);
  Batch wrong = val.batch;
  wrong.patients += 1;
  EXPECT_EQ(code_of([&] { forward_risk(g, m, wrong); }), ErrorCode::ShapeMismatch);
}

// Whole model, every parameter, every fusion kind.
TEST(Model, EndToEndGradCheck) {
  for (FusionKind kind : all_fusion_kinds()) {
    const GradCheckReport r = model_gradcheck(tiny_model_config(kind), 11);
    EXPECT_TRUE(r.passed()) << to_string(kind) << " " << r.max_rel_error;
    EXPECT_GT(r.entries.size(), 300u);
  }
}

TEST(Adam, ZeroLearningRateTouchesNothing) {
  Tensor x = Tensor::vector({1.0, -2.0});
  x.set_requires_grad(true);
  x.zero_grad();
  x.mutable_grad()[0] = 3.0;
  Adam opt(AdamConfig{0.0});
  opt.step({&x});
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[1], -2.0);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  Tensor x = Tensor::vector({1.0, -2.0, 0.5});
  x.set_requires_grad(true);
  x.zero_grad();
  x.mutable_grad()[0] = 3.0;
  x.mutable_grad()[1] = -0.01;
  Tensor frozen = Tensor::vector({4.0});
  frozen.zero_grad();
  frozen.mutable_grad()[0] = 1.0;
  Adam opt(AdamConfig{0.1});
  opt.step({&x, &frozen});
  EXPECT_NEAR(x[0], 0.9, 1e-6);
  EXPECT_NEAR(x[1], -1.9, 1e-5);
  EXPECT_EQ(x[2], 0.5);
  EXPECT_EQ(frozen[0], 4.0);
  EXPECT_EQ(code_of([] { AdamConfig{-1.0}.validate(); }), ErrorCode::BadConfig);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor x = Tensor::vector({3.0, -4.0});
  x.set_requires_grad(true);
  Adam opt(AdamConfig{0.05});
  for (int i = 0; i < 2000; ++i) {
    Graph g;
    Var v = g.param(x);
    g.backward(sum(hadamard(v, v)));
    opt.step({&x});
  }
  EXPECT_LT(std::abs(x[0]), 1e-2);
  EXPECT_LT(std::abs(x[1]), 1e-2);
}

TEST(ConfigIo, ModelConfigRoundTrips) {
  ModelConfig c = small_model_config(kAll, FusionKind::Gated);
  c.head_mode = HeadMode::Shared;
  c.lora.kinds = {Proj::Q, Proj::FfnIn};
  const Json j = to_json(c);
  EXPECT_EQ(to_json(model_config_from_json(j)), j);
  Json bad = j;
  bad["fusion"] = "bilinear";
  EXPECT_EQ(code_of([&] { model_config_from_json(bad); }), ErrorCode::ConfigInvalid);
  bad = j;
  bad["qformer"]["embed_dim"] = "wide";
  EXPECT_EQ(code_of([&] { model_config_from_json(bad); }), ErrorCode::ConfigInvalid);
}

TEST(ConfigIo, ManifestAndTrainOptionsRoundTrip) {
  const CohortManifest m = small_manifest(9);
  EXPECT_EQ(to_json(manifest_from_json(to_json(m))), to_json(m));
  TrainOptions t;
  t.epochs = 7;
  t.adam.lr = 0.01;
  t.restore_best = false;
  EXPECT_EQ(to_json(train_options_from_json(to_json(t))), to_json(t));
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  SurvivalModel m = build_model(small_model_config({"text", "image"}), 4);
  add_modality(m, "rna", 4, 2, 4);
  Rng rng(1);
  m.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += rng.normal(0.0, 0.1);
  });
  save_checkpoint(dir / "m.json", m);
  const SurvivalModel back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.parameter_hash(), m.parameter_hash());
  EXPECT_EQ(back.lineage, m.lineage);
  EXPECT_EQ(back.heads.size(), m.heads.size());
  const LabeledBatch val = labeled_batch(small_cohort(), Split::Val, kAll);
  EXPECT_EQ(predict(back, val.batch), predict(m, val.batch));
  EXPECT_EQ(checkpoint_json(back).dump(), checkpoint_json(m).dump());
}

TEST(Checkpoint, RejectsDamage) {
  TempDir dir("ckpt-bad");
  const SurvivalModel m = build_model(small_model_config(), 4);
  Json j = checkpoint_json(m);
  j["format_version"] = kCheckpointFormatVersion + 1;
  EXPECT_EQ(code_of([&] { model_from_checkpoint(j); }), ErrorCode::VersionMismatch);
  j = checkpoint_json(m);
  j["arrays"].erase("head.0.b");
  EXPECT_EQ(code_of([&] { model_from_checkpoint(j); }), ErrorCode::CorruptFile);
  j = checkpoint_json(m);
  j["arrays"]["head.0.w"]["data"].erase(0);
  EXPECT_EQ(code_of([&] { model_from_checkpoint(j); }), ErrorCode::CorruptFile);
  j = checkpoint_json(m);
  j["arrays"]["bogus"] = j["arrays"]["head.0.b"];
  EXPECT_EQ(code_of([&] { model_from_checkpoint(j); }), ErrorCode::CorruptFile);

  save_checkpoint(dir / "m.json", m);
  std::string text;
  {
    std::ifstream in(dir / "m.json");
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "cut.json"); }), ErrorCode::CorruptFile);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "missing.json"); }), ErrorCode::IoError);
}
