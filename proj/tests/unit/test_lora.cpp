#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <array>

#include "evoqf/lora.hpp"
#include "evoqf/ops.hpp"
#include "test_util.hpp"

using namespace evoqf;
using evoqf::test::code_of;
using evoqf::test::random_tensor;
using evoqf::test::tensor_hash;

namespace {

const Site kSite{0, Block::CrossAttn, Proj::Q};

AdapterRegistry registry_with(std::initializer_list<std::string> names) {
  AdapterRegistry r;
  for (const auto& n : names) r.register_modality(n);
  return r;
}

std::size_t numerical_rank(const Tensor& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) e(Eigen::Index(i), Eigen::Index(j)) = m(i, j);
  }
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues();
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) >= 1e-8 * sv(0)) ++rank;
  }
  return rank;
}

}  // namespace

TEST(Site, NameRoundTrips) {
  for (const Site& s : expand_sites(2, std::array{Proj::Q, Proj::K, Proj::V, Proj::O, Proj::FfnIn})) {
    EXPECT_EQ(Site::parse(s.name()), s);
  }
  EXPECT_EQ(code_of([] { Site::parse("l0.nowhere.q"); }), ErrorCode::BadConfig);
}

TEST(Site, AttentionKindsCoverBothBlocks) {
  const auto sites = expand_sites(2, std::array{Proj::Q, Proj::V});
  EXPECT_EQ(sites.size(), 8u);
  const auto ffn = expand_sites(1, std::array{Proj::FfnIn, Proj::FfnOut});
  EXPECT_EQ(ffn.size(), 2u);
}

TEST(Lora, HandExample) {
  LoraAdapter ad{"text", kSite, 1, 1.0, Tensor::matrix(1, 2, {0, 1}), Tensor::matrix(2, 1, {1, 0})};
  const Tensor w = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor eff = effective_projection(w, ad);
  EXPECT_TRUE(eff.bit_equal(Tensor::matrix(2, 2, {1, 1, 0, 1})));
  const Tensor q = Tensor::matrix(2, 1, {1, 1});
  const Tensor out = evoqf::test::naive_matmul(eff, q);
  EXPECT_EQ(out[0], 2.0);
  EXPECT_EQ(out[1], 1.0);
}

TEST(Lora, ZeroBReturnsBaseExactly) {
  Rng rng(1);
  AdapterRegistry reg = registry_with({"text"});
  const Tensor w = random_tensor(rng, {6, 6});
  const LoraAdapter& ad = reg.attach("text", kSite, 6, 6, 2, 2.0, 7);
  EXPECT_TRUE(effective_projection(w, ad).bit_equal(w));
  Graph g;
  Tensor wm = w;
  LoraAdapter copy = ad;
  EXPECT_TRUE(effective_projection(g, g.param(wm), copy).value().bit_equal(w));
  for (double v : ad.b.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(ad.a.requires_grad());
  EXPECT_TRUE(ad.b.requires_grad());
}

TEST(Lora, ShapeMismatch) {
  LoraAdapter ad{"text", kSite, 1, 1.0, Tensor({1, 3}), Tensor({3, 1})};
  EXPECT_EQ(code_of([&] { effective_projection(Tensor({2, 2}), ad); }), ErrorCode::ShapeMismatch);
}

TEST(Lora, AttachErrors) {
  AdapterRegistry reg = registry_with({"text"});
  EXPECT_EQ(code_of([&] { reg.attach("text", kSite, 4, 4, 4, 4.0, 1); }), ErrorCode::RankTooLarge);
  EXPECT_EQ(code_of([&] { reg.attach("text", kSite, 4, 4, 0, 4.0, 1); }), ErrorCode::RankTooLarge);
  reg.attach("text", kSite, 4, 4, 2, 2.0, 1);
  EXPECT_EQ(code_of([&] { reg.attach("text", kSite, 4, 4, 2, 2.0, 1); }), ErrorCode::DuplicateAdapter);
  EXPECT_EQ(code_of([&] { reg.attach("audio", kSite, 4, 4, 2, 2.0, 1); }), ErrorCode::UnknownModality);
}

TEST(Lora, SameSeedGivesIdenticalA) {
  AdapterRegistry r1 = registry_with({"text"});
  AdapterRegistry r2 = registry_with({"text"});
  const auto& a1 = r1.attach("text", kSite, 8, 8, 3, 3.0, 99);
  const auto& a2 = r2.attach("text", kSite, 8, 8, 3, 3.0, 99);
  EXPECT_TRUE(a1.a.bit_equal(a2.a));
  AdapterRegistry r3 = registry_with({"text"});
  EXPECT_FALSE(r3.attach("text", kSite, 8, 8, 3, 3.0, 100).a.bit_equal(a1.a));
}

TEST(Lora, InitScale) {
  AdapterRegistry reg = registry_with({"text"});
  const auto& ad = reg.attach("text", kSite, 64, 64, 32, 32.0, 5);
  double ss = 0.0;
  for (double v : ad.a.data()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(ad.a.size())), 0.02, 0.002);
}

TEST(Lora, DeltaRankIsBounded) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 6 + static_cast<std::size_t>(rng.uniform() * 10.0);
    const std::size_t r = 1 + static_cast<std::size_t>(rng.uniform() * 4.0);
    LoraAdapter ad{"m", kSite, r, 1.0 + rng.uniform(), random_tensor(rng, {r, d}), random_tensor(rng, {d, r})};
    const Tensor w = random_tensor(rng, {d, d});
    const Tensor eff = effective_projection(w, ad);
    Tensor diff({d, d});
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = eff[i] - w[i];
    EXPECT_LE(numerical_rank(diff), r);
    EXPECT_EQ(numerical_rank(diff), r);  // generic factors reach the bound
  }
}

TEST(Lora, RoutingIsolation) {
  Rng rng(3);
  AdapterRegistry reg = registry_with({"text", "image"});
  LoraAdapter& ad = reg.attach("text", kSite, 5, 5, 2, 2.0, 4);
  const Tensor w = random_tensor(rng, {5, 5});
  const Tensor q = random_tensor(rng, {3, 5});
  // B = 0: the adapted route still matches the plain one.
  EXPECT_TRUE(reg.route_forward("text", kSite, w, q).bit_equal(reg.route_forward("image", kSite, w, q)));
  ad.b = random_tensor(rng, {5, 2});
  const Tensor text = reg.route_forward("text", kSite, w, q);
  const Tensor image = reg.route_forward("image", kSite, w, q);
  EXPECT_FALSE(text.bit_equal(image));
  Graph g;
  Tensor wm = w;
  const Tensor plain = linear(g.input(q), g.input(wm)).value();
  EXPECT_TRUE(image.bit_equal(plain));
  EXPECT_EQ(code_of([&] { reg.route_forward("audio", kSite, w, q); }), ErrorCode::UnknownModality);
}

TEST(Lora, RoutedForwardsNeverMutateBase) {
  Rng rng(6);
  AdapterRegistry reg = registry_with({"text", "image"});
  LoraAdapter& ad = reg.attach("text", kSite, 4, 4, 2, 2.0, 4);
  ad.b = random_tensor(rng, {4, 2});
  const Tensor w = random_tensor(rng, {4, 4});
  const std::uint64_t before = tensor_hash(w);
  for (int i = 0; i < 1000; ++i) {
    reg.route_forward(i % 2 ? "text" : "image", kSite, w, random_tensor(rng, {2, 4}));
  }
  EXPECT_EQ(tensor_hash(w), before);
}

TEST(Lora, OnlyFlaggedAdapterReceivesGrads) {
  Rng rng(8);
  AdapterRegistry reg = registry_with({"text", "gene"});
  reg.attach("text", kSite, 4, 4, 2, 2.0, 1);
  LoraAdapter& gene = reg.attach("gene", kSite, 4, 4, 2, 2.0, 2);
  gene.b = random_tensor(rng, {4, 2});
  gene.b.set_requires_grad(true);
  Tensor w = random_tensor(rng, {4, 4});
  w.set_requires_grad(true);
  std::array<Tensor*, 1> base{&w};
  AdapterTrainability spec;
  spec.base = false;
  spec.adapters[{"text", kSite}] = false;
  spec.adapters[{"gene", kSite}] = true;
  reg.set_trainable(spec, base);
  EXPECT_FALSE(w.requires_grad());

  const Tensor q = random_tensor(rng, {3, 4});
  Graph g;
  Var a = linear(g.input(q), reg.routed_weight(g, "gene", kSite, w));
  Var b = linear(g.input(q), reg.routed_weight(g, "text", kSite, w));
  g.backward(sum(add(hadamard(a, a), b)));

  auto nonzero = [](const Tensor& t) {
    if (!t.has_grad()) return false;
    for (double v : t.grad()) {
      if (v != 0.0) return true;
    }
    return false;
  };
  EXPECT_TRUE(nonzero(gene.a));
  EXPECT_TRUE(nonzero(gene.b));
  EXPECT_FALSE(nonzero(w));
  EXPECT_FALSE(nonzero(reg.find("text", kSite)->a));
  EXPECT_FALSE(nonzero(reg.find("text", kSite)->b));

  AdapterTrainability bad;
  bad.adapters[{"image", kSite}] = true;
  EXPECT_EQ(code_of([&] { reg.set_trainable(bad, base); }), ErrorCode::UnknownAdapter);
}

TEST(Lora, ParameterEconomy) {
  const std::size_t d = 16;
  const std::size_t r = 4;
  AdapterRegistry reg = registry_with({"text"});
  const auto sites = expand_sites(2, std::array{Proj::Q, Proj::K, Proj::V});
  for (const Site& s : sites) reg.attach("text", s, d, d, r, 4.0, 1);
  EXPECT_EQ(reg.parameter_count("text"), sites.size() * 2 * d * r);
  EXPECT_EQ(reg.parameter_count("image"), 0u);
}
