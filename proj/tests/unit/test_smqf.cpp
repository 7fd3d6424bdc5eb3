#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "evoqf/gradcheck.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/smqf.hpp"
#include "test_util.hpp"

using namespace evoqf;
using evoqf::test::code_of;
using evoqf::test::naive_matmul;
using evoqf::test::random_tensor;
using evoqf::test::transpose;

namespace {

FusionConfig config(std::vector<std::string> order, std::size_t primary, std::size_t k, std::size_t d) {
  return FusionConfig{std::move(order), primary, k, d};
}

ProjectionTheta random_theta(Rng& rng, const FusionConfig& cfg) {
  ProjectionTheta th = init_theta(cfg, 1);
  for (auto& [name, w] : th.weight) w = random_tensor(rng, {cfg.embed_dim, cfg.embed_dim});
  th.bias = random_tensor(rng, {cfg.embed_dim});
  return th;
}

// Independent oracle: explicit channel concat, then a naive multiply.
Tensor concat_then_matmul(const ProjectionTheta& th, std::span<const Tensor> supporting) {
  const std::size_t k = supporting[0].rows();
  const std::size_t d = th.embed_dim();
  Tensor cat({k, d * supporting.size()});
  for (std::size_t s = 0; s < supporting.size(); ++s) {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < d; ++c) cat(r, s * d + c) = supporting[s](r, c);
    }
  }
  Tensor out = naive_matmul(cat, transpose(th.concatenated_weight()));
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) out(r, c) += th.bias[c];
  }
  return out;
}

}  // namespace

TEST(QueryFusion, ConfigValidation) {
  EXPECT_EQ(code_of([] { config({}, 0, 2, 4).validate(); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { config({"a", "b"}, 2, 2, 4).validate(); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { config({"a", "a"}, 0, 2, 4).validate(); }), ErrorCode::BadConfig);
  EXPECT_EQ(config({"a", "b", "c"}, 1, 2, 4).supporting(), (std::vector<std::string>{"a", "c"}));
}

TEST(QueryFusion, IdentityThetaReturnsSupportingTensor) {
  Rng rng(1);
  ProjectionTheta th = init_theta(config({"p", "s"}, 0, 3, 4), 1);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  th.weight["s"] = eye;
  th.bias = Tensor({4}, 0.0);
  const std::array sup{random_tensor(rng, {3, 4})};
  EXPECT_TRUE(project_supporting(th, sup).bit_equal(sup[0]));
}

TEST(QueryFusion, ProjectionShape) {
  Rng rng(2);
  const ProjectionTheta th = init_theta(config({"a", "b", "c"}, 0, 2, 4), 3);
  const std::array sup{random_tensor(rng, {2, 4}), random_tensor(rng, {2, 4})};
  EXPECT_EQ(project_supporting(th, sup).shape(), (Shape{2, 4}));
  EXPECT_EQ(th.concatenated_weight().shape(), (Shape{4, 8}));
}

TEST(QueryFusion, ProjectionMatchesConcatOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 4;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("m" + std::to_string(i));
    const FusionConfig cfg = config(names, trial % n, 3, 5);
    const ProjectionTheta th = random_theta(rng, cfg);
    std::vector<Tensor> sup;
    for (std::size_t i = 0; i + 1 < n; ++i) sup.push_back(random_tensor(rng, {3, 5}));
    const Tensor got = project_supporting(th, sup);
    const Tensor want = concat_then_matmul(th, sup);
    EXPECT_LT(evoqf::test::max_abs_diff(got, want), 1e-12);
  }
}

TEST(QueryFusion, ProjectionErrors) {
  const ProjectionTheta th = init_theta(config({"a", "b", "c"}, 0, 2, 4), 3);
  const std::array one{Tensor({2, 4})};
  EXPECT_EQ(code_of([&] { project_supporting(th, one); }), ErrorCode::WrongModalityCount);
  const std::array wrong{Tensor({2, 4}), Tensor({2, 3})};
  EXPECT_EQ(code_of([&] { project_supporting(th, wrong); }), ErrorCode::ShapeMismatch);
}

TEST(QueryFusion, GateExamples) {
  EXPECT_EQ(self_gate(Tensor({2, 3}, 0.0)).bit_equal(Tensor({2, 3}, 0.0)), true);
  const long double e1 = 1.0L / (1.0L + std::exp(-1.0L));
  EXPECT_NEAR(self_gate(Tensor::vector({1.0}))[0], static_cast<double>(e1), 1e-15);
  EXPECT_NEAR(self_gate(Tensor::vector({1.0}))[0], 0.7310585786, 1e-10);
  const long double e20 = -20.0L / (1.0L + std::exp(20.0L));
  const double g20 = self_gate(Tensor::vector({-20.0}))[0];
  EXPECT_LT(std::abs(g20), 1e-7);
  EXPECT_NEAR(g20, static_cast<double>(e20), 1e-20);
  Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::infinity()});
  EXPECT_EQ(code_of([&] { self_gate(bad); }), ErrorCode::NonFiniteInput);
}

TEST(QueryFusion, GateBound) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = random_tensor(rng, {4, 6}, 1.0 + trial);
    const Tensor gx = self_gate(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(gx[i]), std::abs(x[i]));
      if (x[i] != 0.0) EXPECT_GE(gx[i] * x[i], 0.0);  // same sign or zero
    }
  }
}

TEST(QueryFusion, FuseKeepsPrimaryRows) {
  Rng rng(5);
  const Tensor xp = random_tensor(rng, {4, 3});
  Tensor xg = random_tensor(rng, {4, 3});
  const FusedQuery f = fuse_queries(xp, xg);
  EXPECT_EQ(f.token_count(), 8u);
  EXPECT_TRUE(f.primary_rows().bit_equal(xp));
  EXPECT_TRUE(f.gated_rows().bit_equal(xg));
  xg[0] = 1e9;
  EXPECT_TRUE(f.primary_rows().bit_equal(xp));
  EXPECT_EQ(code_of([&] { fuse_queries(xp, Tensor({3, 3})); }), ErrorCode::ShapeMismatch);
}

TEST(QueryFusion, SingleModalityIsPrimaryAlone) {
  Rng rng(6);
  const Tensor xp = random_tensor(rng, {4, 3});
  const FusedQuery f = fuse_queries(xp);
  EXPECT_EQ(f.token_count(), 4u);
  EXPECT_FALSE(f.has_gated);
  EXPECT_TRUE(f.tokens.bit_equal(xp));
  const FusionConfig cfg = config({"only"}, 0, 4, 3);
  const ProjectionTheta th = init_theta(cfg, 1);
  EXPECT_TRUE(smqf_fuse(th, cfg, {{"only", xp}}).tokens.bit_equal(xp));
}

TEST(QueryFusion, TokenBudgetIsConstant) {
  Rng rng(7);
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<std::string> names;
    std::map<std::string, Tensor> queries;
    for (std::size_t i = 0; i < n; ++i) {
      names.push_back("m" + std::to_string(i));
      queries[names.back()] = random_tensor(rng, {3, 4});
    }
    const FusionConfig cfg = config(names, n - 1, 3, 4);
    const FusedQuery f = smqf_fuse(random_theta(rng, cfg), cfg, queries);
    EXPECT_EQ(f.token_count(), 6u);
    EXPECT_TRUE(f.primary_rows().bit_equal(queries[names.back()]));
  }
}

TEST(QueryFusion, AddedGroupKeepsOutputs) {
  Rng rng(8);
  const FusionConfig cfg = config({"p", "a"}, 0, 2, 4);
  ProjectionTheta th = random_theta(rng, cfg);
  const Tensor a = random_tensor(rng, {2, 4});
  const std::array one{a};
  const Tensor before = project_supporting(th, one);
  th.add_group("b");
  EXPECT_EQ(th.groups.back(), "b");
  const std::array two{a, random_tensor(rng, {2, 4})};
  EXPECT_TRUE(project_supporting(th, two).bit_equal(before));
  EXPECT_EQ(code_of([&] { th.add_group("b"); }), ErrorCode::DuplicateModality);
}

TEST(QueryFusion, GraphFormMatchesPlainForm) {
  Rng rng(9);
  const FusionConfig cfg = config({"p", "a", "b"}, 0, 2, 4);
  ProjectionTheta th = random_theta(rng, cfg);
  const Tensor a = random_tensor(rng, {2, 4});
  const Tensor b = random_tensor(rng, {2, 4});
  Graph g;
  const Tensor got = self_gate(project_supporting(g, th, {{"a", g.input(a)}, {"b", g.input(b)}})).value();
  const std::array sup{a, b};
  EXPECT_LT(evoqf::test::max_abs_diff(got, self_gate(project_supporting(th, sup))), 1e-12);
}

TEST(QueryFusion, PipelineGradCheck) {
  Rng rng(10);
  const FusionConfig cfg = config({"p", "a", "b"}, 0, 2, 4);
  ProjectionTheta th = random_theta(rng, cfg);
  Tensor xp = random_tensor(rng, {2, 4});
  Tensor a = random_tensor(rng, {2, 4});
  Tensor b = random_tensor(rng, {2, 4});
  Tensor head = random_tensor(rng, {1, 4});
  std::vector<LabeledTensor> wrt{{"xp", &xp}, {"a", &a}, {"b", &b}, {"head", &head}, {"bias", &th.bias}};
  for (auto& [name, w] : th.weight) wrt.push_back({name, &w});
  const auto r = grad_check(
      [&](Graph& g) {
        Var gated = self_gate(project_supporting(g, th, {{"a", g.param(a)}, {"b", g.param(b)}}));
        const std::array rows{g.param(xp), gated};
        return linear(mean_pool(concat(rows, 0)), g.param(head));
      },
      wrt, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
}
