#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>

#include "evoqf/error.hpp"
#include "evoqf/gradcheck.hpp"
#include "evoqf/ops.hpp"
#include "test_util.hpp"

using namespace evoqf;
using evoqf::test::code_of;
using evoqf::test::naive_matmul;
using evoqf::test::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_EQ(code_of([] { Tensor({2, 3}, std::vector<double>(5)); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { Tensor({0, 3}); }), ErrorCode::ShapeMismatch);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, GradHasSameShape) {
  Tensor t({3, 2}, 0.0);
  EXPECT_FALSE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(ForwardOp, SigmoidOfZero) {
  Graph g;
  const Tensor x = Tensor::vector({0.0});
  const std::array in{g.input(x)};
  EXPECT_EQ(forward_op(OpKind::Sigmoid, in).value()[0], 0.5);
}

TEST(ForwardOp, Hadamard) {
  Graph g;
  const Tensor a = Tensor::vector({1, 2, 3});
  const Tensor b = Tensor::vector({0, 1, 2});
  const std::array in{g.input(a), g.input(b)};
  const Tensor out = forward_op(OpKind::Hadamard, in).value();
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 2.0);
  EXPECT_EQ(out[2], 6.0);
}

TEST(ForwardOp, MatmulMatchesTripleLoop) {
  Rng rng(11);
  const Tensor a = random_tensor(rng, {2, 3});
  const Tensor b = random_tensor(rng, {3, 4});
  Graph g;
  const std::array in{g.input(a), g.input(b)};
  const Tensor out = forward_op(OpKind::Matmul, in).value();
  ASSERT_EQ(out.shape(), (Shape{2, 4}));
  const Tensor ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-14);
}

TEST(ForwardOp, ShapeErrors) {
  Graph g;
  const Tensor a({2, 3}, 1.0);
  const Tensor b({2, 3}, 1.0);
  const Tensor c({3, 2}, 1.0);
  EXPECT_EQ(code_of([&] { matmul(g.input(a), g.input(b)); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { hadamard(g.input(a), g.input(c)); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add(g.input(a), g.input(c)); }), ErrorCode::ShapeMismatch);
  const std::array parts{g.input(a), g.input(c)};
  EXPECT_EQ(code_of([&] { concat(parts, 0); }), ErrorCode::ShapeMismatch);
}

TEST(ForwardOp, UnknownKind) {
  Graph g;
  const Tensor a({2, 2}, 1.0);
  const std::array in{g.input(a)};
  EXPECT_EQ(code_of([&] { forward_op(OpKind::Gelu, in); }), ErrorCode::UnknownKind);
  EXPECT_EQ(code_of([] { op_kind_from_string("conv2d"); }), ErrorCode::UnknownKind);
  EXPECT_EQ(op_kind_from_string("mean_pool"), OpKind::MeanPool);
}

TEST(ForwardOp, LinearIsRowTimesTransposedWeight) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor w = random_tensor(rng, {2, 4});
  const Tensor b = random_tensor(rng, {2});
  Graph g;
  const Tensor out = linear(g.input(x), g.input(w), g.input(b)).value();
  const Tensor ref = naive_matmul(x, evoqf::test::transpose(w));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out(i, j), ref(i, j) + b[j], 1e-14);
  }
}

TEST(Backward, SigmoidGradAtZero) {
  Tensor x = Tensor::vector({0.0});
  x.set_requires_grad(true);
  Graph g;
  g.backward(sum(sigmoid(g.param(x))));
  EXPECT_EQ(x.grad()[0], 0.25);
}

TEST(Backward, ConstantLossGivesZeroGrads) {
  Tensor x({2, 2}, 3.0);
  x.set_requires_grad(true);
  Graph g;
  g.param(x);
  g.backward(g.constant(Tensor::scalar(7.0)));
  ASSERT_TRUE(x.has_grad());
  for (double v : x.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonParticipatingLeafIsZero) {
  Tensor x({2}, 1.0);
  Tensor y({2}, 1.0);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Graph g;
  Var vx = g.param(x);
  g.param(y);
  g.backward(sum(vx));
  for (double v : y.grad()) EXPECT_EQ(v, 0.0);
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, Errors) {
  Tensor x({2, 2}, 1.0);
  x.set_requires_grad(true);
  Graph g;
  Var v = g.param(x);
  EXPECT_EQ(code_of([&] { g.backward(v); }), ErrorCode::NotScalarLoss);
  Graph other;
  Var foreign = sum(other.param(x));
  EXPECT_EQ(code_of([&] { g.backward(foreign); }), ErrorCode::DetachedLoss);
}

TEST(Backward, MatmulSumMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const std::array wrt{LabeledTensor{"a", &a}, LabeledTensor{"b", &b}};
  const auto report = grad_check([&](Graph& g) { return sum(matmul(g.param(a), g.param(b))); }, wrt, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Backward, IsDeterministic) {
  Rng rng(9);
  Tensor x = random_tensor(rng, {4, 6});
  Tensor w = random_tensor(rng, {5, 6});
  Tensor gamma({5}, 1.0);
  Tensor beta({5}, 0.0);
  for (Tensor* t : {&x, &w, &gamma, &beta}) t->set_requires_grad(true);
  auto run = [&] {
    Graph g;
    Var h = layernorm(linear(g.param(x), g.param(w)), g.param(gamma), g.param(beta));
    g.backward(sum(hadamard(softmax(h), sigmoid(h))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto first = run();
  const auto second = run();
  ASSERT_EQ(first.size(), second.size());
  EXPECT_EQ(0, std::memcmp(first.data(), second.data(), first.size() * sizeof(double)));
}

TEST(GradCheck, IdentityHasZeroError) {
  // Dyadic point and step keep the central difference exact.
  const Tensor p = Tensor::vector({0.5, -1.25, 2.0});
  const auto r = grad_check([](Graph&, Var x) { return x; }, p, std::ldexp(1.0, -17), 1e-4);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, LayerNormRandomVector) {
  Rng rng(21);
  const Tensor p = random_tensor(rng, {1, 8});
  Tensor gamma = random_tensor(rng, {8});
  Tensor beta = random_tensor(rng, {8});
  const Tensor readout = random_tensor(rng, {1, 8});
  const auto r = grad_check(
      [&](Graph& g, Var x) { return hadamard(layernorm(x, g.input(gamma), g.input(beta)), g.input(readout)); },
      p, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
}

TEST(GradCheck, NonFiniteOutputThrows) {
  const Tensor p = Tensor::vector({1.0});
  EXPECT_EQ(code_of([&] {
              grad_check([](Graph&, Var x) { return scale(x, std::numeric_limits<double>::infinity()); }, p, 1e-5,
                         1e-4);
            }),
            ErrorCode::NonFiniteOutput);
}

TEST(Ops, ConcatThenSliceRoundTrips) {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {3, 2});
  const Tensor b = random_tensor(rng, {3, 5});
  Graph g;
  const std::array parts{g.input(a), g.input(b)};
  Var c = concat(parts, 1);
  EXPECT_TRUE(slice(c, 1, 0, 2).value().bit_equal(a));
  EXPECT_TRUE(slice(c, 1, 2, 7).value().bit_equal(b));
  const Tensor d = random_tensor(rng, {4, 2});
  const std::array rows{g.input(a), g.input(d)};
  Var r = concat(rows, 0);
  EXPECT_TRUE(slice(r, 0, 0, 3).value().bit_equal(a));
  EXPECT_TRUE(slice(r, 0, 3, 7).value().bit_equal(d));
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, {3, 7}, 30.0);
    Graph g;
    const Tensor s = softmax(g.input(x)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(s(r, c), 0.0);
        total += s(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

// Every differentiable op against central differences on random shapes.
TEST(GradCheck, EveryOpOnRandomShapes) {
  Rng rng(77);
  auto dim = [&] { return 1 + static_cast<std::size_t>(rng.uniform() * 4.0); };
  using Builder = std::function<Var(Graph&, Var, Var)>;
  struct Case {
    const char* name;
    bool square_b;  // b shaped like a
    Builder f;
  };
  const std::vector<Case> cases = {
      {"matmul", false, [](Graph&, Var a, Var b) { return matmul(a, b); }},
      {"add", true, [](Graph&, Var a, Var b) { return add(a, b); }},
      {"hadamard", true, [](Graph&, Var a, Var b) { return hadamard(a, b); }},
      {"sigmoid", true, [](Graph&, Var a, Var b) { return hadamard(sigmoid(a), b); }},
      {"softmax", true, [](Graph&, Var a, Var b) { return hadamard(softmax(a), b); }},
      {"gelu", true, [](Graph&, Var a, Var b) { return hadamard(gelu(a), b); }},
      {"concat", true, [](Graph&, Var a, Var b) { const std::array p{a, b}; return concat(p, 1); }},
      {"mean_pool", true, [](Graph&, Var a, Var b) { return hadamard(mean_pool(a), mean_pool(b)); }},
      {"scale", true, [](Graph&, Var a, Var b) { return hadamard(scale(a, -1.7), b); }},
      {"row_outer", true, [](Graph&, Var a, Var b) { return row_outer(a, b); }},
  };
  std::size_t checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    for (const auto& c : cases) {
      const std::size_t n = dim();
      const std::size_t m = dim();
      Tensor a = random_tensor(rng, {n, m});
      Tensor b = c.square_b ? random_tensor(rng, {n, m}) : random_tensor(rng, {m, dim()});
      a.set_requires_grad(true);
      b.set_requires_grad(true);
      const std::array wrt{LabeledTensor{"a", &a}, LabeledTensor{"b", &b}};
      const auto r = grad_check(
          [&](Graph& g) {
            Var out = c.f(g, g.param(a), g.param(b));
            // A fixed random readout keeps the loss from being a plain sum.
            Rng mix(static_cast<std::uint64_t>(trial));
            return sum(hadamard(out, g.constant(random_tensor(mix, out.shape()))));
          },
          wrt, 1e-5, 1e-4);
      EXPECT_TRUE(r.passed()) << c.name << " trial " << trial << " err " << r.max_rel_error;
      ++checked;
    }
  }
  EXPECT_GE(checked, 100u);
}

TEST(GradCheck, LayerNormLinearAndAttention) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor(rng, {5, 4});
    Tensor w = random_tensor(rng, {4, 4});
    Tensor bias = random_tensor(rng, {4});
    Tensor gamma = random_tensor(rng, {4});
    Tensor beta = random_tensor(rng, {4});
    for (Tensor* t : {&x, &w, &bias, &gamma, &beta}) t->set_requires_grad(true);
    const std::vector<std::size_t> ql{2, 3};
    const std::vector<std::size_t> kl{3, 2};
    const std::array wrt{LabeledTensor{"x", &x}, LabeledTensor{"w", &w}, LabeledTensor{"bias", &bias},
                         LabeledTensor{"gamma", &gamma}, LabeledTensor{"beta", &beta}};
    const auto r = grad_check(
        [&](Graph& g) {
          Var h = layernorm(linear(g.param(x), g.param(w), g.param(bias)), g.param(gamma), g.param(beta));
          Var a = segment_attention(h, g.param(x), linear(g.param(x), g.param(w)), ql, kl, 2);
          const std::vector<std::size_t> seg{2, 3};
          Rng mix(static_cast<std::uint64_t>(trial));
          return sum(hadamard(add(segment_mean(a, seg), mean_pool(h)), g.constant(random_tensor(mix, {2, 4}))));
        },
        wrt, 1e-5, 1e-4);
    EXPECT_TRUE(r.passed()) << "trial " << trial << " err " << r.max_rel_error;
  }
}
