#include <benchmark/benchmark.h>

#include <map>
#include <vector>

#include "evoqf/entropy.hpp"
#include "evoqf/model.hpp"
#include "evoqf/model_check.hpp"
#include "evoqf/ops.hpp"
#include "evoqf/qformer.hpp"
#include "evoqf/rng.hpp"
#include "evoqf/smqf.hpp"
#include "evoqf/survival.hpp"

namespace {

using namespace evoqf;

Tensor noise(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = Rng::named(1, "bench.matmul");
  Tensor a = noise(rng, {n, n});
  Tensor b = noise(rng, {n, n});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Graph g;
    g.backward(sum(matmul(g.param(a), g.param(b))));
    benchmark::DoNotOptimize(a.grad().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 256)->Complexity();

void BM_QFormerForward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  QFormerConfig cfg;
  cfg.embed_dim = 32;
  cfg.queries_per_modality = 8;
  const std::vector<ModalitySpec> mods{{"image", 256}};
  QFormerWeights w = init_qformer(cfg, mods, 3);
  Rng rng = Rng::named(3, "bench.qformer");
  const Tensor features = noise(rng, {tokens, 256});
  for (auto _ : state) benchmark::DoNotOptimize(qformer_forward(w, features, "image", nullptr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QFormerForward)->Arg(8)->Arg(64)->Arg(512);

void BM_SmqfFuse(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  FusionConfig cfg;
  cfg.queries_per_modality = 8;
  cfg.embed_dim = 64;
  Rng rng = Rng::named(5, "bench.smqf");
  std::map<std::string, Tensor> queries;
  for (std::size_t i = 0; i < n; ++i) {
    cfg.modality_order.push_back("m" + std::to_string(i));
    queries[cfg.modality_order.back()] = noise(rng, {8, 64});
  }
  const ProjectionTheta theta = init_theta(cfg, 5);
  for (auto _ : state) benchmark::DoNotOptimize(smqf_fuse(theta, cfg, queries));
}
BENCHMARK(BM_SmqfFuse)->DenseRange(2, 6, 2);

std::pair<std::vector<double>, std::vector<SurvivalRecord>> cohort_like(std::size_t n) {
  Rng rng = Rng::named(n, "bench.survival");
  std::vector<double> eta(n);
  std::vector<SurvivalRecord> recs(n);
  for (std::size_t i = 0; i < n; ++i) {
    eta[i] = rng.normal();
    recs[i] = {1.0 + rng.uniform() * 3000.0, rng.bernoulli(0.6)};
  }
  return {eta, recs};
}

void BM_ConcordanceFenwick(benchmark::State& state) {
  const auto [eta, recs] = cohort_like(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(concordance_index(eta, recs));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConcordanceFenwick)->RangeMultiplier(4)->Range(64, 16384)->Complexity(benchmark::oNLogN);

void BM_ConcordanceBruteForce(benchmark::State& state) {
  const auto [eta, recs] = cohort_like(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(concordance_bruteforce(eta, recs));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConcordanceBruteForce)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNSquared);

void BM_CoxLossBackward(benchmark::State& state) {
  const auto [eta, recs] = cohort_like(static_cast<std::size_t>(state.range(0)));
  Tensor t({eta.size()}, eta);
  t.set_requires_grad(true);
  for (auto _ : state) {
    Graph g;
    g.backward(cox_partial_likelihood(g.param(t), recs));
    benchmark::DoNotOptimize(t.grad().data());
  }
}
BENCHMARK(BM_CoxLossBackward)->Arg(512)->Arg(4096);

void BM_PatchEntropy(benchmark::State& state) {
  Rng rng = Rng::named(8, "bench.entropy");
  std::vector<std::uint8_t> px(kPatchSide * kPatchSide);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng.uniform() * 256.0);
  const Patch patch = Patch::from_pixels(px);
  for (auto _ : state) benchmark::DoNotOptimize(patch_entropy(patch));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(px.size()));
}
BENCHMARK(BM_PatchEntropy);

void BM_ModelGradcheck(benchmark::State& state) {
  const ModelConfig cfg = tiny_model_config(FusionKind::Smqf);
  for (auto _ : state) benchmark::DoNotOptimize(model_gradcheck(cfg, 1).max_rel_error);
}
BENCHMARK(BM_ModelGradcheck)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
