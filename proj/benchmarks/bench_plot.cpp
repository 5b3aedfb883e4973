#include <benchmark/benchmark.h>

#include "plot/head.hpp"
#include "plot/ot.hpp"
#include "plot/trainer.hpp"

namespace {

using namespace plot;

Mat random_unit_rows(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (double& x : m.values()) x = rng.gaussian();
  return l2_normalize_rows(m);
}

// 49 x N cosine costs with the default solver settings.
void BM_Sinkhorn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const CostMatrix c = cost_matrix(random_unit_rows(rng, 49, 64), random_unit_rows(rng, n, 64));
  const auto u = uniform_measure(49);
  const auto v = uniform_measure(n);
  SinkhornConfig cfg;
  cfg.log_domain = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(solve_entropic(c, u, v, cfg).cost);
}
BENCHMARK(BM_Sinkhorn)->ArgsProduct({{1, 4, 8}, {0, 1}});

void BM_ExactOt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Mat c(m, m);
  for (double& x : c.values()) x = rng.uniform();
  const CostMatrix cost(c);
  for (auto _ : state) benchmark::DoNotOptimize(exact_ot_uniform(cost).cost);
}
BENCHMARK(BM_ExactOt)->DenseRange(4, 8, 2);

// Per-image scoring for every head on the default world.
void BM_ScoreImage(benchmark::State& state) {
  const MethodTag tag = kAllMethods[state.range(0)];
  static const Dataset data = gen_synthetic(SynthConfig{});
  TrainConfig cfg;
  cfg.method = Method::of(tag);
  const ModelState m = init_model(data.n_classes, data.feat_dim(), data.backbone_seed, cfg);
  const PromptFeatures g = encode_prompts(m.bank, m.encoder);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_image(data.images[i], g, m.method, m.head).probabilities);
    i = (i + 1) % data.images.size();
  }
  state.SetLabel(std::string(method_name(tag)));
}
BENCHMARK(BM_ScoreImage)->DenseRange(0, 6);

void BM_LossAndGrad(benchmark::State& state) {
  const MethodTag tag = kAllMethods[state.range(0)];
  static const Dataset data = gen_synthetic(SynthConfig{});
  TrainConfig cfg;
  cfg.method = Method::of(tag);
  const ModelState m = init_model(data.n_classes, data.feat_dim(), data.backbone_seed, cfg);
  std::vector<const Image*> batch;
  for (std::size_t b = 0; b < 32; ++b) batch.push_back(&data.images[b]);
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_and_grad(batch, m.bank, m.encoder, m.method, m.head).loss);
  state.SetLabel(std::string(method_name(tag)));
}
BENCHMARK(BM_LossAndGrad)->DenseRange(0, 6);

}  // namespace

BENCHMARK_MAIN();
