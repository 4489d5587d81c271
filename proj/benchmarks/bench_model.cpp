#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "irtnet/checkpoint.hpp"
#include "irtnet/downstream.hpp"
#include "irtnet/model.hpp"

using namespace irtnet;

namespace {

Vec random_embedding(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal;
  Vec v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

const IrtNetParams& default_params(std::size_t models) {
  static const IrtNetParams params = init_params(Hyperparams{}, models, 1);
  return params;
}

void BM_EncodeQuery(benchmark::State& state) {
  const IrtNetParams& params = default_params(112);
  std::mt19937_64 rng(2);
  const Vec v = random_embedding(rng, params.hp.embed_dim);
  for (auto _ : state) benchmark::DoNotOptimize(encode_query(params, v));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EncodeQuery)->Unit(benchmark::kMillisecond);

void BM_EncodeQueriesBatched(benchmark::State& state) {
  const IrtNetParams& params = default_params(112);
  std::mt19937_64 rng(3);
  std::vector<Vec> vectors;
  for (int i = 0; i < state.range(0); ++i) vectors.push_back(random_embedding(rng, params.hp.embed_dim));
  const std::vector<std::span<const double>> spans(vectors.begin(), vectors.end());
  for (auto _ : state) benchmark::DoNotOptimize(encode_queries(params, spans));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeQueriesBatched)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PredictAllModels(benchmark::State& state) {
  const IrtNetParams& params = default_params(112);
  std::mt19937_64 rng(4);
  const Vec v = random_embedding(rng, params.hp.embed_dim);
  for (auto _ : state) benchmark::DoNotOptimize(predict_all_models(params, v));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PredictAllModels)->Unit(benchmark::kMillisecond);

void BM_Route(benchmark::State& state) {
  const IrtNetParams& params = default_params(112);
  std::mt19937_64 rng(5);
  const Vec v = random_embedding(rng, params.hp.embed_dim);
  std::vector<ModelId> candidates;
  for (std::uint32_t m = 0; m < params.num_models(); ++m) candidates.push_back(ModelId{m});
  for (auto _ : state) benchmark::DoNotOptimize(route(params, v, candidates));
}
BENCHMARK(BM_Route)->Unit(benchmark::kMillisecond);

void BM_EncodeCheckpoint(benchmark::State& state) {
  const IrtNetParams& params = default_params(112);
  for (auto _ : state) benchmark::DoNotOptimize(encode_checkpoint(params));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(parameter_count(params.tensors)) * 4);
}
BENCHMARK(BM_EncodeCheckpoint)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
