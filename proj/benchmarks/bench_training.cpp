#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "irtnet/model.hpp"
#include "irtnet/training.hpp"

using namespace irtnet;

namespace {

// One optimisation step on a query-grouped batch: `queries` distinct queries,
// each answered by every one of `models` models.
void BM_TrainingStep(benchmark::State& state) {
  const std::size_t queries = static_cast<std::size_t>(state.range(0));
  const std::size_t models = 112;
  IrtNetParams params = init_params(Hyperparams{}, models, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  std::vector<Vec> vectors(queries, Vec(params.hp.embed_dim));
  for (auto& v : vectors)
    for (double& x : v) x = normal(rng);
  std::vector<std::vector<int>> labels(queries, std::vector<int>(models));
  for (auto& row : labels)
    for (int& y : row) y = coin(rng);

  const std::vector<std::span<const double>> spans(vectors.begin(), vectors.end());
  TrainConfig config;
  AdamOptimizer adam(params.tensors, config);
  Tensors grads = zeros_like(params.tensors);
  const double scale = 1.0 / static_cast<double>(queries * models);

  for (auto _ : state) {
    auto traces = encode_queries(params, spans);
    for (auto& view : tensor_views(grads)) std::fill(view.values.begin(), view.values.end(), 0.0);
    std::vector<Vec> d_alphas(queries, Vec(params.hp.ability_dim, 0.0));
    std::vector<double> d_betas(queries, 0.0);
    for (std::size_t q = 0; q < queries; ++q) {
      for (std::uint32_t m = 0; m < models; ++m) {
        const auto theta = params.theta(ModelId{m});
        const double r = scale * (respond(traces[q].alpha, traces[q].beta, theta) - labels[q][m]);
        for (std::size_t k = 0; k < theta.size(); ++k) {
          d_alphas[q][k] += r * theta[k];
          grads.theta(m, k) += r * traces[q].alpha[k];
        }
        d_betas[q] -= r;
      }
    }
    std::vector<const ForwardTrace*> ptrs;
    for (const auto& t : traces) ptrs.push_back(&t);
    backward_queries(params, ptrs, d_alphas, d_betas, grads);
    adam.step(params.tensors, grads);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries * models));
}
BENCHMARK(BM_TrainingStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
