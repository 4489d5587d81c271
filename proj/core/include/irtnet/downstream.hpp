#pragma once

// Model routing (argmax of predicted success over a candidate set) and
// single-pass benchmark accuracy prediction.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irtnet/data.hpp"
#include "irtnet/embeddings.hpp"
#include "irtnet/model.hpp"

namespace irtnet {

struct RoutingDecision {
  ModelId chosen;
  std::vector<std::pair<ModelId, double>> candidates;  // ascending model index
  bool tie_broken = false;

  double probability() const;
};

/// Highest predicted probability wins; exact ties go to the lowest model index
/// and set tie_broken. Duplicate candidates are collapsed. One encoder call.
RoutingDecision route(const IrtNetParams& params, std::span<const double> embedding,
                      std::span<const ModelId> candidates);

struct RoutedQuery {
  QueryId query;
  RoutingDecision decision;
  bool correct = false;
};

struct RoutingEvaluation {
  std::vector<RoutedQuery> decisions;
  double micro_accuracy = 0.0;
  double macro_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_benchmark;  // first-appearance order
};

/// Routes every query and scores the chosen model against consolidated
/// records. Throws DataError when a chosen (model, query) pair has no record.
RoutingEvaluation route_batch(const IrtNetParams& params, const std::vector<QueryId>& queries,
                              const QueryEmbeddings& embeddings, std::span<const ModelId> candidates,
                              const Dataset& truth);

struct RoutingOutcome {
  std::string benchmark;
  bool correct = false;
};
/// micro = correct / total; macro = unweighted mean of per-benchmark micro.
std::pair<double, double> micro_macro_accuracy(std::span<const RoutingOutcome> outcomes);

struct BenchmarkPrediction {
  ModelId model;
  std::string query_set_id;
  double predicted_accuracy = 0.0;
  std::size_t num_queries = 0;
};

/// Mean predicted probability of `model` over the query set.
BenchmarkPrediction predict_benchmark(const IrtNetParams& params, ModelId model,
                                      std::span<const std::span<const double>> query_set,
                                      const std::string& query_set_id = "");

/// Every model at once: one encoder call per query regardless of n.
std::vector<BenchmarkPrediction> predict_benchmark_all(const IrtNetParams& params,
                                                       std::span<const std::span<const double>> query_set,
                                                       const std::string& query_set_id = "");

double rmse(std::span<const double> predicted, std::span<const double> actual);

/// Observed mean label per model over the given queries (NaN for a model with no records there).
std::vector<double> observed_accuracy(const Dataset& truth, const std::vector<QueryId>& queries);

}  // namespace irtnet
