#include "irtnet/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "irtnet/error.hpp"

namespace irtnet {

double RoutingDecision::probability() const {
  for (const auto& [m, p] : candidates) {
    if (m == chosen) return p;
  }
  throw std::logic_error("routing decision without its chosen candidate");
}

RoutingDecision route(const IrtNetParams& params, std::span<const double> embedding,
                      std::span<const ModelId> candidates) {
  if (candidates.empty()) throw std::invalid_argument("route: empty candidate set");
  std::vector<ModelId> pool(candidates.begin(), candidates.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  for (ModelId m : pool) {
    if (m.index >= params.num_models()) throw std::out_of_range("route: candidate index out of range");
  }

  const ForwardTrace tr = encode_query(params, embedding);
  RoutingDecision d;
  d.candidates.reserve(pool.size());
  double best = -std::numeric_limits<double>::infinity();
  for (ModelId m : pool) {
    const double p = respond(tr.alpha, tr.beta, params.theta(m));
    d.candidates.emplace_back(m, p);
    if (p > best) {
      best = p;
      d.chosen = m;
      d.tie_broken = false;
    } else if (p == best) {
      d.tie_broken = true;
    }
  }
  return d;
}

std::pair<double, double> micro_macro_accuracy(std::span<const RoutingOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("accuracy over an empty outcome set");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per;  // correct, total
  std::size_t correct = 0;
  for (const auto& o : outcomes) {
    auto [it, inserted] = per.try_emplace(o.benchmark, 0, 0);
    if (inserted) order.push_back(o.benchmark);
    it->second.first += o.correct ? 1 : 0;
    it->second.second += 1;
    correct += o.correct ? 1 : 0;
  }
  double macro = 0.0;
  for (const auto& name : order) {
    const auto& [c, t] = per.at(name);
    macro += static_cast<double>(c) / static_cast<double>(t);
  }
  return {static_cast<double>(correct) / static_cast<double>(outcomes.size()),
          macro / static_cast<double>(order.size())};
}

RoutingEvaluation route_batch(const IrtNetParams& params, const std::vector<QueryId>& queries,
                              const QueryEmbeddings& embeddings, std::span<const ModelId> candidates,
                              const Dataset& truth) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint8_t> labels;
  for (const auto& r : truth.records) labels.emplace(std::make_pair(r.model.index, r.query.index), r.correct);

  RoutingEvaluation eval;
  std::vector<RoutingOutcome> outcomes;
  for (QueryId q : queries) {
    RoutedQuery rq{q, route(params, embeddings[q], candidates), false};
    const auto it = labels.find({rq.decision.chosen.index, q.index});
    if (it == labels.end()) {
      throw DataError("no ground truth for model '" + truth.models.name(rq.decision.chosen) + "' on query '" +
                      truth.queries.external_id(q) + "'");
    }
    rq.correct = it->second != 0;
    outcomes.push_back({truth.queries.benchmark(q), rq.correct});
    eval.decisions.push_back(std::move(rq));
  }
  std::tie(eval.micro_accuracy, eval.macro_accuracy) = micro_macro_accuracy(outcomes);

  std::vector<std::string> order;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per;
  for (const auto& o : outcomes) {
    auto [it, inserted] = per.try_emplace(o.benchmark, 0, 0);
    if (inserted) order.push_back(o.benchmark);
    it->second.first += o.correct ? 1 : 0;
    it->second.second += 1;
  }
  for (const auto& name : order) {
    const auto& [c, t] = per.at(name);
    eval.per_benchmark.emplace_back(name, static_cast<double>(c) / static_cast<double>(t));
  }
  return eval;
}

BenchmarkPrediction predict_benchmark(const IrtNetParams& params, ModelId model,
                                      std::span<const std::span<const double>> query_set,
                                      const std::string& query_set_id) {
  if (query_set.empty()) throw std::invalid_argument("predict_benchmark: empty query set");
  const auto theta = params.theta(model);
  double total = 0.0;
  for (const auto& v : query_set) {
    const ForwardTrace tr = encode_query(params, v);
    total += respond(tr.alpha, tr.beta, theta);
  }
  return {model, query_set_id, total / static_cast<double>(query_set.size()), query_set.size()};
}

std::vector<BenchmarkPrediction> predict_benchmark_all(const IrtNetParams& params,
                                                       std::span<const std::span<const double>> query_set,
                                                       const std::string& query_set_id) {
  if (query_set.empty()) throw std::invalid_argument("predict_benchmark_all: empty query set");
  const std::size_t n = params.num_models();
  Vec totals(n, 0.0);
  for (const auto& v : query_set) {
    const Vec probs = predict_all_models(params, v);
    for (std::size_t m = 0; m < n; ++m) totals[m] += probs[m];
  }
  std::vector<BenchmarkPrediction> out;
  out.reserve(n);
  for (std::size_t m = 0; m < n; ++m) {
    out.push_back({ModelId{static_cast<std::uint32_t>(m)}, query_set_id,
                   totals[m] / static_cast<double>(query_set.size()), query_set.size()});
  }
  return out;
}

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw DimensionError("rmse: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - actual[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

std::vector<double> observed_accuracy(const Dataset& truth, const std::vector<QueryId>& queries) {
  std::vector<char> in_set(truth.queries.size(), 0);
  for (QueryId q : queries) in_set.at(q.index) = 1;
  std::vector<std::size_t> correct(truth.models.size(), 0), total(truth.models.size(), 0);
  for (const auto& r : truth.records) {
    if (!in_set[r.query.index]) continue;
    total[r.model.index] += 1;
    correct[r.model.index] += r.correct;
  }
  std::vector<double> out(truth.models.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t m = 0; m < out.size(); ++m) {
    if (total[m] > 0) out[m] = static_cast<double>(correct[m]) / static_cast<double>(total[m]);
  }
  return out;
}

}  // namespace irtnet
