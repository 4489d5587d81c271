#include "irtnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "irtnet/error.hpp"
#include "irtnet/training.hpp"

namespace irtnet {

double SyntheticWorld::probability(ModelId m, QueryId q) const {
  if (m.index >= theta.rows() || q.index >= alpha.rows()) throw DataError("pair outside the synthetic world");
  return sigmoid(dot(alpha.row(q.index), theta.row(m.index)) - beta[q.index]);
}

std::string SyntheticWorld::model_name(std::size_t m) const { return "model_" + std::to_string(m); }
std::string SyntheticWorld::query_name(std::size_t q) const { return "q" + std::to_string(q); }
std::string SyntheticWorld::band_name(std::size_t b) const { return "band" + std::to_string(b); }

SyntheticWorld generate_world(const WorldConfig& config) {
  const std::size_t n = config.num_models;
  const std::size_t k = config.num_queries;
  const std::size_t d = config.true_dim;
  if (n == 0 || k == 0 || d == 0 || config.embed_dim == 0 || config.num_bands == 0) {
    throw std::invalid_argument("synthetic world dimensions must be positive");
  }

  SyntheticWorld w;
  w.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  w.theta = Mat(n, d);
  w.cluster.assign(n, 0);
  if (config.theta_clusters > 0) {
    Mat centers(config.theta_clusters, d);
    for (double& v : centers.values()) v = normal(rng);
    for (std::size_t m = 0; m < n; ++m) {
      w.cluster[m] = m % config.theta_clusters;
      for (std::size_t j = 0; j < d; ++j) w.theta(m, j) = centers(w.cluster[m], j) + config.cluster_spread * normal(rng);
    }
  } else {
    for (double& v : w.theta.values()) v = normal(rng);
  }

  w.alpha = Mat(k, d);
  for (double& v : w.alpha.values()) v = normal(rng);
  w.beta.resize(k);
  for (double& v : w.beta) v = normal(rng);

  w.lift = Mat(config.embed_dim, d + 1);
  const double lift_scale = 1.0 / std::sqrt(static_cast<double>(d + 1));
  for (double& v : w.lift.values()) v = lift_scale * normal(rng);

  w.features = Mat(k, config.embed_dim);
  Vec latent(d + 1);
  for (std::size_t q = 0; q < k; ++q) {
    std::copy_n(w.alpha.row(q).begin(), d, latent.begin());
    latent[d] = w.beta[q];
    const Vec f = matvec(w.lift, latent);
    for (std::size_t j = 0; j < config.embed_dim; ++j) w.features(q, j) = f[j] + config.feature_noise * normal(rng);
  }

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w.beta[a] < w.beta[b]; });
  w.band.resize(k);
  for (std::size_t rank = 0; rank < k; ++rank) w.band[order[rank]] = rank * config.num_bands / k;
  return w;
}

SyntheticWorld generate_world(std::size_t num_models, std::size_t num_queries, std::size_t true_dim,
                              std::size_t embed_dim, std::uint64_t seed) {
  WorldConfig c;
  c.num_models = num_models;
  c.num_queries = num_queries;
  c.true_dim = true_dim;
  c.embed_dim = embed_dim;
  c.seed = seed;
  return generate_world(c);
}

Dataset sample_responses(const SyntheticWorld& world, std::uint64_t seed) {
  Dataset ds;
  for (std::size_t m = 0; m < world.theta.rows(); ++m) ds.models.intern(world.model_name(m));
  for (std::size_t q = 0; q < world.alpha.rows(); ++q) ds.queries.intern(world.query_name(q), world.band_name(world.band[q]));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ds.records.reserve(world.theta.rows() * world.alpha.rows());
  for (std::size_t q = 0; q < world.alpha.rows(); ++q) {
    for (std::size_t m = 0; m < world.theta.rows(); ++m) {
      const ModelId mid{static_cast<std::uint32_t>(m)};
      const QueryId qid{static_cast<std::uint32_t>(q)};
      const auto y = static_cast<std::uint8_t>(unit(rng) < world.probability(mid, qid) ? 1 : 0);
      ds.records.push_back(ResponseRecord{mid, qid, y});
    }
  }
  return ds;
}

EmbeddingStore world_embeddings(const SyntheticWorld& world) {
  EmbeddingStore store(world.config.embed_dim);
  for (std::size_t q = 0; q < world.features.rows(); ++q) store.add(world.query_name(q), world.features.row(q));
  return store;
}

OracleScore bayes_oracle(const SyntheticWorld& world, const std::vector<ResponseRecord>& records) {
  if (records.empty()) throw DataError("bayes oracle needs at least one record");
  OracleScore score;
  std::size_t correct = 0;
  for (const auto& r : records) {
    const double p = world.probability(r.model, r.query);
    correct += (p >= 0.5 ? 1 : 0) == r.correct ? 1 : 0;
    score.loss += bce_loss(p, r.correct);
  }
  score.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  score.loss /= static_cast<double>(records.size());
  return score;
}

void write_truth_json(const SyntheticWorld& world, const std::filesystem::path& path) {
  using nlohmann::json;
  auto rows = [](const Mat& m) {
    json out = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return out;
  };
  const WorldConfig& c = world.config;
  json j;
  j["config"] = {{"num_models", c.num_models},   {"num_queries", c.num_queries},
                 {"true_dim", c.true_dim},       {"embed_dim", c.embed_dim},
                 {"seed", c.seed},               {"num_bands", c.num_bands},
                 {"feature_noise", c.feature_noise}, {"theta_clusters", c.theta_clusters}};
  json models = json::array();
  for (std::size_t m = 0; m < world.theta.rows(); ++m) models.push_back(world.model_name(m));
  json queries = json::array();
  json bands = json::array();
  for (std::size_t q = 0; q < world.alpha.rows(); ++q) {
    queries.push_back(world.query_name(q));
    bands.push_back(world.band_name(world.band[q]));
  }
  j["models"] = models;
  j["queries"] = queries;
  j["benchmarks"] = bands;
  j["model_cluster"] = world.cluster;
  j["theta"] = rows(world.theta);
  j["alpha"] = rows(world.alpha);
  j["beta"] = world.beta;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace irtnet
