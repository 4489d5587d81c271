#pragma once

// Ground-truth 2PL worlds for desk-scale verification.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "irtnet/data.hpp"
#include "irtnet/embeddings.hpp"
#include "irtnet/linalg.hpp"

namespace irtnet {

struct WorldConfig {
  std::size_t num_models = 50;
  std::size_t num_queries = 2000;
  std::size_t true_dim = 8;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 1;
  std::size_t num_bands = 5;  // benchmark labels: queries grouped by true difficulty
  double feature_noise = 0.1;
  // Planted model communities; 0 draws theta* i.i.d. N(0, 1).
  std::size_t theta_clusters = 0;
  double cluster_spread = 0.5;
};

struct SyntheticWorld {
  WorldConfig config;
  Mat theta;     // n x d*
  Mat alpha;     // k x d*
  Vec beta;      // k
  Mat lift;      // embed_dim x (d* + 1), features = lift [alpha; beta] + noise
  Mat features;  // k x embed_dim
  std::vector<std::size_t> band;     // per query, 0 = easiest
  std::vector<std::size_t> cluster;  // per model; all zero without planted clusters

  double probability(ModelId m, QueryId q) const;
  std::string model_name(std::size_t m) const;
  std::string query_name(std::size_t q) const;
  std::string band_name(std::size_t b) const;
};

SyntheticWorld generate_world(const WorldConfig& config);
SyntheticWorld generate_world(std::size_t num_models, std::size_t num_queries, std::size_t true_dim,
                              std::size_t embed_dim, std::uint64_t seed);

/// One Bernoulli draw per (model, query) pair, query-major. Table indices
/// coincide with world indices.
Dataset sample_responses(const SyntheticWorld& world, std::uint64_t seed);

EmbeddingStore world_embeddings(const SyntheticWorld& world);

struct OracleScore {
  double accuracy = 0.0;  // threshold 0.5, ties to 1
  double loss = 0.0;      // mean clamped BCE
};

/// Scores the true generating probabilities on `records`.
OracleScore bayes_oracle(const SyntheticWorld& world, const std::vector<ResponseRecord>& records);

/// JSON sidecar with the true parameters.
void write_truth_json(const SyntheticWorld& world, const std::filesystem::path& path);

}  // namespace irtnet
