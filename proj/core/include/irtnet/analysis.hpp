#pragma once

// Interpretability studies on learned parameters: per-benchmark difficulty
// against observed accuracy, ability-space community distances, and vector
// export for external projection.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "irtnet/data.hpp"
#include "irtnet/embeddings.hpp"
#include "irtnet/model.hpp"

namespace irtnet {

struct BenchmarkDifficultyRow {
  std::string benchmark;
  double accuracy = 0.0;    // mean consolidated label over every model
  double mean_beta = 0.0;   // mean learned beta over the benchmark's queries
  std::size_t queries = 0;
  std::size_t records = 0;
};

struct DifficultyCorrelation {
  std::vector<BenchmarkDifficultyRow> rows;  // first-appearance order
  double pearson = 0.0;
};

/// Uses only queries that appear in `records`. Throws DataError with fewer
/// than two benchmarks and std::domain_error on zero variance.
DifficultyCorrelation difficulty_correlation(const IrtNetParams& params, const Dataset& dataset,
                                             const std::vector<ResponseRecord>& records,
                                             const QueryEmbeddings& embeddings);

struct CommunitySpec {
  std::string name;
  std::vector<ModelId> members;
};

struct CommunityDistance {
  std::string name;
  double intra = 0.0;  // mean pairwise L2 between members
  double inter = 0.0;  // mean L2 from each member to each non-member
};

/// Throws DataError when a community has fewer than two members, repeats a
/// member, or leaves no outsider.
std::vector<CommunityDistance> community_distances(const IrtNetParams& params,
                                                   std::span<const CommunitySpec> communities);

/// Reads `{"communities": [{"name": ..., "models": [...]}]}`, resolving model
/// names against the checkpoint's model list.
std::vector<CommunitySpec> load_communities(const std::filesystem::path& path,
                                            const std::vector<std::string>& model_names);

/// `model,t0,...` with one row per model.
void write_theta_csv(const IrtNetParams& params, const std::filesystem::path& path);
/// `query_id,benchmark,beta,a0,...` with one row per requested query.
void write_alpha_csv(const IrtNetParams& params, const QueryTable& table, const std::vector<QueryId>& queries,
                     const QueryEmbeddings& embeddings, const std::filesystem::path& path);

struct ThetaTable {
  std::vector<std::string> models;
  Mat theta;
};
ThetaTable read_theta_csv(const std::filesystem::path& path);

/// Fraction of records with (p >= threshold) == y. Throws DataError when empty.
double correctness_accuracy(const IrtNetParams& params, const std::vector<ResponseRecord>& records,
                            const QueryEmbeddings& embeddings, double threshold = 0.5);

}  // namespace irtnet
