#pragma once

// Response ingestion, majority-vote consolidation and query-level splits.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace irtnet {

struct ModelId {
  std::uint32_t index = 0;
  friend auto operator<=>(const ModelId&, const ModelId&) = default;
};

struct QueryId {
  std::uint32_t index = 0;
  friend auto operator<=>(const QueryId&, const QueryId&) = default;
};

/// Dense name <-> ModelId table, indices assigned in insertion order.
class ModelTable {
 public:
  ModelId intern(std::string_view name);
  std::optional<ModelId> find(std::string_view name) const;
  const std::string& name(ModelId id) const { return names_.at(id.index); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

  static ModelTable from_names(const std::vector<std::string>& names);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ModelId> index_;
};

/// Dense external-id <-> QueryId table; every query carries one benchmark label.
class QueryTable {
 public:
  /// Throws DataError if `external_id` was already seen with another benchmark.
  QueryId intern(std::string_view external_id, std::string_view benchmark);
  std::optional<QueryId> find(std::string_view external_id) const;

  const std::string& external_id(QueryId id) const { return ids_.at(id.index); }
  const std::string& benchmark(QueryId id) const { return benchmark_names_.at(benchmark_of_.at(id.index)); }
  std::size_t benchmark_index(QueryId id) const { return benchmark_of_.at(id.index); }
  std::size_t size() const noexcept { return ids_.size(); }

  /// Distinct benchmark labels in first-appearance order.
  const std::vector<std::string>& benchmarks() const noexcept { return benchmark_names_; }
  std::vector<QueryId> queries_in(std::string_view benchmark) const;
  std::vector<QueryId> all() const;

 private:
  std::vector<std::string> ids_;
  std::vector<std::size_t> benchmark_of_;
  std::vector<std::string> benchmark_names_;
  std::unordered_map<std::string, QueryId> index_;
  std::unordered_map<std::string, std::size_t> benchmark_index_;
};

struct RawResponse {
  ModelId model;
  QueryId query;
  std::uint8_t correct = 0;
  std::size_t line = 0;
};

struct RawResponses {
  ModelTable models;
  QueryTable queries;
  std::vector<RawResponse> rows;
};

struct ResponseRecord {
  ModelId model;
  QueryId query;
  std::uint8_t correct = 0;
  friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

/// Parses the `model,query_id,benchmark,correct` CSV. Throws ParseError with
/// the offending line number, or DataError on an empty file.
RawResponses load_responses(const std::filesystem::path& path);
RawResponses parse_responses(std::istream& in, const std::string& source = "<stream>");

/// One record per (model, query) pair in first-appearance order. The label is
/// 1 iff strictly more than half of the pair's rows are correct; ties give 0.
std::vector<ResponseRecord> consolidate_majority(const std::vector<RawResponse>& rows);
std::vector<ResponseRecord> consolidate_majority(const std::vector<ResponseRecord>& rows);

struct Dataset {
  ModelTable models;
  QueryTable queries;
  std::vector<ResponseRecord> records;
};

Dataset load_dataset(const std::filesystem::path& responses_csv);
void write_responses(const std::filesystem::path& path, const Dataset& dataset);

// ---------------------------------------------------------------------------
// Splits

enum class SplitRole : std::uint8_t { train, validation, test, unassigned };

std::string_view to_string(SplitRole role);

struct DatasetSplit {
  std::vector<QueryId> train;
  std::vector<QueryId> validation;
  std::vector<QueryId> test;

  /// Role per QueryId index for a table of `num_queries` entries.
  std::vector<SplitRole> roles(std::size_t num_queries) const;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;

  /// 29,673 / 3,000 / 3,000 out of 35,673 queries.
  static SplitFractions embedllm();
};

/// Uniform random split by query. Each role gets floor(fraction * k) members;
/// when the fractions sum to one the flooring remainder goes to train. With
/// `stratify_by` set, the rule is applied within each benchmark.
DatasetSplit split_queries(const std::vector<QueryId>& queries, std::uint64_t seed,
                           const SplitFractions& fractions,
                           const QueryTable* stratify_by = nullptr);

/// Test = every query of `benchmark`; train = the rest, with an optional
/// validation fraction carved out of train.
DatasetSplit holdout_benchmark(const QueryTable& queries, std::string_view benchmark,
                               double validation_fraction = 0.0, std::uint64_t seed = 0);

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split,
                          const QueryTable& queries);
DatasetSplit read_split_manifest(const std::filesystem::path& path, const QueryTable& queries);

/// Records whose query has the given role.
std::vector<ResponseRecord> records_with_role(const std::vector<ResponseRecord>& records,
                                              const std::vector<SplitRole>& roles, SplitRole role);

}  // namespace irtnet
