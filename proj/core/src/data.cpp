#include "irtnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <random>

#include "irtnet/csv.hpp"
#include "irtnet/error.hpp"

namespace irtnet {

// ---------------------------------------------------------------------------
// Tables

ModelId ModelTable::intern(std::string_view name) {
  std::string key(name);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const ModelId id{static_cast<std::uint32_t>(names_.size())};
  names_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<ModelId> ModelTable::find(std::string_view name) const {
  if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
  return std::nullopt;
}

ModelTable ModelTable::from_names(const std::vector<std::string>& names) {
  ModelTable table;
  for (const auto& n : names) {
    if (table.find(n)) throw DataError("duplicate model name '" + n + "'");
    table.intern(n);
  }
  return table;
}

QueryId QueryTable::intern(std::string_view external_id, std::string_view benchmark) {
  std::string key(external_id);
  if (auto it = index_.find(key); it != index_.end()) {
    if (this->benchmark(it->second) != benchmark) {
      throw DataError("query '" + key + "' appears under benchmarks '" + this->benchmark(it->second) +
                      "' and '" + std::string(benchmark) + "'");
    }
    return it->second;
  }
  std::string bench(benchmark);
  std::size_t b = 0;
  if (auto it = benchmark_index_.find(bench); it != benchmark_index_.end()) {
    b = it->second;
  } else {
    b = benchmark_names_.size();
    benchmark_names_.push_back(bench);
    benchmark_index_.emplace(std::move(bench), b);
  }
  const QueryId id{static_cast<std::uint32_t>(ids_.size())};
  ids_.push_back(key);
  benchmark_of_.push_back(b);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<QueryId> QueryTable::find(std::string_view external_id) const {
  if (auto it = index_.find(std::string(external_id)); it != index_.end()) return it->second;
  return std::nullopt;
}

std::vector<QueryId> QueryTable::queries_in(std::string_view benchmark) const {
  std::vector<QueryId> out;
  auto it = benchmark_index_.find(std::string(benchmark));
  if (it == benchmark_index_.end()) return out;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (benchmark_of_[i] == it->second) out.push_back(QueryId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

std::vector<QueryId> QueryTable::all() const {
  std::vector<QueryId> out(ids_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = QueryId{static_cast<std::uint32_t>(i)};
  return out;
}

// ---------------------------------------------------------------------------
// Responses

RawResponses parse_responses(std::istream& in, const std::string& source) {
  RawResponses out;
  std::string line;
  std::vector<std::string> fields;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw DataError(source + ": empty responses file");
  ++line_no;
  if (csv::chomp(line) != "model,query_id,benchmark,correct") {
    throw ParseError(source, line_no, "expected header 'model,query_id,benchmark,correct'");
  }

  while (std::getline(in, line)) {
    ++line_no;
    const auto body = csv::chomp(line);
    if (body.empty()) continue;
    if (!csv::split_line(body, fields)) throw ParseError(source, line_no, "unterminated quoted field");
    if (fields.size() != 4) {
      throw ParseError(source, line_no, "expected 4 columns, found " + std::to_string(fields.size()));
    }
    std::uint8_t correct = 0;
    if (fields[3] == "1") {
      correct = 1;
    } else if (fields[3] != "0") {
      throw ParseError(source, line_no, "correct must be 0 or 1, found '" + fields[3] + "'");
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, line_no, "empty model or query_id");

    RawResponse row;
    row.model = out.models.intern(fields[0]);
    try {
      row.query = out.queries.intern(fields[1], fields[2]);
    } catch (const DataError& e) {
      throw ParseError(source, line_no, e.what());
    }
    row.correct = correct;
    row.line = line_no;
    out.rows.push_back(row);
  }
  if (out.rows.empty()) throw DataError(source + ": responses file has no data rows");
  return out;
}

RawResponses load_responses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open responses file " + path.string());
  return parse_responses(in, path.string());
}

namespace {

template <typename Row>
std::vector<ResponseRecord> consolidate(const std::vector<Row>& rows) {
  struct Tally {
    std::size_t order;
    std::size_t total = 0;
    std::size_t correct = 0;
  };
  std::map<std::pair<std::uint32_t, std::uint32_t>, Tally> tallies;
  std::vector<std::pair<ModelId, QueryId>> order;
  for (const auto& row : rows) {
    auto [it, inserted] = tallies.try_emplace({row.model.index, row.query.index}, Tally{order.size()});
    if (inserted) order.emplace_back(row.model, row.query);
    it->second.total += 1;
    it->second.correct += row.correct != 0 ? 1 : 0;
  }
  std::vector<ResponseRecord> out;
  out.reserve(order.size());
  for (const auto& [m, q] : order) {
    const Tally& t = tallies.at({m.index, q.index});
    out.push_back(ResponseRecord{m, q, static_cast<std::uint8_t>(2 * t.correct > t.total ? 1 : 0)});
  }
  return out;
}

}  // namespace

std::vector<ResponseRecord> consolidate_majority(const std::vector<RawResponse>& rows) {
  return consolidate(rows);
}

std::vector<ResponseRecord> consolidate_majority(const std::vector<ResponseRecord>& rows) {
  return consolidate(rows);
}

Dataset load_dataset(const std::filesystem::path& responses_csv) {
  RawResponses raw = load_responses(responses_csv);
  Dataset ds;
  ds.records = consolidate_majority(raw.rows);
  ds.models = std::move(raw.models);
  ds.queries = std::move(raw.queries);
  return ds;
}

void write_responses(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model,query_id,benchmark,correct\n";
  for (const auto& r : dataset.records) {
    out << csv::escape(dataset.models.name(r.model)) << ',' << csv::escape(dataset.queries.external_id(r.query))
        << ',' << csv::escape(dataset.queries.benchmark(r.query)) << ',' << int(r.correct) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Splits

std::string_view to_string(SplitRole role) {
  switch (role) {
    case SplitRole::train: return "train";
    case SplitRole::validation: return "validation";
    case SplitRole::test: return "test";
    case SplitRole::unassigned: break;
  }
  return "unassigned";
}

std::vector<SplitRole> DatasetSplit::roles(std::size_t num_queries) const {
  std::vector<SplitRole> out(num_queries, SplitRole::unassigned);
  auto mark = [&](const std::vector<QueryId>& ids, SplitRole role) {
    for (QueryId q : ids) out.at(q.index) = role;
  };
  mark(train, SplitRole::train);
  mark(validation, SplitRole::validation);
  mark(test, SplitRole::test);
  return out;
}

SplitFractions SplitFractions::embedllm() {
  constexpr double k = 35673.0;
  return SplitFractions{29673.0 / k, 3000.0 / k, 3000.0 / k};
}

namespace {

// Guards against 3000/35673*35673 landing a hair under 3000.
std::size_t floor_share(double fraction, std::size_t k) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(k) + 1e-9));
}

void sort_ids(std::vector<QueryId>& ids) { std::sort(ids.begin(), ids.end()); }

void split_group(std::vector<QueryId> group, std::mt19937_64& rng, const SplitFractions& f, bool fills_all,
                 DatasetSplit& out) {
  std::shuffle(group.begin(), group.end(), rng);
  const std::size_t k = group.size();
  const std::size_t n_val = floor_share(f.validation, k);
  const std::size_t n_test = floor_share(f.test, k);
  const std::size_t n_train = fills_all ? k - n_val - n_test : floor_share(f.train, k);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n_val; ++i) out.validation.push_back(group[pos++]);
  for (std::size_t i = 0; i < n_test; ++i) out.test.push_back(group[pos++]);
  for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(group[pos++]);
}

}  // namespace

DatasetSplit split_queries(const std::vector<QueryId>& queries, std::uint64_t seed,
                           const SplitFractions& fractions, const QueryTable* stratify_by) {
  const SplitFractions& f = fractions;
  if (!(f.train > 0.0) || f.validation < 0.0 || f.test < 0.0) {
    throw std::invalid_argument("split fractions must be non-negative with a positive train share");
  }
  const double sum = f.train + f.validation + f.test;
  if (sum > 1.0 + 1e-9) throw std::invalid_argument("split fractions sum to more than 1");
  const bool fills_all = sum > 1.0 - 1e-9;

  std::mt19937_64 rng(seed);
  DatasetSplit out;
  if (stratify_by == nullptr) {
    split_group(queries, rng, f, fills_all, out);
  } else {
    std::vector<std::vector<QueryId>> groups(stratify_by->benchmarks().size());
    for (QueryId q : queries) groups.at(stratify_by->benchmark_index(q)).push_back(q);
    for (auto& g : groups) split_group(std::move(g), rng, f, fills_all, out);
  }

  auto require = [&](double fraction, const std::vector<QueryId>& part, const char* name) {
    if (fraction > 0.0 && part.empty()) {
      throw DataError(std::string("too few queries (") + std::to_string(queries.size()) + ") to give the " +
                      name + " split at least one member");
    }
  };
  require(f.train, out.train, "train");
  require(f.validation, out.validation, "validation");
  require(f.test, out.test, "test");

  sort_ids(out.train);
  sort_ids(out.validation);
  sort_ids(out.test);
  return out;
}

DatasetSplit holdout_benchmark(const QueryTable& queries, std::string_view benchmark,
                               double validation_fraction, std::uint64_t seed) {
  const auto& names = queries.benchmarks();
  if (std::find(names.begin(), names.end(), benchmark) == names.end()) {
    throw DataError("unknown benchmark '" + std::string(benchmark) + "'");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  }
  DatasetSplit out;
  std::vector<QueryId> rest;
  for (QueryId q : queries.all()) {
    if (queries.benchmark(q) == benchmark) {
      out.test.push_back(q);
    } else {
      rest.push_back(q);
    }
  }
  if (validation_fraction > 0.0) {
    std::mt19937_64 rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    const std::size_t n_val = floor_share(validation_fraction, rest.size());
    out.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  } else {
    out.train = std::move(rest);
  }
  sort_ids(out.train);
  sort_ids(out.validation);
  return out;
}

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split,
                          const QueryTable& queries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << "query_id,split\n";
  const auto roles = split.roles(queries.size());
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == SplitRole::unassigned) continue;
    out << csv::escape(queries.external_id(QueryId{static_cast<std::uint32_t>(i)})) << ','
        << to_string(roles[i]) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

DatasetSplit read_split_manifest(const std::filesystem::path& path, const QueryTable& queries) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  std::string line;
  std::vector<std::string> fields;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || csv::chomp(line) != "query_id,split") {
    throw ParseError(path.string(), 1, "expected header 'query_id,split'");
  }
  ++line_no;
  DatasetSplit out;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = csv::chomp(line);
    if (body.empty()) continue;
    if (!csv::split_line(body, fields) || fields.size() != 2) {
      throw ParseError(path.string(), line_no, "expected 'query_id,split'");
    }
    const auto q = queries.find(fields[0]);
    if (!q) throw ParseError(path.string(), line_no, "unknown query id '" + fields[0] + "'");
    if (fields[1] == "train") {
      out.train.push_back(*q);
    } else if (fields[1] == "validation") {
      out.validation.push_back(*q);
    } else if (fields[1] == "test") {
      out.test.push_back(*q);
    } else {
      throw ParseError(path.string(), line_no, "unknown split '" + fields[1] + "'");
    }
  }
  sort_ids(out.train);
  sort_ids(out.validation);
  sort_ids(out.test);
  return out;
}

std::vector<ResponseRecord> records_with_role(const std::vector<ResponseRecord>& records,
                                              const std::vector<SplitRole>& roles, SplitRole role) {
  std::vector<ResponseRecord> out;
  for (const auto& r : records) {
    if (roles.at(r.query.index) == role) out.push_back(r);
  }
  return out;
}

}  // namespace irtnet
