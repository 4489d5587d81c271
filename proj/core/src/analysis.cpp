#include "irtnet/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "irtnet/csv.hpp"
#include "irtnet/error.hpp"

namespace irtnet {

DifficultyCorrelation difficulty_correlation(const IrtNetParams& params, const Dataset& dataset,
                                             const std::vector<ResponseRecord>& records,
                                             const QueryEmbeddings& embeddings) {
  const std::size_t nb = dataset.queries.benchmarks().size();
  std::vector<std::size_t> correct(nb, 0), total(nb, 0), nq(nb, 0);
  std::vector<double> beta_sum(nb, 0.0);
  std::vector<char> seen(dataset.queries.size(), 0);
  for (const auto& r : records) {
    const std::size_t b = dataset.queries.benchmark_index(r.query);
    correct[b] += r.correct;
    total[b] += 1;
    if (!seen.at(r.query.index)) {
      seen[r.query.index] = 1;
      beta_sum[b] += encode_query(params, embeddings[r.query]).beta;
      nq[b] += 1;
    }
  }

  DifficultyCorrelation out;
  for (std::size_t b = 0; b < nb; ++b) {
    if (total[b] == 0) continue;
    out.rows.push_back({dataset.queries.benchmarks()[b],
                        static_cast<double>(correct[b]) / static_cast<double>(total[b]),
                        beta_sum[b] / static_cast<double>(nq[b]), nq[b], total[b]});
  }
  if (out.rows.size() < 2) throw DataError("difficulty correlation needs at least two benchmarks with records");
  Vec acc, beta;
  for (const auto& row : out.rows) {
    acc.push_back(row.accuracy);
    beta.push_back(row.mean_beta);
  }
  out.pearson = pearson(acc, beta);
  return out;
}

std::vector<CommunityDistance> community_distances(const IrtNetParams& params,
                                                   std::span<const CommunitySpec> communities) {
  const std::size_t n = params.num_models();
  std::vector<CommunityDistance> out;
  for (const auto& c : communities) {
    const std::set<ModelId> members(c.members.begin(), c.members.end());
    if (members.size() != c.members.size()) throw DataError("community '" + c.name + "' repeats a model");
    if (members.size() < 2) throw DataError("community '" + c.name + "' needs at least two members");
    if (members.size() >= n) throw DataError("community '" + c.name + "' leaves no outsider");
    for (ModelId m : members) {
      if (m.index >= n) throw DataError("community '" + c.name + "' names a model outside the checkpoint");
    }

    CommunityDistance d{c.name, 0.0, 0.0};
    std::size_t pairs = 0;
    for (auto a = members.begin(); a != members.end(); ++a) {
      for (auto b = std::next(a); b != members.end(); ++b) {
        d.intra += l2_distance(params.theta(*a), params.theta(*b));
        ++pairs;
      }
    }
    std::size_t cross = 0;
    for (ModelId a : members) {
      for (std::uint32_t j = 0; j < n; ++j) {
        const ModelId b{j};
        if (members.count(b)) continue;
        d.inter += l2_distance(params.theta(a), params.theta(b));
        ++cross;
      }
    }
    d.intra /= static_cast<double>(pairs);
    d.inter /= static_cast<double>(cross);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<CommunitySpec> load_communities(const std::filesystem::path& path,
                                            const std::vector<std::string>& model_names) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("communities") || !j["communities"].is_array()) {
    throw FormatError(path.string() + ": expected {\"communities\": [...]}");
  }
  std::vector<CommunitySpec> out;
  for (const auto& entry : j["communities"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() || !entry.contains("models") ||
        !entry["models"].is_array()) {
      throw FormatError(path.string() + ": each community needs a string name and a models array");
    }
    CommunitySpec spec;
    spec.name = entry["name"].get<std::string>();
    for (const auto& m : entry["models"]) {
      if (!m.is_string()) throw FormatError(path.string() + ": model names must be strings");
      const auto name = m.get<std::string>();
      const auto it = std::find(model_names.begin(), model_names.end(), name);
      if (it == model_names.end()) throw DataError("community '" + spec.name + "': unknown model '" + name + "'");
      spec.members.push_back(ModelId{static_cast<std::uint32_t>(it - model_names.begin())});
    }
    out.push_back(std::move(spec));
  }
  return out;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void close_checked(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

void write_theta_csv(const IrtNetParams& params, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  const std::size_t d = params.hp.ability_dim;
  out << "model";
  for (std::size_t j = 0; j < d; ++j) out << ",t" << j;
  out << '\n';
  for (std::uint32_t m = 0; m < params.num_models(); ++m) {
    out << csv::escape(params.model_names.at(m));
    for (double v : params.theta(ModelId{m})) out << ',' << csv::format_double(v);
    out << '\n';
  }
  close_checked(out, path);
}

void write_alpha_csv(const IrtNetParams& params, const QueryTable& table, const std::vector<QueryId>& queries,
                     const QueryEmbeddings& embeddings, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "query_id,benchmark,beta";
  for (std::size_t j = 0; j < params.hp.ability_dim; ++j) out << ",a" << j;
  out << '\n';
  for (QueryId q : queries) {
    const ForwardTrace tr = encode_query(params, embeddings[q]);
    out << csv::escape(table.external_id(q)) << ',' << csv::escape(table.benchmark(q)) << ','
        << csv::format_double(tr.beta);
    for (double v : tr.alpha) out << ',' << csv::format_double(v);
    out << '\n';
  }
  close_checked(out, path);
}

ThetaTable read_theta_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<std::string> fields;
  if (!std::getline(in, line) || !csv::split_line(csv::chomp(line), fields) || fields.empty() ||
      fields[0] != "model") {
    throw FormatError(path.string() + ": missing theta header");
  }
  const std::size_t d = fields.size() - 1;
  ThetaTable t;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = csv::chomp(line);
    if (view.empty()) continue;
    if (!csv::split_line(view, fields) || fields.size() != d + 1) {
      throw ParseError(path.string(), line_no, "bad theta row");
    }
    t.models.push_back(fields[0]);
    for (std::size_t j = 1; j <= d; ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || ptr != f.data() + f.size()) throw ParseError(path.string(), line_no, "bad number");
      values.push_back(v);
    }
  }
  t.theta = Mat(t.models.size(), d);
  std::copy(values.begin(), values.end(), t.theta.values().begin());
  return t;
}

double correctness_accuracy(const IrtNetParams& params, const std::vector<ResponseRecord>& records,
                            const QueryEmbeddings& embeddings, double threshold) {
  if (records.empty()) throw DataError("correctness accuracy over no records");
  std::size_t hits = 0;
  std::optional<QueryId> current;
  ForwardTrace tr;
  for (const auto& r : records) {
    if (!current || *current != r.query) {
      tr = encode_query(params, embeddings[r.query]);
      current = r.query;
    }
    const double p = respond(tr.alpha, tr.beta, params.theta(r.model));
    hits += (p >= threshold ? 1 : 0) == r.correct ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

}  // namespace irtnet
