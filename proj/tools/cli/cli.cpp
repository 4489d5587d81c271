#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "irtnet/analysis.hpp"
#include "irtnet/checkpoint.hpp"
#include "irtnet/csv.hpp"
#include "irtnet/data.hpp"
#include "irtnet/downstream.hpp"
#include "irtnet/embeddings.hpp"
#include "irtnet/error.hpp"
#include "irtnet/gradcheck.hpp"
#include "irtnet/model.hpp"
#include "irtnet/parallel.hpp"
#include "irtnet/synthetic.hpp"
#include "irtnet/training.hpp"
#include "serve/service.hpp"

namespace irtnet::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) { return csv::format_double(v); }

// ---------------------------------------------------------------------------
// Shared inputs

struct DataFlags {
  std::string responses;
  std::string ids;
  std::string vectors;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool responses_required, bool embeddings_required) {
  auto* r = cmd->add_option("--responses", f.responses, "Responses CSV (model,query_id,benchmark,correct)");
  auto* i = cmd->add_option("--ids", f.ids, "Embedding store id list, one query id per line");
  auto* v = cmd->add_option("--vectors", f.vectors, "Embedding store vectors (IRTEMB01)");
  if (responses_required) r->required();
  if (embeddings_required) {
    i->required();
    v->required();
  } else {
    i->needs(v);
    v->needs(i);
  }
}

// Query universe plus, when responses were given, consolidated records. The
// store is heap-held because QueryEmbeddings points into it.
struct Inputs {
  Dataset dataset;
  bool has_responses = false;
  std::unique_ptr<EmbeddingStore> store;
  std::unique_ptr<QueryEmbeddings> embeddings;
};

Inputs load_inputs(const DataFlags& f) {
  Inputs in;
  if (!f.responses.empty()) {
    in.dataset = load_dataset(f.responses);
    in.has_responses = true;
  }
  if (!f.ids.empty()) {
    in.store = std::make_unique<EmbeddingStore>(load_embeddings(f.ids, f.vectors));
    if (!in.has_responses) {
      for (const auto& id : in.store->ids()) in.dataset.queries.intern(id, "");
    }
    in.embeddings = std::make_unique<QueryEmbeddings>(*in.store, in.dataset.queries);
  }
  return in;
}

const QueryEmbeddings& embeddings_of(const Inputs& in) {
  if (!in.embeddings) throw UsageError("this command needs --ids and --vectors");
  return *in.embeddings;
}

// Rewrites the dataset's model indices to the checkpoint's order.
void align_models(Dataset& ds, const IrtNetParams& params) {
  std::vector<std::uint32_t> remap(ds.models.size());
  for (std::size_t m = 0; m < ds.models.size(); ++m) {
    const auto& name = ds.models.name(ModelId{static_cast<std::uint32_t>(m)});
    const auto it = std::find(params.model_names.begin(), params.model_names.end(), name);
    if (it == params.model_names.end()) throw DataError("model '" + name + "' is not in the checkpoint");
    remap[m] = static_cast<std::uint32_t>(it - params.model_names.begin());
  }
  for (auto& r : ds.records) r.model.index = remap[r.model.index];
  ds.models = ModelTable::from_names(params.model_names);
}

void check_embed_dim(const IrtNetParams& params, const Inputs& in) {
  if (in.store && in.store->dim() != params.hp.embed_dim) {
    throw DataError("embedding dim " + std::to_string(in.store->dim()) + " does not match checkpoint embed_dim " +
                    std::to_string(params.hp.embed_dim));
  }
}

struct SelectionFlags {
  std::string split;
  std::string role;
  std::string queries;
  std::string benchmark;
};

void add_selection_flags(CLI::App* cmd, SelectionFlags& s, bool with_benchmark) {
  cmd->add_option("--split", s.split, "Split manifest (query_id,split) restricting the query set");
  cmd->add_option("--role", s.role, "Split role to use with --split: train, validation, test or all (default test)")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  cmd->add_option("--queries", s.queries, "File with one query id per line");
  if (with_benchmark) cmd->add_option("--benchmark", s.benchmark, "Use every query of this benchmark (needs --responses)");
}

SplitRole parse_role(const std::string& role) {
  if (role == "train") return SplitRole::train;
  if (role == "validation") return SplitRole::validation;
  if (role == "test" || role.empty()) return SplitRole::test;
  throw UsageError("unknown role '" + role + "'");
}

std::vector<QueryId> select_queries(const Inputs& in, const SelectionFlags& s) {
  const QueryTable& table = in.dataset.queries;
  std::vector<char> keep(table.size(), 1);
  if (!s.role.empty() && s.split.empty()) throw UsageError("--role needs --split");
  if (!s.split.empty() && s.role != "all") {
    const auto roles = read_split_manifest(s.split, table).roles(table.size());
    const SplitRole want = parse_role(s.role);
    for (std::size_t q = 0; q < keep.size(); ++q) keep[q] &= roles[q] == want ? 1 : 0;
  }
  if (!s.benchmark.empty()) {
    if (!in.has_responses) throw UsageError("--benchmark needs --responses for benchmark labels");
    const auto& names = table.benchmarks();
    if (std::find(names.begin(), names.end(), s.benchmark) == names.end()) {
      throw DataError("unknown benchmark '" + s.benchmark + "'");
    }
    for (std::size_t q = 0; q < keep.size(); ++q) {
      keep[q] &= table.benchmark(QueryId{static_cast<std::uint32_t>(q)}) == s.benchmark ? 1 : 0;
    }
  }
  std::vector<QueryId> out;
  if (!s.queries.empty()) {
    std::ifstream f(s.queries);
    if (!f) throw DataError("cannot open " + s.queries);
    std::string line;
    while (std::getline(f, line)) {
      const auto id = std::string(csv::chomp(line));
      if (id.empty()) continue;
      const auto q = table.find(id);
      if (!q) throw DataError(s.queries + ": unknown query id '" + id + "'");
      if (keep[q->index]) out.push_back(*q);
    }
  } else {
    for (std::size_t q = 0; q < keep.size(); ++q) {
      if (keep[q]) out.push_back(QueryId{static_cast<std::uint32_t>(q)});
    }
  }
  if (out.empty()) throw DataError("the selected query set is empty");
  return out;
}

std::vector<ResponseRecord> records_for(const Dataset& ds, const std::vector<QueryId>& queries) {
  std::vector<char> in_set(ds.queries.size(), 0);
  for (QueryId q : queries) in_set[q.index] = 1;
  std::vector<ResponseRecord> out;
  for (const auto& r : ds.records) {
    if (in_set[r.query.index]) out.push_back(r);
  }
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  DataFlags data;
  std::string out;
  std::string log;
  std::string split_out;
  std::string split_in;
  Hyperparams hp;
  TrainConfig config;
  bool ablation = false;
  bool stratified = false;
  bool embedllm_split = false;
  std::string holdout;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::size_t max_train_queries = 0;
};

void add_train(CLI::App& app, TrainFlags& f) {
  auto* cmd = app.add_subcommand("train", "Fit IrtNet on a responses file and write a checkpoint plus training log");
  add_data_flags(cmd, f.data, true, true);
  cmd->add_option("--out", f.out, "Checkpoint path to write")->required();
  cmd->add_option("--log", f.log, "Per-epoch CSV log (default <out>.log.csv)");
  cmd->add_option("--split-out", f.split_out, "Split manifest to write (default <out>.split.csv)");
  cmd->add_option("--split", f.split_in, "Reuse an existing split manifest instead of drawing one");
  cmd->add_option("--d", f.hp.ability_dim, "Ability / discrimination dimension")->capture_default_str();
  cmd->add_option("--experts", f.hp.num_experts, "Routed experts N")->capture_default_str();
  cmd->add_option("--expert-hidden", f.hp.expert_hidden, "Expert hidden width")->capture_default_str();
  cmd->add_option("--hidden", f.hp.hidden_dim, "Encoder output width h")->capture_default_str();
  cmd->add_option("--bias-rate", f.hp.bias_update_rate, "Balance bias update rate")->capture_default_str();
  cmd->add_option("--lr", f.config.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", f.config.batch_size, "Records per batch")->capture_default_str();
  cmd->add_option("--epochs", f.config.max_epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", f.config.patience, "Early-stopping patience in epochs")->capture_default_str();
  cmd->add_option("--seed", f.config.seed, "Seed for initialisation, split and shuffling")->capture_default_str();
  cmd->add_flag("--ablation", f.ablation, "Train the parameter-matched MLP encoder instead of the mixture");
  cmd->add_flag("--stratified-split", f.stratified, "Apply split fractions within each benchmark");
  cmd->add_flag("--embedllm-split", f.embedllm_split, "Use the 29673/3000/3000 out of 35673 fractions");
  cmd->add_option("--val-fraction", f.val_fraction, "Validation fraction")->capture_default_str();
  cmd->add_option("--test-fraction", f.test_fraction, "Test fraction")->capture_default_str();
  cmd->add_option("--holdout-benchmark", f.holdout, "Test on this benchmark only and train on the rest");
  cmd->add_option("--max-train-queries", f.max_train_queries, "Keep only this many training queries (0 = all)");
}

DatasetSplit make_split(const TrainFlags& f, const Dataset& ds) {
  if (!f.split_in.empty()) return read_split_manifest(f.split_in, ds.queries);
  if (!f.holdout.empty()) return holdout_benchmark(ds.queries, f.holdout, f.val_fraction, f.config.seed);
  SplitFractions fr;
  if (f.embedllm_split) {
    fr = SplitFractions::embedllm();
  } else {
    fr.validation = f.val_fraction;
    fr.test = f.test_fraction;
    fr.train = 1.0 - f.val_fraction - f.test_fraction;
  }
  return split_queries(ds.queries.all(), f.config.seed, fr, f.stratified ? &ds.queries : nullptr);
}

int run_train(const TrainFlags& f) {
  Inputs in = load_inputs(f.data);
  DatasetSplit split = make_split(f, in.dataset);
  if (f.max_train_queries > 0 && split.train.size() > f.max_train_queries) {
    std::mt19937_64 rng(derive_seed(f.config.seed, 0x1000));
    std::shuffle(split.train.begin(), split.train.end(), rng);
    split.train.resize(f.max_train_queries);
    std::sort(split.train.begin(), split.train.end());
  }

  Hyperparams hp = f.hp;
  hp.embed_dim = in.store->dim();
  hp.validate();
  TrainConfig config = f.config;
  config.threads = threads_from_env();
  const std::size_t n = in.dataset.models.size();
  IrtNetParams params = f.ablation ? make_mlp_ablation(hp, n, config.seed)
                                   : init_params(hp, n, config.seed, EncoderKind::mixture);
  params.model_names = in.dataset.models.names();

  const std::string log_path = f.log.empty() ? f.out + ".log.csv" : f.log;
  const std::string split_path = f.split_out.empty() ? f.out + ".split.csv" : f.split_out;
  write_split_manifest(split_path, split, in.dataset.queries);
  TrainingLog log(log_path);

  const TrainResult result = train(std::move(params), in.dataset, *in.embeddings, split, config,
                                   [&](const EpochStats& s) {
                                     log.append(s);
                                     std::cerr << "epoch " << s.epoch << " train_loss " << num(s.train_loss)
                                               << " val_loss " << num(s.val_loss) << " val_acc "
                                               << num(s.val_accuracy) << '\n';
                                   });
  save_checkpoint(result.params, f.out);

  std::cout << "checkpoint " << f.out << '\n'
            << "encoder " << (f.ablation ? "mlp" : "mixture") << '\n'
            << "encoder_parameters " << encoder_parameter_count(result.params) << '\n'
            << "best_epoch " << result.report.best_epoch << '\n'
            << "final_epoch " << result.report.final_epoch << '\n';
  const auto roles = split.roles(in.dataset.queries.size());
  const auto test = records_with_role(in.dataset.records, roles, SplitRole::test);
  if (!test.empty()) {
    // Scored on the stored (f32) parameters so the number matches `eval`.
    const IrtNetParams stored = round_to_storage(result.params);
    std::cout << "test_accuracy " << num(correctness_accuracy(stored, test, *in.embeddings)) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalFlags {
  DataFlags data;
  SelectionFlags select;
  std::string checkpoint;
  double threshold = 0.5;
};

void add_eval(CLI::App& app, EvalFlags& f) {
  auto* cmd = app.add_subcommand("eval", "Correctness accuracy and loss of a checkpoint on a query set");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate")->required();
  add_data_flags(cmd, f.data, true, true);
  add_selection_flags(cmd, f.select, true);
  cmd->add_option("--threshold", f.threshold, "Probability at or above which a response counts as correct")
      ->capture_default_str();
}

int run_eval(const EvalFlags& f) {
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  Inputs in = load_inputs(f.data);
  check_embed_dim(params, in);
  align_models(in.dataset, params);
  const auto queries = select_queries(in, f.select);
  const auto records = records_for(in.dataset, queries);
  if (records.empty()) throw DataError("no records for the selected queries");
  const EvalStats stats = evaluate(params, records, *in.embeddings);
  std::cout << "queries " << queries.size() << '\n'
            << "records " << records.size() << '\n'
            << "accuracy " << num(correctness_accuracy(params, records, *in.embeddings, f.threshold)) << '\n'
            << "loss " << num(stats.loss) << '\n'
            << "gate_imbalance " << num(stats.gate_imbalance) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// route

struct RouteFlags {
  DataFlags data;
  SelectionFlags select;
  std::string checkpoint;
  std::string candidates;
  std::string out;
};

void add_route(CLI::App& app, RouteFlags& f) {
  auto* cmd = app.add_subcommand("route", "Pick the model with the highest predicted success for each query");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to route with")->required();
  add_data_flags(cmd, f.data, false, true);
  add_selection_flags(cmd, f.select, true);
  cmd->add_option("--candidates", f.candidates, "Comma-separated model names, or 'all'")->required();
  cmd->add_option("--out", f.out, "Decisions CSV (query_id,chosen_model,probability,tie_broken)")->required();
}

std::vector<ModelId> parse_candidates(const std::string& spec, const IrtNetParams& params) {
  std::vector<ModelId> out;
  if (spec == "all") {
    for (std::uint32_t m = 0; m < params.num_models(); ++m) out.push_back(ModelId{m});
    return out;
  }
  std::vector<std::string> names;
  if (!csv::split_line(spec, names)) throw UsageError("--candidates: unterminated quote");
  for (const auto& name : names) {
    if (name.empty()) throw UsageError("--candidates must list at least one model name, or 'all'");
    const auto it = std::find(params.model_names.begin(), params.model_names.end(), name);
    if (it == params.model_names.end()) throw DataError("unknown candidate model '" + name + "'");
    out.push_back(ModelId{static_cast<std::uint32_t>(it - params.model_names.begin())});
  }
  return out;
}

int run_route(const RouteFlags& f) {
  if (f.candidates.empty()) throw UsageError("--candidates must list at least one model name, or 'all'");
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  const auto candidates = parse_candidates(f.candidates, params);
  Inputs in = load_inputs(f.data);
  check_embed_dim(params, in);
  if (in.has_responses) align_models(in.dataset, params);
  const auto queries = select_queries(in, f.select);

  std::vector<RoutedQuery> decisions;
  std::optional<RoutingEvaluation> eval;
  if (in.has_responses) {
    eval = route_batch(params, queries, *in.embeddings, candidates, in.dataset);
    decisions = eval->decisions;
  } else {
    for (QueryId q : queries) decisions.push_back({q, route(params, (*in.embeddings)[q], candidates), false});
  }

  auto out = open_output(f.out);
  out << "query_id,chosen_model,probability,tie_broken\n";
  for (const auto& d : decisions) {
    out << csv::escape(in.dataset.queries.external_id(d.query)) << ','
        << csv::escape(params.model_names.at(d.decision.chosen.index)) << ',' << num(d.decision.probability())
        << ',' << (d.decision.tie_broken ? "true" : "false") << '\n';
  }
  out.close();
  if (!out) throw DataError("failed writing " + f.out);

  std::cout << "routed " << decisions.size() << '\n';
  if (eval) {
    std::cout << "micro_accuracy " << num(eval->micro_accuracy) << '\n'
              << "macro_accuracy " << num(eval->macro_accuracy) << '\n';
    for (const auto& [name, acc] : eval->per_benchmark) std::cout << "benchmark " << name << ' ' << num(acc) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict-benchmark

struct PredictFlags {
  DataFlags data;
  SelectionFlags select;
  std::string checkpoint;
  std::vector<std::string> models;
  std::string query_set;
  std::string out;
};

void add_predict(CLI::App& app, PredictFlags& f) {
  auto* cmd = app.add_subcommand("predict-benchmark",
                                 "Predict each model's accuracy on a query set in one encoder pass");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to predict with")->required();
  add_data_flags(cmd, f.data, false, true);
  add_selection_flags(cmd, f.select, true);
  cmd->add_option("--model", f.models, "Restrict output to these models (repeatable; default all)");
  cmd->add_option("--query-set", f.query_set, "Label for the query_set column (default: benchmark name or 'all')");
  cmd->add_option("--out", f.out, "Predictions CSV (model,query_set,predicted_acc,n_queries)")->required();
}

int run_predict(const PredictFlags& f) {
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  Inputs in = load_inputs(f.data);
  check_embed_dim(params, in);
  if (in.has_responses) align_models(in.dataset, params);
  const auto queries = select_queries(in, f.select);
  const std::string label = !f.query_set.empty() ? f.query_set : !f.select.benchmark.empty() ? f.select.benchmark : "all";

  std::vector<std::span<const double>> set;
  set.reserve(queries.size());
  for (QueryId q : queries) set.push_back((*in.embeddings)[q]);
  const auto predictions = predict_benchmark_all(params, set, label);

  std::vector<char> wanted(params.num_models(), f.models.empty() ? 1 : 0);
  for (const auto& name : f.models) {
    const auto it = std::find(params.model_names.begin(), params.model_names.end(), name);
    if (it == params.model_names.end()) throw DataError("unknown model '" + name + "'");
    wanted[static_cast<std::size_t>(it - params.model_names.begin())] = 1;
  }

  auto out = open_output(f.out);
  out << "model,query_set,predicted_acc,n_queries\n";
  for (const auto& p : predictions) {
    if (!wanted[p.model.index]) continue;
    out << csv::escape(params.model_names.at(p.model.index)) << ',' << csv::escape(p.query_set_id) << ','
        << num(p.predicted_accuracy) << ',' << p.num_queries << '\n';
  }
  out.close();
  if (!out) throw DataError("failed writing " + f.out);

  std::cout << "queries " << queries.size() << '\n';
  if (in.has_responses) {
    const auto observed = observed_accuracy(in.dataset, queries);
    Vec predicted, actual;
    for (const auto& p : predictions) {
      if (!wanted[p.model.index] || std::isnan(observed[p.model.index])) continue;
      predicted.push_back(p.predicted_accuracy);
      actual.push_back(observed[p.model.index]);
    }
    if (!predicted.empty()) {
      std::cout << "models_with_truth " << predicted.size() << '\n' << "rmse " << num(rmse(predicted, actual)) << '\n';
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  WorldConfig world;
  std::uint64_t response_seed = 0;
  bool response_seed_set = false;
  std::string out_dir;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  auto* cmd = app.add_subcommand("synth", "Generate a ground-truth 2PL world: responses, embeddings and truth JSON");
  cmd->add_option("--out-dir", f.out_dir, "Directory for responses.csv, ids.txt, vectors.bin, truth.json")
      ->required();
  cmd->add_option("--models", f.world.num_models, "Number of models")->capture_default_str();
  cmd->add_option("--queries", f.world.num_queries, "Number of queries")->capture_default_str();
  cmd->add_option("--true-dim", f.world.true_dim, "Dimension of the true abilities")->capture_default_str();
  cmd->add_option("--embed-dim", f.world.embed_dim, "Query feature dimension")->capture_default_str();
  cmd->add_option("--bands", f.world.num_bands, "Difficulty bands used as benchmark labels")->capture_default_str();
  cmd->add_option("--noise", f.world.feature_noise, "Feature noise standard deviation")->capture_default_str();
  cmd->add_option("--clusters", f.world.theta_clusters, "Planted ability clusters (0 = none)")->capture_default_str();
  cmd->add_option("--cluster-spread", f.world.cluster_spread, "Spread around each cluster centre")
      ->capture_default_str();
  cmd->add_option("--seed", f.world.seed, "World seed")->capture_default_str();
  cmd->add_option("--response-seed", f.response_seed, "Seed for the Bernoulli draws (default: derived from --seed)")
      ->each([&f](const std::string&) { f.response_seed_set = true; });
}

int run_synth(const SynthFlags& f) {
  const SyntheticWorld world = generate_world(f.world);
  const std::uint64_t rseed = f.response_seed_set ? f.response_seed : derive_seed(f.world.seed, 0x5E5);
  Dataset ds = sample_responses(world, rseed);
  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  write_responses(dir / "responses.csv", ds);
  write_embeddings(world_embeddings(world), dir / "ids.txt", dir / "vectors.bin");
  write_truth_json(world, dir / "truth.json");
  std::cout << "models " << world.theta.rows() << '\n'
            << "queries " << world.alpha.rows() << '\n'
            << "records " << ds.records.size() << '\n'
            << "dir " << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradFlags {
  std::uint64_t seed = 0;
  std::size_t configs = 10;
  bool ablation = false;
  double tolerance = 1e-4;
};

void add_gradcheck(CLI::App& app, GradFlags& f) {
  auto* cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences on toy configs");
  cmd->add_option("--seed", f.seed, "First toy seed")->capture_default_str();
  cmd->add_option("--configs", f.configs, "Number of random toy configurations")->capture_default_str();
  cmd->add_flag("--ablation", f.ablation, "Check the MLP encoder variant");
  cmd->add_option("--tolerance", f.tolerance, "Maximum accepted relative error")->capture_default_str();
}

int run_gradcheck(const GradFlags& f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < f.configs; ++i) {
    const std::uint64_t seed = f.seed + i;
    const ToyProblem toy = make_toy_problem(seed, f.ablation ? EncoderKind::mlp : EncoderKind::mixture);
    const GradientCheckReport report = check_gradients(toy.params, toy.samples);
    std::size_t coords = 0;
    for (const auto& t : report.tensors) coords += t.coordinates;
    std::cout << "config seed=" << seed << " coordinates=" << coords << " retries=" << report.retries
              << " max_relative_error=" << num(report.max_relative_error) << '\n';
    worst = std::max(worst, report.max_relative_error);
  }
  const bool ok = worst <= f.tolerance;
  std::cout << "max_relative_error " << num(worst) << '\n' << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitData;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeFlags {
  std::string checkpoint;
  std::string out;
  DataFlags data;
  SelectionFlags select;
  std::string communities;
  std::string kind = "theta";
};

void add_analyze(CLI::App& app, AnalyzeFlags& diff, AnalyzeFlags& comm, AnalyzeFlags& exp) {
  auto* cmd = app.add_subcommand("analyze", "Interpretability analyses of a trained checkpoint");
  cmd->require_subcommand(1);

  auto* d = cmd->add_subcommand("difficulty", "Per-benchmark observed accuracy against mean learned difficulty");
  d->add_option("--checkpoint", diff.checkpoint, "Checkpoint to analyse")->required();
  add_data_flags(d, diff.data, true, true);
  add_selection_flags(d, diff.select, false);
  d->add_option("--out", diff.out, "CSV (benchmark,accuracy,mean_beta,n_queries,n_records)")->required();

  auto* c = cmd->add_subcommand("communities", "Intra- and inter-community ability distances");
  c->add_option("--checkpoint", comm.checkpoint, "Checkpoint to analyse")->required();
  c->add_option("--communities", comm.communities, "JSON {\"communities\":[{\"name\",\"models\"}]}")->required();
  c->add_option("--out", comm.out, "CSV (community,n_members,intra,inter)")->required();

  auto* e = cmd->add_subcommand("export", "Export theta rows or per-query alpha vectors as CSV");
  e->add_option("--checkpoint", exp.checkpoint, "Checkpoint to export from")->required();
  e->add_option("--kind", exp.kind, "theta or alpha")->check(CLI::IsMember({"theta", "alpha"}))->capture_default_str();
  add_data_flags(e, exp.data, false, false);
  add_selection_flags(e, exp.select, true);
  e->add_option("--out", exp.out, "CSV path")->required();
}

int run_difficulty(const AnalyzeFlags& f) {
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  Inputs in = load_inputs(f.data);
  check_embed_dim(params, in);
  align_models(in.dataset, params);
  const auto queries = select_queries(in, f.select);
  const auto records = records_for(in.dataset, queries);
  const DifficultyCorrelation dc = difficulty_correlation(params, in.dataset, records, *in.embeddings);
  auto out = open_output(f.out);
  out << "benchmark,accuracy,mean_beta,n_queries,n_records\n";
  for (const auto& r : dc.rows) {
    out << csv::escape(r.benchmark) << ',' << num(r.accuracy) << ',' << num(r.mean_beta) << ',' << r.queries << ','
        << r.records << '\n';
  }
  out.close();
  if (!out) throw DataError("failed writing " + f.out);
  std::cout << "benchmarks " << dc.rows.size() << '\n' << "pearson " << num(dc.pearson) << '\n';
  return kExitOk;
}

int run_communities(const AnalyzeFlags& f) {
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  const auto specs = load_communities(f.communities, params.model_names);
  const auto distances = community_distances(params, specs);
  auto out = open_output(f.out);
  out << "community,n_members,intra,inter\n";
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const auto& d = distances[i];
    out << csv::escape(d.name) << ',' << specs[i].members.size() << ',' << num(d.intra) << ',' << num(d.inter)
        << '\n';
    std::cout << "community " << d.name << " intra " << num(d.intra) << " inter " << num(d.inter) << '\n';
  }
  out.close();
  if (!out) throw DataError("failed writing " + f.out);
  return kExitOk;
}

int run_export(const AnalyzeFlags& f) {
  const IrtNetParams params = load_checkpoint(f.checkpoint);
  if (f.kind == "theta") {
    write_theta_csv(params, f.out);
    std::cout << "rows " << params.num_models() << '\n';
    return kExitOk;
  }
  Inputs in = load_inputs(f.data);
  const auto& embeddings = embeddings_of(in);
  check_embed_dim(params, in);
  const auto queries = select_queries(in, f.select);
  write_alpha_csv(params, in.dataset.queries, queries, embeddings, f.out);
  std::cout << "rows " << queries.size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

void add_serve(CLI::App& app, serve::ServeConfig& c, std::string& ids, std::string& vectors) {
  auto* cmd = app.add_subcommand("serve", "Serve /health, /models, /route and /predict over HTTP");
  cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint to serve")->required();
  auto* i = cmd->add_option("--ids", ids, "Embedding store ids (enables query_id requests)");
  auto* v = cmd->add_option("--vectors", vectors, "Embedding store vectors");
  i->needs(v);
  v->needs(i);
  cmd->add_option("--host", c.host, "Bind address")->capture_default_str();
  cmd->add_option("--port", c.port, "Port (0 picks a free one)")->capture_default_str();
  cmd->add_option("--max-body", c.max_body_bytes, "Largest accepted request body in bytes")->capture_default_str();
}

int run_serve(serve::ServeConfig c, const std::string& ids, const std::string& vectors) {
  if (!ids.empty()) {
    c.ids = ids;
    c.vectors = vectors;
  }
  const serve::Service service = serve::Service::from_config(c);
  serve::Server server(service);
  const bool ok = server.listen(c.host, c.port, [&](int port) {
    std::cout << "listening " << c.host << ':' << port << std::endl;
  });
  if (!ok) {
    std::cerr << "irtnet: cannot listen on " << c.host << ':' << c.port << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"irtnet: IRT response model with a mixture-of-experts query encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "irtnet 0.1.0");

  TrainFlags train_flags;
  EvalFlags eval_flags;
  RouteFlags route_flags;
  PredictFlags predict_flags;
  SynthFlags synth_flags;
  GradFlags grad_flags;
  AnalyzeFlags diff_flags, comm_flags, export_flags;
  serve::ServeConfig serve_config;
  std::string serve_ids, serve_vectors;

  add_train(app, train_flags);
  add_eval(app, eval_flags);
  add_route(app, route_flags);
  add_predict(app, predict_flags);
  add_synth(app, synth_flags);
  add_gradcheck(app, grad_flags);
  add_analyze(app, diff_flags, comm_flags, export_flags);
  add_serve(app, serve_config, serve_ids, serve_vectors);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto chosen = [&](const char* name) { return app.got_subcommand(name); };
  try {
    if (chosen("train")) return run_train(train_flags);
    if (chosen("eval")) return run_eval(eval_flags);
    if (chosen("route")) return run_route(route_flags);
    if (chosen("predict-benchmark")) return run_predict(predict_flags);
    if (chosen("synth")) return run_synth(synth_flags);
    if (chosen("gradcheck")) return run_gradcheck(grad_flags);
    if (chosen("serve")) return run_serve(serve_config, serve_ids, serve_vectors);
    auto* analyze = app.get_subcommand("analyze");
    if (analyze->got_subcommand("difficulty")) return run_difficulty(diff_flags);
    if (analyze->got_subcommand("communities")) return run_communities(comm_flags);
    return run_export(export_flags);
  } catch (const UsageError& e) {
    std::cerr << "irtnet: " << e.what() << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    std::cerr << "irtnet: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "irtnet: " << e.what() << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "irtnet: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace irtnet::cli
