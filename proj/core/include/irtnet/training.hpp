#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "irtnet/data.hpp"
#include "irtnet/embeddings.hpp"
#include "irtnet/model.hpp"
#include "irtnet/parallel.hpp"

namespace irtnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;
  double probability_clamp = 1e-7;
  std::size_t threads = 1;  // 0 = hardware concurrency; results never depend on it

  void validate() const;
};

/// Clamped cross-entropy on a probability, for reporting.
double bce_loss(double probability, int label, double clamp = 1e-7);
/// softplus(z) - y z; the form used for training.
double bce_from_logit(double logit, int label);

/// Upstream gradients for one query: dL/dalpha and dL/dbeta, backpropagated
/// through heads, experts and gate into `grads`. Each routed expert's
/// gradient is written by exactly one task, so running on `pool` is
/// order-independent.
void backward_query(const IrtNetParams& params, const ForwardTrace& trace, std::span<const double> d_alpha,
                    double d_beta, Tensors& grads, ThreadPool* pool = nullptr);

/// backward_query for a batch of traces in one pass over each weight matrix.
/// Every gradient element accumulates the queries in order, so the result is
/// bit-identical to calling backward_query on each trace in turn.
void backward_queries(const IrtNetParams& params, std::span<const ForwardTrace* const> traces,
                      std::span<const Vec> d_alphas, std::span<const double> d_betas, Tensors& grads,
                      ThreadPool* pool = nullptr);

/// Gradient of `scale * bce(sigmoid(alpha . theta_m - beta), y)` accumulated into `grads`.
/// Returns o - y.
double backward(const IrtNetParams& params, const ForwardTrace& trace, ModelId model, int label, Tensors& grads,
                double scale = 1.0);

/// Adam over every learnable tensor; balance_bias is not part of the state.
class AdamOptimizer {
 public:
  AdamOptimizer(const Tensors& shape, const TrainConfig& config);
  void step(Tensors& params, const Tensors& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  Tensors m_;
  Tensors v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double gate_imbalance = 0.0;        // on validation queries
  double train_gate_imbalance = 0.0;  // record-weighted mean gate weights over the epoch's batches
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_val_loss = 0.0;
  double initial_gate_imbalance = 0.0;
  std::size_t best_epoch = 0;  // 0 = initial parameters were never beaten
  std::size_t final_epoch = 0;
  double wall_seconds = 0.0;
};

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double gate_imbalance = 0.0;
  std::size_t records = 0;
};

/// Mean BCE, correctness accuracy (p >= 0.5 -> 1) and gate imbalance over `records`.
EvalStats evaluate(const IrtNetParams& params, const std::vector<ResponseRecord>& records,
                   const QueryEmbeddings& embeddings, ThreadPool* pool = nullptr);

using EpochCallback = std::function<void(const EpochStats&)>;

struct TrainResult {
  IrtNetParams params;  // best validation loss
  TrainReport report;
};

/// Adam on mean per-batch BCE. Each epoch shuffles train queries with a seed
/// derived from (config.seed, epoch) and lays their records out query by
/// query before cutting batches, so each query is encoded once per batch it
/// touches. The balance bias is updated after every batch.
TrainResult train(IrtNetParams params, const Dataset& dataset, const QueryEmbeddings& embeddings,
                  const DatasetSplit& split, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Appends epochs to a `epoch,train_loss,val_loss,val_acc,seconds` CSV.
class TrainingLog {
 public:
  explicit TrainingLog(const std::filesystem::path& path);
  void append(const EpochStats& stats);

 private:
  std::filesystem::path path_;
};

/// Per-epoch shuffle seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace irtnet
