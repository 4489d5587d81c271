#include "irtnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "irtnet/csv.hpp"
#include "irtnet/error.hpp"

namespace irtnet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
  if (!(probability_clamp > 0.0 && probability_clamp < 0.5)) {
    throw std::invalid_argument("probability clamp must lie in (0, 0.5)");
  }
}

double bce_loss(double probability, int label, double clamp) {
  const double o = std::clamp(probability, clamp, 1.0 - clamp);
  return label != 0 ? -std::log(o) : -std::log1p(-o);
}

// -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z).
double bce_from_logit(double logit, int label) { return softplus(logit) - (label != 0 ? logit : 0.0); }

namespace {

std::vector<std::span<const double>> as_spans(std::span<const Vec> vs) {
  return std::vector<std::span<const double>>(vs.begin(), vs.end());
}

// Accumulates one expert's gradient for every query of the batch. `scales`
// carries the gate weight of this expert per query (1 for the shared expert).
void expert_backward(const Expert& expert, std::span<const ExpertTrace* const> traces, ConstVecs inputs,
                     std::span<const double> scales, ConstVecs d_outs, Expert& grad) {
  const std::size_t q_count = traces.size();
  std::vector<Vec> activated(q_count), d_pre(q_count, Vec(expert.hidden.out(), 0.0));
  std::vector<std::span<const double>> act_spans;
  std::vector<std::span<double>> d_pre_spans;
  for (std::size_t q = 0; q < q_count; ++q) {
    activated[q] = relu(traces[q]->pre);
    act_spans.emplace_back(activated[q]);
    d_pre_spans.emplace_back(d_pre[q]);
  }
  outer_add_batch(grad.output.weight, scales, d_outs, act_spans);
  for (std::size_t q = 0; q < q_count; ++q) axpy(scales[q], d_outs[q], grad.output.bias);

  matvec_transposed_add_batch(expert.output.weight, d_outs, d_pre_spans);
  for (std::size_t q = 0; q < q_count; ++q) {
    const Vec& pre = traces[q]->pre;
    for (std::size_t j = 0; j < pre.size(); ++j) d_pre[q][j] = pre[j] > 0.0 ? scales[q] * d_pre[q][j] : 0.0;
  }
  const Vec ones(q_count, 1.0);
  outer_add_batch(grad.hidden.weight, ones, as_spans(d_pre), inputs);
  for (std::size_t q = 0; q < q_count; ++q) axpy(1.0, d_pre[q], grad.hidden.bias);
}

}  // namespace

void backward_queries(const IrtNetParams& params, std::span<const ForwardTrace* const> traces,
                      std::span<const Vec> d_alphas, std::span<const double> d_betas, Tensors& grads,
                      ThreadPool* pool) {
  const Tensors& t = params.tensors;
  const std::size_t q_count = traces.size();
  if (d_alphas.size() != q_count || d_betas.size() != q_count) {
    throw DimensionError("backward: one upstream gradient per trace required");
  }
  for (std::size_t q = 0; q < q_count; ++q) {
    const ForwardTrace& tr = *traces[q];
    if (d_alphas[q].size() != t.alpha_head.out() || tr.hidden.size() != t.alpha_head.in() ||
        tr.input.size() != params.hp.embed_dim) {
      throw DimensionError("backward: trace does not match parameters");
    }
    if (params.kind == EncoderKind::mixture &&
        (tr.experts.size() != t.experts.size() || tr.gate_weights.size() != t.experts.size())) {
      throw DimensionError("backward: trace expert count does not match parameters");
    }
  }
  if (q_count == 0) return;

  std::vector<std::span<const double>> hiddens, inputs;
  for (const ForwardTrace* tr : traces) {
    hiddens.emplace_back(tr->hidden);
    inputs.emplace_back(tr->input);
  }
  const Vec ones(q_count, 1.0);
  outer_add_batch(grads.alpha_head.weight, ones, as_spans(d_alphas), hiddens);
  for (std::size_t q = 0; q < q_count; ++q) {
    axpy(1.0, d_alphas[q], grads.alpha_head.bias);
    axpy(d_betas[q], traces[q]->hidden, grads.beta_head.weight.row(0));
    grads.beta_head.bias[0] += d_betas[q];
  }

  std::vector<Vec> d_hidden(q_count, Vec(t.alpha_head.in(), 0.0));
  {
    std::vector<std::span<double>> outs(d_hidden.begin(), d_hidden.end());
    matvec_transposed_add_batch(t.alpha_head.weight, as_spans(d_alphas), outs);
  }
  for (std::size_t q = 0; q < q_count; ++q) axpy(d_betas[q], t.beta_head.weight.row(0), d_hidden[q]);
  const auto d_hidden_spans = as_spans(d_hidden);

  auto expert_traces = [&](std::size_t i) {
    std::vector<const ExpertTrace*> out(q_count);
    for (std::size_t q = 0; q < q_count; ++q) out[q] = i == 0 ? &traces[q]->shared : &traces[q]->experts[i - 1];
    return out;
  };

  if (params.kind == EncoderKind::mlp) {
    expert_backward(t.shared, expert_traces(0), inputs, ones, d_hidden_spans, grads.shared);
    return;
  }

  // Softmax Jacobian: dL/dlogit_i = w_i (dL/dw_i - sum_j w_j dL/dw_j).
  const std::size_t n_experts = t.experts.size();
  std::vector<Vec> d_logit(q_count, Vec(n_experts));
  for (std::size_t q = 0; q < q_count; ++q) {
    const ForwardTrace& tr = *traces[q];
    const Vec& w = tr.gate_weights;
    Vec d_weight(n_experts);
    double mean_d_weight = 0.0;
    for (std::size_t i = 0; i < n_experts; ++i) {
      d_weight[i] = dot(d_hidden[q], tr.experts[i].out);
      mean_d_weight += w[i] * d_weight[i];
    }
    for (std::size_t i = 0; i < n_experts; ++i) d_logit[q][i] = w[i] * (d_weight[i] - mean_d_weight);
  }
  outer_add_batch(grads.gate.weight, ones, as_spans(d_logit), inputs);
  for (std::size_t q = 0; q < q_count; ++q) axpy(1.0, d_logit[q], grads.gate.bias);

  parallel_for(pool, n_experts + 1, [&](std::size_t i) {
    if (i == 0) {
      expert_backward(t.shared, expert_traces(0), inputs, ones, d_hidden_spans, grads.shared);
      return;
    }
    Vec scales(q_count);
    for (std::size_t q = 0; q < q_count; ++q) scales[q] = traces[q]->gate_weights[i - 1];
    expert_backward(t.experts[i - 1], expert_traces(i), inputs, scales, d_hidden_spans, grads.experts[i - 1]);
  });
}

void backward_query(const IrtNetParams& params, const ForwardTrace& trace, std::span<const double> d_alpha,
                    double d_beta, Tensors& grads, ThreadPool* pool) {
  const ForwardTrace* traces[] = {&trace};
  const Vec d_alphas[] = {Vec(d_alpha.begin(), d_alpha.end())};
  const double d_betas[] = {d_beta};
  backward_queries(params, traces, d_alphas, d_betas, grads, pool);
}

double backward(const IrtNetParams& params, const ForwardTrace& trace, ModelId model, int label, Tensors& grads,
                double scale) {
  const auto theta = params.theta(model);
  const double o = sigmoid(response_logit(trace.alpha, trace.beta, theta));
  const double residual = o - (label != 0 ? 1.0 : 0.0);
  const double dz = scale * residual;
  axpy(dz, trace.alpha, grads.theta.row(model.index));
  Vec d_alpha(theta.begin(), theta.end());
  for (double& v : d_alpha) v *= dz;
  backward_query(params, trace, d_alpha, -dz, grads);
  return residual;
}

// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const Tensors& shape, const TrainConfig& config)
    : m_(zeros_like(shape)),
      v_(zeros_like(shape)),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {}

void AdamOptimizer::step(Tensors& params, const Tensors& grads) {
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p_views = tensor_views(params);
  const auto g_views = tensor_views(grads);
  auto m_views = tensor_views(m_);
  auto v_views = tensor_views(v_);
  if (p_views.size() != g_views.size()) throw DimensionError("adam: gradient layout mismatch");
  for (std::size_t k = 0; k < p_views.size(); ++k) {
    auto p = p_views[k].values;
    const auto g = g_views[k].values;
    auto m = m_views[k].values;
    auto v = v_views[k].values;
    if (p.size() != g.size()) throw DimensionError("adam: gradient shape mismatch for " + p_views[k].name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over a golden-ratio stride.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

struct QueryGroup {
  QueryId query;
  std::vector<std::pair<ModelId, int>> responses;
};

std::vector<QueryGroup> group_by_query(const std::vector<ResponseRecord>& records) {
  std::vector<QueryGroup> groups;
  std::unordered_map<std::uint32_t, std::size_t> slot;
  for (const auto& r : records) {
    auto [it, inserted] = slot.try_emplace(r.query.index, groups.size());
    if (inserted) groups.push_back(QueryGroup{r.query, {}});
    groups[it->second].responses.emplace_back(r.model, r.correct);
  }
  return groups;
}

void fill_zero(Tensors& t) {
  for (auto& v : tensor_views(t)) std::fill(v.values.begin(), v.values.end(), 0.0);
}

}  // namespace

EvalStats evaluate(const IrtNetParams& params, const std::vector<ResponseRecord>& records,
                   const QueryEmbeddings& embeddings, ThreadPool* pool) {
  EvalStats out;
  out.records = records.size();
  if (records.empty()) return out;
  const auto groups = group_by_query(records);

  struct Partial {
    double loss = 0.0;
    std::size_t correct = 0;
    Vec weights;
  };
  std::vector<Partial> partial(groups.size());
  parallel_for(pool, groups.size(), [&](std::size_t g) {
    const ForwardTrace tr = encode_query(params, embeddings[groups[g].query]);
    Partial& p = partial[g];
    for (const auto& [model, label] : groups[g].responses) {
      const double z = response_logit(tr.alpha, tr.beta, params.theta(model));
      p.loss += bce_from_logit(z, label);
      const int predicted = sigmoid(z) >= 0.5 ? 1 : 0;
      p.correct += predicted == label ? 1 : 0;
    }
    p.weights = tr.gate_weights;
  });

  std::size_t correct = 0;
  Vec mean_weights(params.balance_bias.size(), 0.0);
  for (const auto& p : partial) {
    out.loss += p.loss;
    correct += p.correct;
    if (!p.weights.empty()) axpy(1.0, p.weights, mean_weights);
  }
  out.loss /= static_cast<double>(records.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  for (double& w : mean_weights) w /= static_cast<double>(groups.size());
  out.gate_imbalance = gate_imbalance(mean_weights);
  return out;
}

TrainResult train(IrtNetParams params, const Dataset& dataset, const QueryEmbeddings& embeddings,
                  const DatasetSplit& split, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();

  if (embeddings.dim() != params.hp.embed_dim) {
    throw DimensionError("embedding dim " + std::to_string(embeddings.dim()) + " does not match model embed_dim " +
                         std::to_string(params.hp.embed_dim));
  }
  if (dataset.models.size() > params.num_models()) {
    throw DimensionError("dataset has more models than the parameter table");
  }
  const auto roles = split.roles(dataset.queries.size());
  const auto train_records = records_with_role(dataset.records, roles, SplitRole::train);
  if (train_records.empty()) throw DataError("train split has no records");
  auto selection_records = records_with_role(dataset.records, roles, SplitRole::validation);
  if (selection_records.empty()) selection_records = train_records;

  std::vector<QueryGroup> groups = group_by_query(train_records);
  ThreadPool pool(config.threads);

  TrainResult result;
  TrainReport& report = result.report;
  {
    const EvalStats initial = evaluate(params, selection_records, embeddings, &pool);
    report.initial_val_loss = initial.loss;
    report.initial_gate_imbalance = initial.gate_imbalance;
  }
  double best_loss = report.initial_val_loss;
  result.params = params;

  AdamOptimizer adam(params.tensors, config);
  Tensors grads = zeros_like(params.tensors);
  const bool mixture = params.kind == EncoderKind::mixture;
  const std::size_t n_experts = params.balance_bias.size();
  std::size_t epochs_since_best = 0;

  struct Entry {
    std::size_t group;
    std::size_t response;
  };
  std::vector<Entry> layout;
  layout.reserve(train_records.size());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto epoch_started = clock::now();
    std::mt19937_64 rng(derive_seed(config.seed, epoch));
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    layout.clear();
    for (std::size_t g : order) {
      for (std::size_t r = 0; r < groups[g].responses.size(); ++r) layout.push_back({g, r});
    }

    double epoch_loss = 0.0;
    Vec epoch_weights(n_experts, 0.0);
    for (std::size_t start = 0; start < layout.size(); start += config.batch_size) {
      const std::size_t stop = std::min(layout.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      fill_zero(grads);
      Vec weight_sum(n_experts, 0.0);

      // Contiguous runs of one query inside the batch become one encoder call each.
      std::vector<std::pair<std::size_t, std::size_t>> segments;
      for (std::size_t i = start; i < stop;) {
        std::size_t j = i;
        while (j < stop && layout[j].group == layout[i].group) ++j;
        segments.emplace_back(i, j);
        i = j;
      }
      std::vector<std::span<const double>> inputs;
      inputs.reserve(segments.size());
      for (const auto& [a, b] : segments) inputs.push_back(embeddings[groups[layout[a].group].query]);
      const std::vector<ForwardTrace> traces = encode_queries(params, inputs, &pool);

      std::vector<Vec> d_alphas(segments.size(), Vec(params.hp.ability_dim, 0.0));
      std::vector<double> d_betas(segments.size(), 0.0);
      std::vector<const ForwardTrace*> trace_ptrs;
      for (std::size_t s = 0; s < segments.size(); ++s) {
        const ForwardTrace& tr = traces[s];
        trace_ptrs.push_back(&tr);
        const QueryGroup& group = groups[layout[segments[s].first].group];
        for (std::size_t i = segments[s].first; i < segments[s].second; ++i) {
          const auto& [model, label] = group.responses[layout[i].response];
          const auto theta = params.theta(model);
          const double z = response_logit(tr.alpha, tr.beta, theta);
          epoch_loss += bce_from_logit(z, label);
          const double dz = (sigmoid(z) - label) * inv_batch;
          axpy(dz, tr.alpha, grads.theta.row(model.index));
          axpy(dz, theta, d_alphas[s]);
          d_betas[s] -= dz;
        }
        const auto count = static_cast<double>(segments[s].second - segments[s].first);
        if (mixture) axpy(count, tr.gate_weights, weight_sum);
      }
      backward_queries(params, trace_ptrs, d_alphas, d_betas, grads, &pool);

      adam.step(params.tensors, grads);
      if (mixture) {
        axpy(1.0, weight_sum, epoch_weights);
        for (double& w : weight_sum) w *= inv_batch;
        update_balance_bias(params.balance_bias, weight_sum, params.hp.bias_update_rate);
      }
    }

    const EvalStats val = evaluate(params, selection_records, embeddings, &pool);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(layout.size());
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    stats.gate_imbalance = val.gate_imbalance;
    if (mixture) {
      for (double& w : epoch_weights) w /= static_cast<double>(layout.size());
      stats.train_gate_imbalance = gate_imbalance(epoch_weights);
    }
    stats.seconds = std::chrono::duration<double>(clock::now() - epoch_started).count();
    report.epochs.push_back(stats);
    report.final_epoch = epoch;
    if (on_epoch) on_epoch(stats);

    if (val.loss < best_loss) {
      best_loss = val.loss;
      report.best_epoch = epoch;
      result.params = params;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= config.patience) {
      break;
    }
  }

  report.wall_seconds = std::chrono::duration<double>(clock::now() - started).count();
  return result;
}

TrainingLog::TrainingLog(const std::filesystem::path& path) : path_(path) {
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot write training log " + path_.string());
  out << "epoch,train_loss,val_loss,val_acc,seconds\n";
}

void TrainingLog::append(const EpochStats& s) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw DataError("cannot append to training log " + path_.string());
  out << s.epoch << ',' << csv::format_double(s.train_loss) << ',' << csv::format_double(s.val_loss) << ','
      << csv::format_double(s.val_accuracy) << ',' << csv::format_double(s.seconds) << '\n';
}

}  // namespace irtnet
