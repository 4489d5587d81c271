#include "irtnet/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>

#include "irtnet/error.hpp"

namespace irtnet {
namespace {

std::atomic<std::uint64_t> g_encoder_calls{0};

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t expert_count(std::size_t in, std::size_t hidden, std::size_t out) {
  return linear_count(in, hidden) + linear_count(hidden, out);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Linear l{Mat(out, in), Vec(out)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& w : l.weight.values()) w = u(rng);
  for (double& b : l.bias) b = u(rng);
  return l;
}

Expert make_expert(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  Expert e;
  e.hidden = make_linear(in, hidden, rng);
  e.output = make_linear(hidden, out, rng);
  return e;
}

template <class T>
std::vector<std::span<const double>> const_spans(std::vector<T>& vs, Vec T::*member) {
  std::vector<std::span<const double>> out;
  out.reserve(vs.size());
  for (auto& v : vs) out.emplace_back(v.*member);
  return out;
}

void run_expert(const Expert& e, ConstVecs xs, std::span<ExpertTrace* const> traces) {
  const std::size_t q_count = xs.size();
  std::vector<std::span<double>> pres, outs;
  pres.reserve(q_count);
  outs.reserve(q_count);
  for (ExpertTrace* t : traces) {
    t->pre.resize(e.hidden.out());
    t->out.resize(e.output.out());
    pres.emplace_back(t->pre);
    outs.emplace_back(t->out);
  }
  affine_batch(e.hidden.weight, e.hidden.bias, xs, pres);
  std::vector<Vec> activated(q_count);
  std::vector<std::span<const double>> act_spans;
  act_spans.reserve(q_count);
  for (std::size_t q = 0; q < q_count; ++q) {
    activated[q] = relu(traces[q]->pre);
    act_spans.emplace_back(activated[q]);
  }
  affine_batch(e.output.weight, e.output.bias, act_spans, outs);
}

void push_linear(std::vector<TensorView>& out, const std::string& name, Linear& l) {
  out.push_back({name + ".weight", l.weight.values()});
  out.push_back({name + ".bias", l.bias});
}

void push_expert(std::vector<TensorView>& out, const std::string& name, Expert& e) {
  push_linear(out, name + ".hidden", e.hidden);
  push_linear(out, name + ".output", e.output);
}

Linear zeros_like(const Linear& l) { return Linear{Mat(l.weight.rows(), l.weight.cols()), Vec(l.bias.size())}; }
Expert zeros_like(const Expert& e) { return Expert{zeros_like(e.hidden), zeros_like(e.output)}; }

}  // namespace

void Hyperparams::validate() const {
  if (ability_dim == 0 || num_experts == 0 || embed_dim == 0 || expert_hidden == 0 || hidden_dim == 0) {
    throw std::invalid_argument("hyperparameters must all be positive");
  }
  if (!(bias_update_rate >= 0.0)) throw std::invalid_argument("bias update rate must be non-negative");
}

std::vector<TensorView> tensor_views(Tensors& t) {
  std::vector<TensorView> out;
  out.push_back({"theta", t.theta.values()});
  push_linear(out, "gate", t.gate);
  push_expert(out, "shared", t.shared);
  for (std::size_t i = 0; i < t.experts.size(); ++i) push_expert(out, "expert" + std::to_string(i), t.experts[i]);
  push_linear(out, "alpha_head", t.alpha_head);
  push_linear(out, "beta_head", t.beta_head);
  return out;
}

std::vector<ConstTensorView> tensor_views(const Tensors& t) {
  auto mutable_views = tensor_views(const_cast<Tensors&>(t));
  std::vector<ConstTensorView> out;
  out.reserve(mutable_views.size());
  for (auto& v : mutable_views) out.push_back({std::move(v.name), v.values});
  return out;
}

Tensors zeros_like(const Tensors& t) {
  Tensors z;
  z.theta = Mat(t.theta.rows(), t.theta.cols());
  z.gate = zeros_like(t.gate);
  z.shared = zeros_like(t.shared);
  z.experts.reserve(t.experts.size());
  for (const auto& e : t.experts) z.experts.push_back(zeros_like(e));
  z.alpha_head = zeros_like(t.alpha_head);
  z.beta_head = zeros_like(t.beta_head);
  return z;
}

std::size_t parameter_count(const Tensors& t) {
  std::size_t n = 0;
  for (const auto& v : tensor_views(t)) n += v.values.size();
  return n;
}

std::span<const double> IrtNetParams::theta(ModelId m) const {
  if (m.index >= num_models()) {
    throw std::out_of_range("model index " + std::to_string(m.index) + " out of range (n=" +
                            std::to_string(num_models()) + ")");
  }
  return tensors.theta.row(m.index);
}

std::vector<ForwardTrace> encode_queries(const IrtNetParams& params, ConstVecs embeddings, ThreadPool* pool) {
  const Hyperparams& hp = params.hp;
  for (const auto& v : embeddings) {
    if (v.size() != hp.embed_dim) {
      throw DimensionError("query embedding has length " + std::to_string(v.size()) + ", expected " +
                           std::to_string(hp.embed_dim));
    }
  }
  g_encoder_calls.fetch_add(embeddings.size(), std::memory_order_relaxed);
  const Tensors& t = params.tensors;
  const std::size_t q_count = embeddings.size();

  std::vector<ForwardTrace> traces(q_count);
  for (std::size_t q = 0; q < q_count; ++q) traces[q].input.assign(embeddings[q].begin(), embeddings[q].end());

  auto expert_traces = [&](std::size_t i) {
    std::vector<ExpertTrace*> out(q_count);
    for (std::size_t q = 0; q < q_count; ++q) out[q] = i == 0 ? &traces[q].shared : &traces[q].experts[i - 1];
    return out;
  };

  if (params.kind == EncoderKind::mixture) {
    std::vector<std::span<double>> logits;
    for (auto& tr : traces) {
      tr.gate_logits.resize(t.gate.out());
      tr.experts.resize(t.experts.size());
      logits.emplace_back(tr.gate_logits);
    }
    affine_batch(t.gate.weight, t.gate.bias, embeddings, logits);
    for (auto& tr : traces) {
      Vec biased = tr.gate_logits;
      axpy(1.0, params.balance_bias, biased);
      tr.gate_weights = softmax(biased);
    }
    parallel_for(pool, t.experts.size() + 1, [&](std::size_t i) {
      run_expert(i == 0 ? t.shared : t.experts[i - 1], embeddings, expert_traces(i));
    });
    for (auto& tr : traces) {
      tr.hidden = tr.shared.out;
      for (std::size_t i = 0; i < tr.experts.size(); ++i) axpy(tr.gate_weights[i], tr.experts[i].out, tr.hidden);
    }
  } else {
    run_expert(t.shared, embeddings, expert_traces(0));
    for (auto& tr : traces) tr.hidden = tr.shared.out;
  }

  std::vector<std::span<double>> alphas, betas;
  for (auto& tr : traces) {
    tr.alpha.resize(t.alpha_head.out());
    alphas.emplace_back(tr.alpha);
    betas.emplace_back(&tr.beta, 1);
  }
  const auto hiddens = const_spans(traces, &ForwardTrace::hidden);
  affine_batch(t.alpha_head.weight, t.alpha_head.bias, hiddens, alphas);
  affine_batch(t.beta_head.weight, t.beta_head.bias, hiddens, betas);
  return traces;
}

ForwardTrace encode_query(const IrtNetParams& params, std::span<const double> embedding, ThreadPool* pool) {
  const std::span<const double> one[] = {embedding};
  return std::move(encode_queries(params, one, pool).front());
}

double response_logit(std::span<const double> alpha, double beta, std::span<const double> theta) {
  return dot(alpha, theta) - beta;
}

double respond(std::span<const double> alpha, double beta, std::span<const double> theta) {
  return sigmoid(response_logit(alpha, beta, theta));
}

double predict(const IrtNetParams& params, ModelId model, std::span<const double> embedding) {
  const auto theta = params.theta(model);
  const ForwardTrace tr = encode_query(params, embedding);
  return respond(tr.alpha, tr.beta, theta);
}

Vec predict_all_models(const IrtNetParams& params, std::span<const double> embedding, ForwardTrace* trace) {
  ForwardTrace tr = encode_query(params, embedding);
  const std::size_t n = params.num_models();
  tr.logits.resize(n);
  tr.probabilities.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    tr.logits[m] = response_logit(tr.alpha, tr.beta, params.tensors.theta.row(m));
    tr.probabilities[m] = sigmoid(tr.logits[m]);
  }
  Vec out = tr.probabilities;
  if (trace != nullptr) *trace = std::move(tr);
  return out;
}

std::uint64_t encoder_invocations() noexcept { return g_encoder_calls.load(std::memory_order_relaxed); }

IrtNetParams init_params(const Hyperparams& hp, std::size_t num_models, std::uint64_t seed, EncoderKind kind) {
  hp.validate();
  if (num_models == 0) throw std::invalid_argument("need at least one model");

  std::mt19937_64 rng(seed);
  IrtNetParams p;
  p.hp = hp;
  p.kind = kind;
  for (std::size_t m = 0; m < num_models; ++m) p.model_names.push_back("model_" + std::to_string(m));

  Tensors& t = p.tensors;
  t.theta = Mat(num_models, hp.ability_dim);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(hp.ability_dim)));
  for (double& v : t.theta.values()) v = normal(rng);

  if (kind == EncoderKind::mixture) {
    t.gate = make_linear(hp.embed_dim, hp.num_experts, rng);
    t.shared = make_expert(hp.embed_dim, hp.expert_hidden, hp.hidden_dim, rng);
    t.experts.reserve(hp.num_experts);
    for (std::size_t i = 0; i < hp.num_experts; ++i) {
      t.experts.push_back(make_expert(hp.embed_dim, hp.expert_hidden, hp.hidden_dim, rng));
    }
    p.balance_bias.assign(hp.num_experts, 0.0);
  } else {
    t.gate = Linear{Mat(0, hp.embed_dim), Vec{}};
    t.shared = make_expert(hp.embed_dim, mlp_ablation_width(hp), hp.hidden_dim, rng);
  }
  t.alpha_head = make_linear(hp.hidden_dim, hp.ability_dim, rng);
  t.beta_head = make_linear(hp.hidden_dim, 1, rng);
  return p;
}

std::size_t moe_encoder_parameter_count(const Hyperparams& hp) {
  return linear_count(hp.embed_dim, hp.num_experts) +
         (hp.num_experts + 1) * expert_count(hp.embed_dim, hp.expert_hidden, hp.hidden_dim);
}

std::size_t mlp_encoder_parameter_count(const Hyperparams& hp, std::size_t width) {
  return expert_count(hp.embed_dim, width, hp.hidden_dim);
}

std::size_t mlp_ablation_width(const Hyperparams& hp) {
  hp.validate();
  // count(H) = H * (embed_dim + 1 + hidden_dim) + hidden_dim
  const double target = static_cast<double>(moe_encoder_parameter_count(hp));
  const double per_unit = static_cast<double>(hp.embed_dim + 1 + hp.hidden_dim);
  const double exact = (target - static_cast<double>(hp.hidden_dim)) / per_unit;
  const auto width = static_cast<std::size_t>(std::max(1.0, std::round(exact)));
  const double achieved = static_cast<double>(mlp_encoder_parameter_count(hp, width));
  if (std::abs(achieved - target) / target > 0.005) {
    throw std::domain_error("no MLP width matches the mixture encoder's " +
                            std::to_string(static_cast<std::size_t>(target)) +
                            " parameters within 0.5%; nearest achievable count is " +
                            std::to_string(static_cast<std::size_t>(achieved)) + " (width " +
                            std::to_string(width) + ")");
  }
  return width;
}

std::size_t encoder_parameter_count(const IrtNetParams& params) {
  const Tensors& t = params.tensors;
  std::size_t n = t.gate.weight.size() + t.gate.bias.size();
  auto add_expert = [&](const Expert& e) {
    n += e.hidden.weight.size() + e.hidden.bias.size() + e.output.weight.size() + e.output.bias.size();
  };
  add_expert(t.shared);
  for (const auto& e : t.experts) add_expert(e);
  return n;
}

IrtNetParams make_mlp_ablation(const Hyperparams& hp, std::size_t num_models, std::uint64_t seed) {
  return init_params(hp, num_models, seed, EncoderKind::mlp);
}

void update_balance_bias(Vec& bias, std::span<const double> mean_weights, double rate) {
  if (bias.size() != mean_weights.size()) throw DimensionError("balance bias / gate weight length mismatch");
  const double target = 1.0 / static_cast<double>(bias.size());
  for (std::size_t i = 0; i < bias.size(); ++i) {
    const double excess = mean_weights[i] - target;
    if (excess > 0.0) {
      bias[i] -= rate;
    } else if (excess < 0.0) {
      bias[i] += rate;
    }
  }
}

double gate_imbalance(std::span<const double> mean_weights) {
  if (mean_weights.empty()) return 0.0;
  const double target = 1.0 / static_cast<double>(mean_weights.size());
  double worst = 0.0;
  for (double w : mean_weights) worst = std::max(worst, std::abs(w - target));
  return worst;
}

}  // namespace irtnet
