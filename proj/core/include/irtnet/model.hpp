#pragma once

// IrtNet forward computation.
//
//   w     = softmax(gate(v) + balance_bias)
//   h     = shared(v) + sum_i w_i * expert_i(v)        expert: relu two-layer map
//   alpha = alpha_head(h),  beta = beta_head(h)
//   P(correct | m, q) = sigmoid(alpha . theta_m - beta)
//
// The MLP ablation replaces the mixture with one feedforward map of matching
// parameter count; everything downstream of h is shared.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "irtnet/data.hpp"
#include "irtnet/linalg.hpp"
#include "irtnet/parallel.hpp"

namespace irtnet {

struct Hyperparams {
  std::size_t ability_dim = 232;  // d, length of theta_m and alpha_q
  std::size_t num_experts = 40;   // N routed experts
  std::size_t embed_dim = 768;
  std::size_t expert_hidden = 512;
  std::size_t hidden_dim = 256;  // length of h_q
  double bias_update_rate = 1e-3;

  void validate() const;
  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// y = W x + b, W stored out x in.
struct Linear {
  Mat weight;
  Vec bias;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  friend bool operator==(const Linear&, const Linear&) = default;
};

/// relu(hidden(x)) -> output.
struct Expert {
  Linear hidden;
  Linear output;
  friend bool operator==(const Expert&, const Expert&) = default;
};

enum class EncoderKind : std::uint8_t { mixture, mlp };

/// Every learnable tensor. Gradients use the same type.
struct Tensors {
  Mat theta;  // n x d
  Linear gate;
  Expert shared;  // the whole encoder in the MLP ablation
  std::vector<Expert> experts;
  Linear alpha_head;
  Linear beta_head;
  friend bool operator==(const Tensors&, const Tensors&) = default;
};

struct TensorView {
  std::string name;
  std::span<double> values;
};

struct ConstTensorView {
  std::string name;
  std::span<const double> values;
};

/// Flat views in checkpoint order: theta, gate, shared, experts, heads.
/// Each Linear contributes ".weight" then ".bias".
std::vector<TensorView> tensor_views(Tensors& t);
std::vector<ConstTensorView> tensor_views(const Tensors& t);

Tensors zeros_like(const Tensors& t);
std::size_t parameter_count(const Tensors& t);

struct IrtNetParams {
  Hyperparams hp;
  EncoderKind kind = EncoderKind::mixture;
  std::vector<std::string> model_names;
  Tensors tensors;
  Vec balance_bias;  // length N; steered by update_balance_bias, never by gradients

  std::size_t num_models() const noexcept { return tensors.theta.rows(); }
  std::span<const double> theta(ModelId m) const;
  friend bool operator==(const IrtNetParams&, const IrtNetParams&) = default;
};

struct QueryCharacteristics {
  Vec alpha;
  double beta = 0.0;
};

struct ExpertTrace {
  Vec pre;  // hidden pre-activation
  Vec out;
};

struct ForwardTrace {
  Vec input;
  Vec gate_logits;   // gate(v), before the balance bias
  Vec gate_weights;  // softmax(gate_logits + balance_bias)
  ExpertTrace shared;
  std::vector<ExpertTrace> experts;
  Vec hidden;
  Vec alpha;
  double beta = 0.0;
  // Filled by predict_all_models: z_m = alpha . theta_m - beta and sigmoid(z_m).
  Vec logits;
  Vec probabilities;

  QueryCharacteristics characteristics() const { return {alpha, beta}; }
};

/// Runs the encoder once. Experts may be evaluated on `pool` in parallel.
ForwardTrace encode_query(const IrtNetParams& params, std::span<const double> embedding,
                          ThreadPool* pool = nullptr);

double response_logit(std::span<const double> alpha, double beta, std::span<const double> theta);
double respond(std::span<const double> alpha, double beta, std::span<const double> theta);

double predict(const IrtNetParams& params, ModelId model, std::span<const double> embedding);

/// One encoder pass, n response evaluations.
Vec predict_all_models(const IrtNetParams& params, std::span<const double> embedding,
                       ForwardTrace* trace = nullptr);

/// Encodes a batch with one pass over each weight matrix; traces[i] is
/// bit-identical to encode_query(params, embeddings[i]). Counts as
/// embeddings.size() encoder calls.
std::vector<ForwardTrace> encode_queries(const IrtNetParams& params, ConstVecs embeddings, ThreadPool* pool = nullptr);

/// Process-wide count of encoded queries.
std::uint64_t encoder_invocations() noexcept;

/// theta ~ N(0, (1/sqrt(d))^2); linear maps and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// balance bias zero. Deterministic per seed.
IrtNetParams init_params(const Hyperparams& hp, std::size_t num_models, std::uint64_t seed,
                         EncoderKind kind = EncoderKind::mixture);

/// Gate + shared + N routed experts.
std::size_t moe_encoder_parameter_count(const Hyperparams& hp);
/// embed_dim -> width -> hidden_dim.
std::size_t mlp_encoder_parameter_count(const Hyperparams& hp, std::size_t width);
/// Width whose MLP count is nearest the MoE count; throws std::domain_error if
/// the relative gap exceeds 0.5%.
std::size_t mlp_ablation_width(const Hyperparams& hp);
std::size_t encoder_parameter_count(const IrtNetParams& params);

IrtNetParams make_mlp_ablation(const Hyperparams& hp, std::size_t num_models, std::uint64_t seed);

/// bias_i -= rate * sign(mean_weight_i - 1/N).
void update_balance_bias(Vec& bias, std::span<const double> mean_weights, double rate);

/// max_i |mean_weight_i - 1/N|.
double gate_imbalance(std::span<const double> mean_weights);

}  // namespace irtnet
