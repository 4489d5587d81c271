#include "irtnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "irtnet/training.hpp"

namespace irtnet {

double sample_loss(const IrtNetParams& params, std::span<const GradientSample> samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    const ForwardTrace tr = encode_query(params, s.embedding);
    total += bce_from_logit(response_logit(tr.alpha, tr.beta, params.theta(s.model)), s.label);
  }
  return total;
}

Tensors analytic_gradients(const IrtNetParams& params, std::span<const GradientSample> samples) {
  Tensors grads = zeros_like(params.tensors);
  for (const auto& s : samples) {
    const ForwardTrace tr = encode_query(params, s.embedding);
    backward(params, tr, s.model, s.label, grads);
  }
  return grads;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

// Moves every relu input that sits within `margin` of zero away from the kink
// by shifting the unit's bias. Returns true if anything moved.
bool shift_off_kinks(IrtNetParams& p, std::span<const GradientSample> samples, double margin) {
  bool moved = false;
  auto visit = [&](Expert& expert, const ExpertTrace& trace) {
    for (std::size_t j = 0; j < trace.pre.size(); ++j) {
      if (std::abs(trace.pre[j]) < margin) {
        expert.hidden.bias[j] += (trace.pre[j] >= 0.0 ? 4.0 : -4.0) * margin;
        moved = true;
      }
    }
  };
  for (const auto& s : samples) {
    const ForwardTrace tr = encode_query(p, s.embedding);
    visit(p.tensors.shared, tr.shared);
    for (std::size_t e = 0; e < tr.experts.size(); ++e) visit(p.tensors.experts[e], tr.experts[e]);
  }
  return moved;
}

std::vector<std::size_t> pick_coordinates(std::size_t size, double fraction, std::mt19937_64& rng) {
  std::vector<std::size_t> all(size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (fraction >= 1.0 || size == 0) return all;
  const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(size))));
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(count, size));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradientCheckReport check_gradients(const IrtNetParams& params, std::span<const GradientSample> samples,
                                    const GradientCheckOptions& options, const GradientFn& analytic) {
  IrtNetParams point = params;
  GradientCheckReport report;

  // A weight perturbation moves a relu input by up to step * |x|, so the
  // kink margin has to cover that reach as well.
  double max_input = 0.0;
  for (const auto& s : samples) {
    for (double v : s.embedding) max_input = std::max(max_input, std::abs(v));
  }
  const double margin = std::max(options.kink_margin, 2.0 * options.step * (1.0 + max_input));
  while (report.retries < options.max_retries && shift_off_kinks(point, samples, margin)) ++report.retries;

  const Tensors grads = analytic ? analytic(point, samples) : analytic_gradients(point, samples);
  const auto grad_views = tensor_views(grads);
  auto views = tensor_views(point.tensors);
  std::mt19937_64 rng(options.seed);

  for (std::size_t k = 0; k < views.size(); ++k) {
    TensorCheck check;
    check.name = views[k].name;
    auto values = views[k].values;
    for (std::size_t i : pick_coordinates(values.size(), options.coordinate_fraction, rng)) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = sample_loss(point, samples);
      values[i] = original - options.step;
      const double down = sample_loss(point, samples);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      check.max_relative_error = std::max(check.max_relative_error, relative_error(grad_views[k].values[i], numeric));
      ++check.coordinates;
    }
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.tensors.push_back(std::move(check));
  }
  return report;
}

Hyperparams toy_hyperparams() {
  Hyperparams hp;
  hp.embed_dim = 8;
  hp.num_experts = 3;
  hp.ability_dim = 5;
  hp.hidden_dim = 4;
  hp.expert_hidden = 4;
  return hp;
}

ToyProblem make_toy_problem(std::uint64_t seed, EncoderKind kind, std::size_t num_models, std::size_t num_samples) {
  ToyProblem toy;
  toy.params = init_params(toy_hyperparams(), num_models, seed, kind);
  std::mt19937_64 rng(derive_seed(seed, 0x70F));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  if (kind == EncoderKind::mixture) {
    for (double& b : toy.params.balance_bias) b = 0.1 * normal(rng);
  }
  for (std::size_t s = 0; s < num_samples; ++s) {
    GradientSample sample;
    sample.model = ModelId{static_cast<std::uint32_t>(s % num_models)};
    sample.embedding.resize(toy.params.hp.embed_dim);
    for (double& v : sample.embedding) v = normal(rng);
    sample.label = coin(rng) ? 1 : 0;
    toy.samples.push_back(std::move(sample));
  }
  return toy;
}

}  // namespace irtnet
