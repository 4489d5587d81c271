#pragma once

// Central-difference verification of the analytic gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "irtnet/model.hpp"

namespace irtnet {

struct GradientSample {
  ModelId model;
  Vec embedding;
  int label = 0;
};

/// Sum of BCE over the samples.
double sample_loss(const IrtNetParams& params, std::span<const GradientSample> samples);
/// Analytic gradient of sample_loss.
Tensors analytic_gradients(const IrtNetParams& params, std::span<const GradientSample> samples);

using GradientFn = std::function<Tensors(const IrtNetParams&, std::span<const GradientSample>)>;

struct GradientCheckOptions {
  double step = 1e-5;
  /// Fraction of coordinates per tensor to check; 1 checks everything. At
  /// least one coordinate per non-empty tensor is always checked.
  double coordinate_fraction = 1.0;
  std::uint64_t seed = 0;
  /// A relu input closer to zero than this triggers a shifted retry.
  double kink_margin = 1e-6;
  std::size_t max_retries = 20;
};

struct TensorCheck {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
};

struct GradientCheckReport {
  std::vector<TensorCheck> tensors;
  double max_relative_error = 0.0;
  std::size_t retries = 0;  // kink shifts applied before checking
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Never mutates `params`; works on a private copy. `analytic` defaults to
/// analytic_gradients and exists so a corrupted implementation can be fed in.
GradientCheckReport check_gradients(const IrtNetParams& params, std::span<const GradientSample> samples,
                                    const GradientCheckOptions& options = {}, const GradientFn& analytic = {});

/// Config used for exhaustive checks: embed_dim 8, N 3, d 5, h_dim 4,
/// expert_hidden 4, two models.
Hyperparams toy_hyperparams();

/// Random toy problem: parameters plus `num_samples` labelled samples.
struct ToyProblem {
  IrtNetParams params;
  std::vector<GradientSample> samples;
};
ToyProblem make_toy_problem(std::uint64_t seed, EncoderKind kind = EncoderKind::mixture,
                            std::size_t num_models = 2, std::size_t num_samples = 4);

}  // namespace irtnet
