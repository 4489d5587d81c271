#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "irtnet/error.hpp"
#include "irtnet/model.hpp"
#include "test_support.hpp"

using namespace irtnet;
using irtnet::testing::random_vec;

namespace {

Hyperparams small_hp() {
  Hyperparams hp;
  hp.embed_dim = 8;
  hp.num_experts = 3;
  hp.hidden_dim = 4;
  hp.ability_dim = 5;
  hp.expert_hidden = 6;
  return hp;
}

// Independent straight-line encoder, written against the raw tensors.
std::vector<double> lin(const Linear& l, const std::vector<double>& x) {
  std::vector<double> y(l.weight.rows());
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = l.bias[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += l.weight(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

std::vector<double> expert(const Expert& e, const std::vector<double>& x) {
  auto h = lin(e.hidden, x);
  for (auto& v : h) v = v > 0 ? v : 0;
  return lin(e.output, h);
}

struct Reference {
  std::vector<double> weights, hidden, alpha;
  double beta;
};

Reference reference_encode(const IrtNetParams& p, const std::vector<double>& v) {
  Reference out;
  out.hidden = expert(p.tensors.shared, v);
  if (p.kind == EncoderKind::mixture) {
    auto g = lin(p.tensors.gate, v);
    double mx = -1e300;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += p.balance_bias[i];
      mx = std::max(mx, g[i]);
    }
    double z = 0;
    for (auto& x : g) z += (x = std::exp(x - mx));
    for (auto& x : g) x /= z;
    out.weights = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto e = expert(p.tensors.experts[i], v);
      for (std::size_t j = 0; j < e.size(); ++j) out.hidden[j] += g[i] * e[j];
    }
  }
  out.alpha = lin(p.tensors.alpha_head, out.hidden);
  out.beta = lin(p.tensors.beta_head, out.hidden)[0];
  return out;
}

void expect_close(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

IrtNetParams zero_params(const Hyperparams& hp, std::size_t n) {
  IrtNetParams p = init_params(hp, n, 0);
  for (auto& view : tensor_views(p.tensors)) std::fill(view.values.begin(), view.values.end(), 0.0);
  return p;
}

}  // namespace

TEST(Hyperparams, Validation) {
  Hyperparams hp;
  EXPECT_NO_THROW(hp.validate());
  hp.num_experts = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
}

TEST(Encode, ZeroParametersGiveZeroOutputs) {
  const auto p = zero_params(small_hp(), 3);
  std::mt19937_64 rng(1);
  const auto t = encode_query(p, random_vec(rng, 8));
  for (double h : t.hidden) EXPECT_EQ(h, 0.0);
  for (double a : t.alpha) EXPECT_EQ(a, 0.0);
  EXPECT_EQ(t.beta, 0.0);
}

TEST(Encode, SingleExpertDegeneratesToSharedPlusExpert) {
  Hyperparams hp = small_hp();
  hp.num_experts = 1;
  const auto p = init_params(hp, 2, 4);
  std::mt19937_64 rng(2);
  const Vec v = random_vec(rng, 8);
  const auto t = encode_query(p, v);
  ASSERT_EQ(t.gate_weights.size(), 1u);
  EXPECT_EQ(t.gate_weights[0], 1.0);
  const auto s = expert(p.tensors.shared, v), e = expert(p.tensors.experts[0], v);
  for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(t.hidden[j], s[j] + e[j], 1e-14);
}

TEST(Encode, MatchesStraightLineReimplementation) {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = init_params(small_hp(), 2, seed);
    p.balance_bias = random_vec(rng, 3, 0.5);
    const Vec v = random_vec(rng, 8);
    const auto t = encode_query(p, v);
    const auto r = reference_encode(p, v);
    expect_close(t.gate_weights, r.weights, 1e-12);
    expect_close(t.hidden, r.hidden, 1e-12);
    expect_close(t.alpha, r.alpha, 1e-12);
    EXPECT_NEAR(t.beta, r.beta, 1e-12);
  }
}

TEST(Encode, AblationMatchesStraightLineReimplementation) {
  std::mt19937_64 rng(4);
  const auto p = make_mlp_ablation(small_hp(), 3, 9);
  EXPECT_EQ(p.kind, EncoderKind::mlp);
  EXPECT_TRUE(p.tensors.experts.empty());
  for (int i = 0; i < 10; ++i) {
    const Vec v = random_vec(rng, 8);
    const auto t = encode_query(p, v);
    const auto r = reference_encode(p, v);
    expect_close(t.alpha, r.alpha, 1e-12);
    EXPECT_NEAR(t.beta, r.beta, 1e-12);
  }
}

TEST(Encode, BatchIsBitIdenticalToSingleQueries) {
  std::mt19937_64 rng(5);
  for (auto kind : {EncoderKind::mixture, EncoderKind::mlp}) {
    auto p = init_params(small_hp(), 2, 6, kind);
    if (kind == EncoderKind::mixture) p.balance_bias = random_vec(rng, 3, 0.5);
    std::vector<Vec> vs;
    for (int i = 0; i < 7; ++i) vs.push_back(random_vec(rng, 8));
    std::vector<std::span<const double>> views(vs.begin(), vs.end());
    ThreadPool pool(3);
    const auto batch = encode_queries(p, views, &pool);
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const auto single = encode_query(p, vs[i]);
      EXPECT_EQ(batch[i].gate_weights, single.gate_weights);
      EXPECT_EQ(batch[i].hidden, single.hidden);
      EXPECT_EQ(batch[i].alpha, single.alpha);
      EXPECT_EQ(batch[i].beta, single.beta);
    }
  }
}

TEST(Encode, GateWeightsArePositiveAndSumToOne) {
  std::mt19937_64 rng(6);
  auto p = init_params(small_hp(), 2, 1);
  for (int i = 0; i < 200; ++i) {
    p.balance_bias = random_vec(rng, 3, 5.0);
    const auto t = encode_query(p, random_vec(rng, 8, 10.0));
    EXPECT_NEAR(std::accumulate(t.gate_weights.begin(), t.gate_weights.end(), 0.0), 1.0, 1e-12);
    for (double w : t.gate_weights) EXPECT_GT(w, 0.0);
  }
}

TEST(Encode, WrongEmbeddingLengthThrows) {
  const auto p = init_params(small_hp(), 2, 1);
  EXPECT_THROW(encode_query(p, Vec(7, 0.0)), DimensionError);
}

TEST(Respond, ReferenceValues) {
  EXPECT_EQ(respond(Vec{1, 2}, 5.0, Vec{1, 2}), 0.5);
  EXPECT_EQ(respond(Vec{0, 0}, 1.3, Vec{9, -9}), sigmoid(-1.3));
  EXPECT_NEAR(respond(Vec{1, 0, 0}, 1.0, Vec{2, 5, -3}), 0.7310585786, 1e-10);
  EXPECT_THROW(respond(Vec{1, 0}, 0.0, Vec{1}), DimensionError);
}

TEST(Respond, MonotoneInAbilityAndDifficulty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> step(1e-3, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Vec a = random_vec(rng, 5), t = random_vec(rng, 5);
    const double b = random_vec(rng, 1)[0];
    const double base = respond(a, b, t);
    EXPECT_GT(respond(a, b - step(rng), t), base);
    EXPECT_LT(respond(a, b + step(rng), t), base);
    Vec t2 = t;
    const double s = step(rng);
    // Moving theta along alpha raises alpha . theta.
    for (std::size_t j = 0; j < 5; ++j) t2[j] += s * a[j];
    EXPECT_GT(respond(a, b, t2), base);
  }
}

TEST(Respond, ScaleTradeIdentity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> cdist(0.1, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = random_vec(rng, 5), t = random_vec(rng, 5);
    const double b = random_vec(rng, 1)[0];
    const double c = cdist(rng);
    Vec ca = a, tc = t;
    for (auto& x : ca) x *= c;
    for (auto& x : tc) x /= c;
    EXPECT_NEAR(respond(ca, b, tc), respond(a, b, t), 1e-12);
  }
}

TEST(Predict, DeterministicAndComposition) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = init_params(small_hp(), 4, seed);
    const Vec v = random_vec(rng, 8);
    const auto t = encode_query(p, v);
    for (std::uint32_t m = 0; m < 4; ++m) {
      const double a = predict(p, ModelId{m}, v);
      EXPECT_EQ(a, predict(p, ModelId{m}, v));
      EXPECT_EQ(a, respond(t.alpha, t.beta, p.theta(ModelId{m})));
    }
  }
}

TEST(Predict, IdenticalThetaRowsGiveIdenticalProbabilities) {
  auto p = init_params(small_hp(), 2, 1);
  for (std::size_t j = 0; j < 5; ++j) p.tensors.theta(1, j) = p.tensors.theta(0, j);
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    const Vec v = random_vec(rng, 8);
    EXPECT_EQ(predict(p, ModelId{0}, v), predict(p, ModelId{1}, v));
  }
}

TEST(Predict, UnknownModelThrows) {
  const auto p = init_params(small_hp(), 2, 1);
  EXPECT_THROW(predict(p, ModelId{2}, Vec(8, 0.0)), std::out_of_range);
}

TEST(PredictAllModels, MatchesPerModelPredictWithOneEncoderCall) {
  std::mt19937_64 rng(11);
  for (std::size_t n : {1u, 3u, 112u}) {
    const auto p = init_params(small_hp(), n, n);
    const Vec v = random_vec(rng, 8);
    const auto before = encoder_invocations();
    ForwardTrace trace;
    const Vec all = predict_all_models(p, v, &trace);
    EXPECT_EQ(encoder_invocations() - before, 1u);
    ASSERT_EQ(all.size(), n);
    EXPECT_EQ(trace.probabilities, all);
    for (std::uint32_t m = 0; m < n; ++m) EXPECT_NEAR(all[m], predict(p, ModelId{m}, v), 1e-15);
  }
}

TEST(ParameterCount, HandEnumeratedToyConfig) {
  Hyperparams hp;
  hp.embed_dim = 8;
  hp.num_experts = 3;
  hp.expert_hidden = 4;
  hp.hidden_dim = 4;
  // gate 8*3+3 = 27; each expert (8*4+4)+(4*4+4) = 56; shared + 3 routed = 224.
  EXPECT_EQ(moe_encoder_parameter_count(hp), 251u);
  // MLP 8->H->4: 13H + 4 = 251 at H = 19.
  EXPECT_EQ(mlp_encoder_parameter_count(hp, 19), 251u);
  EXPECT_EQ(mlp_ablation_width(hp), 19u);
}

TEST(ParameterCount, DefaultConfig) {
  const Hyperparams hp;
  // gate 768*40+40; 41 experts of (768*512+512)+(512*256+256).
  EXPECT_EQ(moe_encoder_parameter_count(hp), 30760u + 41u * 525056u);
  EXPECT_EQ(moe_encoder_parameter_count(hp), 21558056u);
  const std::size_t h = mlp_ablation_width(hp);
  EXPECT_EQ(h, 21032u);
  const double moe = static_cast<double>(moe_encoder_parameter_count(hp));
  const double mlp = static_cast<double>(mlp_encoder_parameter_count(hp, h));
  EXPECT_LE(std::abs(mlp - moe) / moe, 0.005);
}

TEST(ParameterCount, MatchesInitialisedTensors) {
  const auto p = init_params(small_hp(), 3, 0);
  const auto a = make_mlp_ablation(small_hp(), 3, 0);
  EXPECT_EQ(encoder_parameter_count(p), moe_encoder_parameter_count(small_hp()));
  EXPECT_EQ(encoder_parameter_count(a), mlp_encoder_parameter_count(small_hp(), mlp_ablation_width(small_hp())));
  std::size_t total = 0;
  for (const auto& v : tensor_views(p.tensors)) total += v.values.size();
  EXPECT_EQ(parameter_count(p.tensors), total);
  EXPECT_EQ(total, encoder_parameter_count(p) + 3 * 5 + (5 * 4 + 5) + (4 + 1));
}

TEST(InitParams, DeterministicPerSeed) {
  EXPECT_EQ(init_params(small_hp(), 3, 42), init_params(small_hp(), 3, 42));
  EXPECT_NE(init_params(small_hp(), 3, 42).tensors, init_params(small_hp(), 3, 43).tensors);
  const auto p = init_params(small_hp(), 3, 42);
  for (double b : p.balance_bias) EXPECT_EQ(b, 0.0);
  for (const auto& v : tensor_views(p.tensors)) {
    for (double x : v.values) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(InitParams, ThetaStandardDeviation) {
  Hyperparams hp = small_hp();
  hp.ability_dim = 100;
  const auto p = init_params(hp, 1000, 7);  // 10^5 entries
  const auto values = p.tensors.theta.values();
  double mean = 0;
  for (double x : values) mean += x;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double x : values) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(InitParams, LinearMapsAreFanInScaled) {
  const auto p = init_params(small_hp(), 2, 3);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double w : p.tensors.gate.weight.values()) EXPECT_LE(std::abs(w), bound);
  for (double w : p.tensors.shared.output.weight.values()) EXPECT_LE(std::abs(w), 1.0 / std::sqrt(6.0));
}

TEST(BalanceBias, SignRule) {
  Vec bias{0.0, 0.0, 0.0};
  update_balance_bias(bias, Vec{0.5, 0.3, 0.2}, 1e-3);
  EXPECT_EQ(bias[0], -1e-3);
  EXPECT_EQ(bias[1], 1e-3);
  EXPECT_EQ(bias[2], 1e-3);

  Vec even{0.1, -0.2, 0.3, 0.0};
  update_balance_bias(even, Vec{0.25, 0.25, 0.25, 0.25}, 0.5);
  EXPECT_EQ(even, (Vec{0.1, -0.2, 0.3, 0.0}));
}

TEST(BalanceBias, ImbalanceIsMaxDeviation) {
  EXPECT_NEAR(gate_imbalance(Vec{0.5, 0.3, 0.2}), 0.5 - 1.0 / 3.0, 1e-15);
  EXPECT_EQ(gate_imbalance(Vec{0.25, 0.25, 0.25, 0.25}), 0.0);
}
