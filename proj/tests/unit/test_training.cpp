#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "irtnet/checkpoint.hpp"
#include "irtnet/error.hpp"
#include "irtnet/gradcheck.hpp"
#include "irtnet/training.hpp"
#include "test_support.hpp"

using namespace irtnet;
using irtnet::testing::make_fixture;
using irtnet::testing::random_vec;
using irtnet::testing::read_text;
using irtnet::testing::TempDir;

namespace {

Hyperparams small_hp(std::size_t embed_dim = 8) {
  Hyperparams hp;
  hp.embed_dim = embed_dim;
  hp.num_experts = 3;
  hp.hidden_dim = 4;
  hp.ability_dim = 5;
  hp.expert_hidden = 6;
  return hp;
}

bool all_zero(const Tensors& t) {
  for (const auto& v : tensor_views(t)) {
    for (double x : v.values) {
      if (x != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Bce, MaximalUncertainty) {
  EXPECT_NEAR(bce_loss(0.5, 0), 0.6931471806, 1e-10);
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_EQ(bce_from_logit(0.0, 1), std::log(2.0));
}

TEST(Bce, ConfidentAndClamped) {
  EXPECT_LT(bce_loss(1.0 - 1e-12, 1), 2e-7);
  EXPECT_NEAR(bce_loss(1.0, 0), -std::log(1e-7), 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));
  EXPECT_LT(bce_from_logit(50.0, 1), 1e-20);
}

TEST(Bce, StableFormMatchesLogForm) {
  EXPECT_NEAR(bce_from_logit(-3.0, 1), 3.0485873515737420, 1e-12);
  for (double z = -20.0; z <= 20.0; z += 0.5) {
    const double o = 1.0 / (1.0 + std::exp(-z));
    EXPECT_NEAR(bce_from_logit(z, 1), -std::log(o), 1e-12) << z;
    EXPECT_NEAR(bce_from_logit(z, 0), std::log1p(std::exp(z)), 1e-12) << z;
    if (z < 5.0) EXPECT_NEAR(bce_from_logit(z, 0), -std::log(1.0 - o), 1e-12) << z;
  }
}

TEST(Backward, LogitGradientAtSevenTenths) {
  // o = 0.7, y = 1: dL/dz = -0.3, and since z = alpha.theta - beta, dL/dbeta = +0.3.
  const double z = std::log(0.7 / 0.3);
  const double h = 1e-6;
  const double dz = (bce_from_logit(z + h, 1) - bce_from_logit(z - h, 1)) / (2 * h);
  EXPECT_NEAR(dz, -0.3, 1e-8);
  const auto loss_of_beta = [&](double beta) { return bce_from_logit(z - beta, 1); };
  EXPECT_NEAR((loss_of_beta(h) - loss_of_beta(-h)) / (2 * h), 0.3, 1e-8);
}

TEST(Backward, ResponseIdentities) {
  std::mt19937_64 rng(1);
  const auto p = init_params(small_hp(), 3, 2);
  const Vec v = random_vec(rng, 8);
  const auto trace = encode_query(p, v);
  for (int label : {0, 1}) {
    Tensors g = zeros_like(p.tensors);
    const double r = backward(p, trace, ModelId{1}, label, g);
    const double o = respond(trace.alpha, trace.beta, p.theta(ModelId{1}));
    EXPECT_NEAR(r, o - label, 1e-15);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(g.theta(1, j), (o - label) * trace.alpha[j], 1e-15);
      EXPECT_EQ(g.theta(0, j), 0.0);
    }
    // beta = beta_head(h): its bias gradient is dL/dbeta.
    EXPECT_NEAR(g.beta_head.bias[0], -(o - label), 1e-15);
    // alpha = alpha_head(h): its bias gradient is dL/dalpha = (o - y) theta_m.
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(g.alpha_head.bias[j], (o - label) * p.theta(ModelId{1})[j], 1e-15);
  }
}

TEST(Backward, ZeroResidualGivesZeroGradients) {
  std::mt19937_64 rng(2);
  const auto p = init_params(small_hp(), 2, 3);
  const auto trace = encode_query(p, random_vec(rng, 8));
  Tensors g = zeros_like(p.tensors);
  backward_query(p, trace, Vec(5, 0.0), 0.0, g);
  EXPECT_TRUE(all_zero(g));
  Tensors g2 = zeros_like(p.tensors);
  backward(p, trace, ModelId{0}, 1, g2, 0.0);
  EXPECT_TRUE(all_zero(g2));
}

TEST(Backward, BatchedIsBitIdenticalToPerQuery) {
  std::mt19937_64 rng(3);
  for (auto kind : {EncoderKind::mixture, EncoderKind::mlp}) {
    const auto p = init_params(small_hp(), 2, 4, kind);
    std::vector<ForwardTrace> traces;
    std::vector<Vec> d_alphas;
    std::vector<double> d_betas;
    for (int i = 0; i < 6; ++i) {
      traces.push_back(encode_query(p, random_vec(rng, 8)));
      d_alphas.push_back(random_vec(rng, 5));
      d_betas.push_back(random_vec(rng, 1)[0]);
    }
    Tensors single = zeros_like(p.tensors);
    for (int i = 0; i < 6; ++i) backward_query(p, traces[i], d_alphas[i], d_betas[i], single);
    std::vector<const ForwardTrace*> ptrs;
    for (const auto& t : traces) ptrs.push_back(&t);
    Tensors batched = zeros_like(p.tensors);
    ThreadPool pool(2);
    backward_queries(p, ptrs, d_alphas, d_betas, batched, &pool);
    EXPECT_EQ(batched, single);
  }
}

TEST(Backward, BalanceBiasHasNoGradient) {
  const auto p = init_params(small_hp(), 2, 1);
  for (const auto& v : tensor_views(zeros_like(p.tensors))) EXPECT_EQ(v.name.find("balance"), std::string::npos);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const auto p = init_params(small_hp(), 2, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  AdamOptimizer adam(p.tensors, cfg);
  Tensors params = p.tensors;
  Tensors grads = zeros_like(params);
  for (auto& v : tensor_views(grads)) std::fill(v.values.begin(), v.values.end(), 0.5);
  grads.theta(0, 0) = -2.0;
  adam.step(params, grads);
  EXPECT_EQ(adam.steps(), 1u);
  const double step = 0.01 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(params.gate.weight(0, 0), p.tensors.gate.weight(0, 0) - step, 1e-15);
  EXPECT_NEAR(params.theta(0, 0), p.tensors.theta(0, 0) + 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, SecondStepUsesBiasCorrectedMoments) {
  Tensors shape;
  shape.theta = Mat(1, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  AdamOptimizer adam(shape, cfg);
  Tensors params = shape, grads = shape;
  grads.theta(0, 0) = 1.0;
  adam.step(params, grads);
  grads.theta(0, 0) = 3.0;
  adam.step(params, grads);
  const double m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1 - 0.81);
  const double v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(params.theta(0, 0), -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8), 1e-12);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.beta2 = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, IdenticalRunsGiveIdenticalCheckpoints) {
  const auto f = make_fixture(4, 60, 3, 8, 11);
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const auto split = split_queries(f.dataset.queries.all(), 1, SplitFractions{});
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const auto a = train(init_params(small_hp(), 4, 1), f.dataset, emb, split, cfg);
  cfg.threads = 3;
  const auto b = train(init_params(small_hp(), 4, 1), f.dataset, emb, split, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(encode_checkpoint(a.params), encode_checkpoint(b.params));
  cfg.seed = 6;
  const auto c = train(init_params(small_hp(), 4, 1), f.dataset, emb, split, cfg);
  EXPECT_NE(encode_checkpoint(a.params), encode_checkpoint(c.params));
}

TEST(Train, OverfitsASmallProblem) {
  // 4 models x 50 queries = 200 records, all used for training and selection.
  const auto f = make_fixture(4, 50, 1, 8, 21);
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  DatasetSplit split;
  split.train = f.dataset.queries.all();
  Hyperparams hp = small_hp();
  hp.expert_hidden = 32;
  hp.hidden_dim = 16;
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-2;
  const auto r = train(init_params(hp, 4, 3), f.dataset, emb, split, cfg);
  const EvalStats final_stats = evaluate(r.params, f.dataset.records, emb);
  EXPECT_LT(final_stats.loss, 0.1 * r.report.initial_val_loss);
  EXPECT_LE(r.report.epochs.back().val_loss, r.report.initial_val_loss);
}

TEST(Train, BestValidationNeverWorseThanInitial) {
  const auto f = make_fixture(4, 80, 2, 8, 31);
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const auto split = split_queries(f.dataset.queries.all(), 2, SplitFractions{});
  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.batch_size = 32;
  const auto r = train(init_params(small_hp(), 4, 2), f.dataset, emb, split, cfg);
  const auto val = records_with_role(f.dataset.records, split.roles(f.dataset.queries.size()), SplitRole::validation);
  EXPECT_LE(evaluate(r.params, val, emb).loss, r.report.initial_val_loss);
  EXPECT_LE(r.report.final_epoch, 10u);
  EXPECT_EQ(r.report.epochs.size(), r.report.final_epoch);
}

TEST(Train, BalanceBiasFollowsSignRule) {
  const auto f = make_fixture(3, 20, 1, 8, 41);
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  DatasetSplit split;
  split.train = f.dataset.queries.all();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.batch_size = 1000;  // one batch
  Hyperparams hp = small_hp();
  hp.bias_update_rate = 0.25;
  const auto init = init_params(hp, 3, 4);
  Vec mean(3, 0.0);
  for (const auto& rec : f.dataset.records) axpy(1.0 / 60.0, encode_query(init, emb[rec.query]).gate_weights, mean);
  Vec expected(3, 0.0);
  update_balance_bias(expected, mean, 0.25);

  const auto r = train(init, f.dataset, emb, split, cfg);
  ASSERT_EQ(r.report.best_epoch, 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(std::abs(r.params.balance_bias[i]), 0.25);
    EXPECT_EQ(r.params.balance_bias[i], expected[i]);
  }
}

TEST(Train, Errors) {
  const auto f = make_fixture(2, 10, 1, 8, 1);
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  EXPECT_THROW(train(init_params(small_hp(), 2, 0), f.dataset, emb, DatasetSplit{}, TrainConfig{}), DataError);
  DatasetSplit split;
  split.train = f.dataset.queries.all();
  EXPECT_THROW(train(init_params(small_hp(9), 2, 0), f.dataset, emb, split, TrainConfig{}), DimensionError);
}

TEST(TrainingLog, AppendsCsvRows) {
  TempDir dir;
  TrainingLog log(dir / "log.csv");
  EpochStats s;
  s.epoch = 1;
  s.train_loss = 0.5;
  log.append(s);
  s.epoch = 2;
  log.append(s);
  const std::string text = read_text(dir / "log.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,train_loss,val_loss,val_acc,seconds");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}
