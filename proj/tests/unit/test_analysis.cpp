#include <cmath>

#include <gtest/gtest.h>

#include "irtnet/analysis.hpp"
#include "irtnet/error.hpp"
#include "test_support.hpp"

using namespace irtnet;
using irtnet::testing::read_text;
using irtnet::testing::TempDir;
using irtnet::testing::write_text;

namespace {

Hyperparams plane_hp() {
  Hyperparams hp;
  hp.embed_dim = 4;
  hp.num_experts = 2;
  hp.hidden_dim = 3;
  hp.ability_dim = 2;
  hp.expert_hidden = 3;
  return hp;
}

IrtNetParams zeroed(std::size_t n, const Hyperparams& hp = plane_hp()) {
  IrtNetParams p = init_params(hp, n, 0);
  for (auto& view : tensor_views(p.tensors)) std::fill(view.values.begin(), view.values.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) p.model_names.push_back("m" + std::to_string(i));
  return p;
}

// beta(v) = max(v[0], 0) and alpha = 0, so every probability is sigmoid(-beta).
IrtNetParams beta_from_first_coordinate(std::size_t n) {
  IrtNetParams p = zeroed(n);
  p.tensors.shared.hidden.weight(0, 0) = 1.0;
  p.tensors.shared.output.weight(0, 0) = 1.0;
  p.tensors.beta_head.weight(0, 0) = 1.0;
  return p;
}

struct Fixture {
  Dataset dataset;
  EmbeddingStore store{4};
};

// Benchmark A: queries a0 (beta 1), a1 (beta 3); benchmark B: b0 (beta 0.5), b1 (beta 0.5).
Fixture two_benchmarks() {
  Fixture f;
  f.dataset.models.intern("m0");
  f.dataset.models.intern("m1");
  const double betas[] = {1.0, 3.0, 0.5, 0.5};
  const char* names[] = {"a0", "a1", "b0", "b1"};
  const std::uint8_t labels[4][2] = {{1, 0}, {0, 0}, {1, 1}, {0, 1}};
  for (int q = 0; q < 4; ++q) {
    const QueryId id = f.dataset.queries.intern(names[q], q < 2 ? "A" : "B");
    f.store.add(names[q], Vec{betas[q], 0, 0, 0});
    for (std::uint32_t m = 0; m < 2; ++m) f.dataset.records.push_back({ModelId{m}, id, labels[q][m]});
  }
  return f;
}

}  // namespace

TEST(DifficultyCorrelation, TwoBenchmarkHandFixture) {
  const auto f = two_benchmarks();
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const auto r = difficulty_correlation(beta_from_first_coordinate(2), f.dataset, f.dataset.records, emb);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].benchmark, "A");
  EXPECT_NEAR(r.rows[0].accuracy, 0.25, 1e-12);
  EXPECT_NEAR(r.rows[0].mean_beta, 2.0, 1e-12);
  EXPECT_EQ(r.rows[0].queries, 2u);
  EXPECT_EQ(r.rows[0].records, 4u);
  EXPECT_NEAR(r.rows[1].accuracy, 0.75, 1e-12);
  EXPECT_NEAR(r.rows[1].mean_beta, 0.5, 1e-12);
  EXPECT_NEAR(r.pearson, -1.0, 1e-12);
}

TEST(DifficultyCorrelation, UsesOnlyGivenRecordsAndNeedsTwoBenchmarks) {
  const auto f = two_benchmarks();
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const std::vector<ResponseRecord> only_a(f.dataset.records.begin(), f.dataset.records.begin() + 4);
  EXPECT_THROW(difficulty_correlation(beta_from_first_coordinate(2), f.dataset, only_a, emb), DataError);
}

TEST(CommunityDistances, HandGeometry) {
  IrtNetParams p = zeroed(3);
  p.tensors.theta(1, 1) = 2.0;
  p.tensors.theta(2, 0) = 10.0;
  const std::vector<CommunitySpec> specs{{"pair", {ModelId{0}, ModelId{1}}}};
  const auto d = community_distances(p, specs);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NEAR(d[0].intra, 2.0, 1e-12);
  EXPECT_NEAR(d[0].inter, (10.0 + std::sqrt(104.0)) / 2.0, 1e-12);

  const std::vector<CommunitySpec> swapped{{"pair", {ModelId{1}, ModelId{0}}}};
  EXPECT_EQ(community_distances(p, swapped)[0].intra, d[0].intra);
  EXPECT_EQ(community_distances(p, swapped)[0].inter, d[0].inter);
}

TEST(CommunityDistances, IdenticalRowsHaveZeroIntra) {
  IrtNetParams p = zeroed(3);
  p.tensors.theta(2, 0) = 1.0;
  const std::vector<CommunitySpec> specs{{"same", {ModelId{0}, ModelId{1}}}};
  EXPECT_EQ(community_distances(p, specs)[0].intra, 0.0);
}

TEST(CommunityDistances, DegenerateCommunities) {
  const IrtNetParams p = zeroed(3);
  const auto check = [&](std::vector<ModelId> members) {
    const std::vector<CommunitySpec> s{{"c", std::move(members)}};
    EXPECT_THROW(community_distances(p, s), DataError);
  };
  check({ModelId{0}});
  check({ModelId{0}, ModelId{0}});
  check({ModelId{0}, ModelId{1}, ModelId{2}});
  check({ModelId{0}, ModelId{5}});
}

TEST(LoadCommunities, ParsesAndResolvesNames) {
  TempDir dir;
  write_text(dir / "c.json", R"({"communities": [{"name": "fam", "models": ["m2", "m0"]}]})");
  const auto specs = load_communities(dir / "c.json", {"m0", "m1", "m2"});
  ASSERT_EQ(specs.size(), 1u);
  EXPECT_EQ(specs[0].name, "fam");
  EXPECT_EQ(specs[0].members, (std::vector<ModelId>{ModelId{2}, ModelId{0}}));

  write_text(dir / "bad.json", "{not json");
  EXPECT_THROW(load_communities(dir / "bad.json", {"m0"}), FormatError);
  write_text(dir / "shape.json", R"({"groups": []})");
  EXPECT_THROW(load_communities(dir / "shape.json", {"m0"}), FormatError);
  write_text(dir / "unknown.json", R"({"communities": [{"name": "x", "models": ["zz", "m0"]}]})");
  EXPECT_THROW(load_communities(dir / "unknown.json", {"m0"}), DataError);
}

TEST(Export, ThetaRoundTripsExactly) {
  Hyperparams hp = plane_hp();
  hp.ability_dim = 4;
  IrtNetParams p = init_params(hp, 3, 11);
  p.model_names = {"a", "b,with comma", "c"};
  TempDir dir;
  write_theta_csv(p, dir / "theta.csv");
  const std::string text = read_text(dir / "theta.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "model,t0,t1,t2,t3");
  const auto back = read_theta_csv(dir / "theta.csv");
  EXPECT_EQ(back.models, p.model_names);
  EXPECT_EQ(back.theta, p.tensors.theta);
}

TEST(Export, AlphaHasOneRowPerQuery) {
  const auto f = two_benchmarks();
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const auto p = init_params(plane_hp(), 2, 1);
  TempDir dir;
  const std::vector<QueryId> some{QueryId{0}, QueryId{3}};
  write_alpha_csv(p, f.dataset.queries, some, emb, dir / "alpha.csv");
  const std::string text = read_text(dir / "alpha.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.substr(0, text.find('\n')), "query_id,benchmark,beta,a0,a1");
  EXPECT_NE(text.find("\nb1,B,"), std::string::npos);
}

TEST(CorrectnessAccuracy, ThresholdBoundaries) {
  const auto f = two_benchmarks();
  const QueryEmbeddings emb(f.store, f.dataset.queries);
  const IrtNetParams z = zeroed(2);  // every probability exactly 0.5
  double ones = 0;
  for (const auto& r : f.dataset.records) ones += r.correct;
  const double base = ones / static_cast<double>(f.dataset.records.size());
  EXPECT_EQ(correctness_accuracy(z, f.dataset.records, emb), base);
  EXPECT_EQ(correctness_accuracy(z, f.dataset.records, emb, 0.0), base);
  EXPECT_EQ(correctness_accuracy(z, f.dataset.records, emb, 1.0 + 1e-9), 1.0 - base);

  IrtNetParams confident = zeroed(2);
  confident.tensors.beta_head.bias[0] = -std::log(9.0);  // p = 0.9
  std::vector<ResponseRecord> right;
  for (auto r : f.dataset.records) right.push_back({r.model, r.query, 1});
  EXPECT_EQ(correctness_accuracy(confident, right, emb), 1.0);
  EXPECT_THROW(correctness_accuracy(z, {}, emb), DataError);
}
