// Runs the irtnet executable as a subprocess.

#include <cstdlib>
#include <memory>
#include <regex>

#include <gtest/gtest.h>

#include "irtnet/analysis.hpp"
#include "irtnet/checkpoint.hpp"
#include "test_support.hpp"

using namespace irtnet;
using irtnet::testing::ProcessResult;
using irtnet::testing::quote;
using irtnet::testing::read_text;
using irtnet::testing::run_command;
using irtnet::testing::TempDir;
using irtnet::testing::write_text;

namespace {

ProcessResult irtnet_cli(const std::string& args) { return run_command(std::string(IRTNET_EXECUTABLE) + " " + args); }

std::string lines_of(const std::string& text, std::size_t n) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n && pos != std::string::npos; ++i) pos = text.find('\n', pos + 1);
  return text.substr(0, pos);
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("irtnet-cli");
    const auto synth = irtnet_cli("synth --out-dir " + quote(dir_->path()) +
                                  " --models 5 --queries 80 --embed-dim 8 --bands 3 --seed 2");
    ASSERT_EQ(synth.exit_code, 0) << synth.output;
    const auto trained = irtnet_cli(data_flags() + " --out " + quote(path("model.ckpt")) + " " + small_model() +
                                    " --seed 1 --epochs 2");
    ASSERT_EQ(trained.exit_code, 0) << trained.output;
  }
  static void TearDownTestSuite() { dir_.reset(); }

  static std::filesystem::path path(const std::string& name) { return dir_->path() / name; }
  static std::string data_flags() {
    return "train --responses " + quote(path("responses.csv")) + " --ids " + quote(path("ids.txt")) + " --vectors " +
           quote(path("vectors.bin"));
  }
  static std::string store_flags() { return " --ids " + quote(path("ids.txt")) + " --vectors " + quote(path("vectors.bin")); }
  static std::string small_model() { return "--d 4 --experts 2 --expert-hidden 8 --hidden 4 --batch 64"; }
  static std::string ckpt() { return " --checkpoint " + quote(path("model.ckpt")); }

  static std::unique_ptr<TempDir> dir_;
};

std::unique_ptr<TempDir> CliTest::dir_;

}  // namespace

TEST_F(CliTest, SynthWritesAllArtifacts) {
  for (const char* f : {"responses.csv", "ids.txt", "vectors.bin", "truth.json"}) {
    EXPECT_TRUE(std::filesystem::exists(path(f))) << f;
  }
  const std::string responses = read_text(path("responses.csv"));
  EXPECT_EQ(responses.substr(0, responses.find('\n')), "model,query_id,benchmark,correct");
  EXPECT_EQ(std::count(responses.begin(), responses.end(), '\n'), 1 + 5 * 80);
}

TEST_F(CliTest, TrainWritesCheckpointLogAndSplit) {
  EXPECT_TRUE(std::filesystem::exists(path("model.ckpt")));
  EXPECT_TRUE(std::filesystem::exists(path("model.ckpt.split.csv")));
  const std::string log = read_text(path("model.ckpt.log.csv"));
  EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,train_loss,val_loss,val_acc,seconds");
  const auto p = load_checkpoint(path("model.ckpt"));
  EXPECT_EQ(p.num_models(), 5u);
  EXPECT_EQ(p.hp.ability_dim, 4u);
  EXPECT_EQ(p.hp.embed_dim, 8u);
  EXPECT_EQ(p.model_names.front(), "model_0");
}

TEST_F(CliTest, TrainIsReproducible) {
  TempDir out;
  const std::string args = data_flags() + " " + small_model() + " --seed 1 --epochs 2 --out ";
  ASSERT_EQ(irtnet_cli(args + quote(out / "a.ckpt")).exit_code, 0);
  ASSERT_EQ(irtnet_cli(args + quote(out / "b.ckpt")).exit_code, 0);
  EXPECT_EQ(read_text(out / "a.ckpt"), read_text(path("model.ckpt")));
  EXPECT_EQ(read_text(out / "a.ckpt"), read_text(out / "b.ckpt"));
  EXPECT_EQ(read_text(out / "a.ckpt.split.csv"), read_text(path("model.ckpt.split.csv")));
}

TEST_F(CliTest, TrainAblationAndHoldout) {
  TempDir out;
  const auto r = irtnet_cli(data_flags() + " " + small_model() + " --epochs 1 --ablation --holdout-benchmark band1 --out " +
                            quote(out / "mlp.ckpt"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("encoder mlp"), std::string::npos);
  EXPECT_EQ(load_checkpoint(out / "mlp.ckpt").kind, EncoderKind::mlp);
}

TEST_F(CliTest, GradcheckPasses) {
  const auto r = irtnet_cli("gradcheck --seed 3");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.output, m, std::regex("max_relative_error ([0-9.eE+-]+)\\n")));
  EXPECT_LE(std::stod(m[1]), 1e-4);
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 12);
}

TEST_F(CliTest, EvalReportsAccuracy) {
  const auto r = irtnet_cli("eval" + ckpt() + " --responses " + quote(path("responses.csv")) + store_flags() +
                            " --split " + quote(path("model.ckpt.split.csv")) + " --role test");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("queries 8\n"), std::string::npos);
  EXPECT_NE(r.output.find("records 40\n"), std::string::npos);
  EXPECT_NE(r.output.find("accuracy "), std::string::npos);
}

TEST_F(CliTest, RouteWritesDecisionsAndScores) {
  const std::string args = "route" + ckpt() + " --responses " + quote(path("responses.csv")) + store_flags() +
                           " --candidates all --out ";
  const auto r = irtnet_cli(args + quote(path("route.csv")));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("routed 80\n"), std::string::npos);
  EXPECT_NE(r.output.find("micro_accuracy "), std::string::npos);
  EXPECT_NE(r.output.find("macro_accuracy "), std::string::npos);
  const std::string csv = read_text(path("route.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "query_id,chosen_model,probability,tie_broken");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 81);

  ASSERT_EQ(irtnet_cli(args + quote(path("route2.csv"))).exit_code, 0);
  EXPECT_EQ(read_text(path("route2.csv")), csv);
}

TEST_F(CliTest, RouteWithNamedCandidates) {
  const auto r = irtnet_cli("route" + ckpt() + store_flags() + " --candidates model_3 --out " + quote(path("one.csv")));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const std::string csv = read_text(path("one.csv"));
  EXPECT_NE(lines_of(csv, 2).find(",model_3,"), std::string::npos);
  EXPECT_NE(lines_of(csv, 2).find(",false"), std::string::npos);
}

TEST_F(CliTest, RouteWithEmptyCandidatesIsAUsageError) {
  const auto r = irtnet_cli("route" + ckpt() + store_flags() + " --candidates '' --out " + quote(path("x.csv")));
  EXPECT_EQ(r.exit_code, 1) << r.output;
  EXPECT_NE(r.output.find("candidates"), std::string::npos);
  EXPECT_EQ(irtnet_cli("route" + ckpt() + store_flags() + " --candidates , --out " + quote(path("x.csv"))).exit_code, 1);
}

TEST_F(CliTest, PredictBenchmarkWritesPredictionsAndRmse) {
  const auto r = irtnet_cli("predict-benchmark" + ckpt() + " --responses " + quote(path("responses.csv")) +
                            store_flags() + " --benchmark band0 --out " + quote(path("pred.csv")));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("rmse "), std::string::npos);
  const std::string csv = read_text(path("pred.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,query_set,predicted_acc,n_queries");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(csv.find("model_0,band0,"), std::string::npos);

  const auto one = irtnet_cli("predict-benchmark" + ckpt() + store_flags() + " --model model_2 --query-set s --out " +
                              quote(path("pred1.csv")));
  ASSERT_EQ(one.exit_code, 0) << one.output;
  const std::string one_csv = read_text(path("pred1.csv"));
  EXPECT_EQ(std::count(one_csv.begin(), one_csv.end(), '\n'), 2);
  EXPECT_NE(one_csv.find("model_2,s,"), std::string::npos);
  EXPECT_NE(one_csv.find(",80\n"), std::string::npos);
}

TEST_F(CliTest, AnalyzeSubcommands) {
  const auto d = irtnet_cli("analyze difficulty" + ckpt() + " --responses " + quote(path("responses.csv")) +
                            store_flags() + " --out " + quote(path("diff.csv")));
  ASSERT_EQ(d.exit_code, 0) << d.output;
  EXPECT_NE(d.output.find("pearson "), std::string::npos);
  EXPECT_EQ(read_text(path("diff.csv")).substr(0, 45), "benchmark,accuracy,mean_beta,n_queries,n_reco");

  write_text(path("communities.json"), R"({"communities": [{"name": "pair", "models": ["model_0", "model_1"]}]})");
  const auto c = irtnet_cli("analyze communities" + ckpt() + " --communities " + quote(path("communities.json")) +
                            " --out " + quote(path("comm.csv")));
  ASSERT_EQ(c.exit_code, 0) << c.output;
  EXPECT_NE(read_text(path("comm.csv")).find("pair,2,"), std::string::npos);

  const auto t = irtnet_cli("analyze export --kind theta" + ckpt() + " --out " + quote(path("theta.csv")));
  ASSERT_EQ(t.exit_code, 0) << t.output;
  EXPECT_EQ(read_theta_csv(path("theta.csv")).theta, load_checkpoint(path("model.ckpt")).tensors.theta);

  const auto a = irtnet_cli("analyze export --kind alpha" + ckpt() + store_flags() + " --out " + quote(path("alpha.csv")));
  ASSERT_EQ(a.exit_code, 0) << a.output;
  const std::string alpha = read_text(path("alpha.csv"));
  EXPECT_EQ(std::count(alpha.begin(), alpha.end(), '\n'), 81);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(irtnet_cli("").exit_code, 1);
  EXPECT_EQ(irtnet_cli("frobnicate").exit_code, 1);
  EXPECT_EQ(irtnet_cli("train --bogus-flag").exit_code, 1);
  EXPECT_EQ(irtnet_cli("eval --checkpoint " + quote(path("missing.ckpt")) + " --responses " + quote(path("responses.csv")) + store_flags()).exit_code, 2);
  write_text(path("bad.csv"), "model,query_id,benchmark,correct\nA,q0,b,7\n");
  const auto bad = irtnet_cli("train --responses " + quote(path("bad.csv")) + store_flags() + " --out " +
                              quote(path("bad.ckpt")));
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.output.find(":2:"), std::string::npos) << bad.output;
}

TEST(CliHelp, EverySubcommandDocumentsItsFlags) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"", {"train", "eval", "route", "predict-benchmark", "synth", "gradcheck", "analyze", "serve"}},
      {"train", {"--responses", "--ids", "--vectors", "--out", "--d", "--experts", "--lr", "--batch", "--epochs",
                 "--seed", "--ablation", "--stratified-split", "--holdout-benchmark"}},
      {"eval", {"--checkpoint", "--split", "--role", "--threshold"}},
      {"route", {"--checkpoint", "--candidates", "--out", "--queries", "--benchmark"}},
      {"predict-benchmark", {"--checkpoint", "--model", "--query-set", "--out"}},
      {"synth", {"--out-dir", "--models", "--queries", "--true-dim", "--embed-dim", "--seed"}},
      {"gradcheck", {"--seed", "--configs", "--ablation", "--tolerance"}},
      {"analyze", {"difficulty", "communities", "export"}},
      {"analyze difficulty", {"--checkpoint", "--out"}},
      {"analyze communities", {"--communities"}},
      {"analyze export", {"--kind"}},
      {"serve", {"--checkpoint", "--host", "--port", "--max-body"}},
  };
  for (const auto& [cmd, flags] : expected) {
    const auto r = irtnet_cli(cmd + " --help");
    EXPECT_EQ(r.exit_code, 0) << cmd;
    for (const auto& flag : flags) EXPECT_NE(r.output.find(flag), std::string::npos) << cmd << " " << flag;
  }
}
