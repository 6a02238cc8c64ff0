#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "helpers.hpp"
#include "moes/cli.hpp"
#include "moes/image_io.hpp"
#include "moes/model.hpp"

namespace moes {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// One small dataset and two one-epoch checkpoints shared by every test.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    config_ = (*dir_ / "run.json").string();
    std::ofstream(config_) << R"({"model": {"preset": "desk", "num_experts": 2},
      "train": {"max_epochs": 1},
      "data": {"spec": {"num_categories": 2, "samples_per_category": 5}},
      "split": {"n_folds": 5, "fold": 0},
      "metrics": {"borji_splits": 5}})";
    ASSERT_EQ(cli({"--config", config_, "--out", at("data"), "gen-data"}).code, 0);
    ASSERT_EQ(cli({"--config", config_, "--out", at("mix"), "train", "--data", at("data")}).code, 0);
    ASSERT_EQ(cli({"--config", config_, "--out", at("single"), "train", "--data", at("data"), "--single-expert"}).code,
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string at(const std::string& rel) { return (*dir_ / rel).string(); }
  static std::vector<std::string> images(std::size_t n) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(at("data"))) {
      if (out.size() < n && e.path().string().ends_with(".img.pgm")) out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  static testing::TempDir* dir_;
  static std::string config_;
};

testing::TempDir* CliTest::dir_ = nullptr;
std::string CliTest::config_;

TEST_F(CliTest, TrainWritesArtifacts) {
  for (const char* f : {"config.resolved.json", "run.meta", "split.json", "model.init", "model.best", "log.csv"}) {
    EXPECT_TRUE(fs::exists(at(std::string("mix/") + f))) << f;
  }
  EXPECT_EQ(load_checkpoint(at("single/model.best")).config().num_experts, 1u);
  EXPECT_EQ(read_csv(at("mix/log.csv")).size(), 2u);
}

TEST_F(CliTest, PredictGatesSumToOneAndRepeat) {
  const auto imgs = images(3);
  std::vector<std::string> args{"--out", at("pred"), "predict", "--checkpoint", at("mix/model.best")};
  args.insert(args.end(), imgs.begin(), imgs.end());
  ASSERT_EQ(cli(args).code, 0);
  const auto rows = read_csv(at("pred/gates.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"image", "gate_0", "gate_1"}));
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_NEAR(std::stod(rows[r][1]) + std::stod(rows[r][2]), 1.0, 1e-12);
  const std::string stem = fs::path(imgs[0]).filename().string();
  const auto map_path = at("pred/" + stem.substr(0, stem.size() - 8) + ".sal.pfm");
  const Tensor first = read_density_pfm(map_path);
  EXPECT_EQ(first.shape(), (Shape{1, 16, 16}));
  EXPECT_GE(first.min(), 0.0);
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(read_density_pfm(map_path), first);
}

TEST_F(CliTest, SingleExpertGateColumnIsOne) {
  const auto imgs = images(2);
  std::vector<std::string> args{"--out", at("pred1"), "predict", "--checkpoint", at("single/model.best")};
  args.insert(args.end(), imgs.begin(), imgs.end());
  ASSERT_EQ(cli(args).code, 0);
  const auto rows = read_csv(at("pred1/gates.csv"));
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(std::stod(rows[r][1]), 1.0);
}

TEST_F(CliTest, GroundTruthSelfEvaluation) {
  const auto r = cli({"--config", config_, "--out", at("ev_gt"), "eval", "--data", at("data"), "--maps", at("data"),
                      "--subset", "all", "--metrics", "cc,sim"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(at("ev_gt/metrics.csv"));
  ASSERT_GT(rows.size(), 1u);
  std::size_t cc_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][2] == "cc") {
      ++cc_rows;
      EXPECT_NEAR(std::stod(rows[i][3]), 1.0, 1e-12);
    }
  }
  EXPECT_EQ(cc_rows, 10u);
}

TEST_F(CliTest, CheckpointEvalWritesConfusion) {
  const auto r = cli({"--config", config_, "--out", at("ev_mix"), "eval", "--data", at("data"), "--checkpoint",
                      at("mix/model.best")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(at("ev_mix/aggregates.csv")));
  EXPECT_TRUE(fs::exists(at("ev_mix/confusion.csv")));
  EXPECT_NE(r.out.find("gating accuracy"), std::string::npos);
}

TEST_F(CliTest, FreezeGatingKeepsGatingWeights) {
  ASSERT_EQ(cli({"--config", config_, "--out", at("frozen"), "train", "--data", at("data"), "--freeze-gating"}).code, 0);
  const Model init = load_checkpoint(at("frozen/model.init"));
  const Model best = load_checkpoint(at("frozen/model.best"));
  std::map<std::string, Tensor> before;
  for (const auto& p : init.graph().parameters()) before[p->name] = p->value;
  for (const auto& p : best.graph().parameters()) {
    if (p->name.rfind("gating", 0) == 0) {
      EXPECT_EQ(p->value, before[p->name]) << p->name;
    }
  }
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  auto r = cli({"--config", config_, "--out", at("bad1"), "eval", "--data", at("data"), "--maps", at("data"),
                "--metrics", "nss,auc_shuffled"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("auc_borji"), std::string::npos) << r.err;

  EXPECT_EQ(cli({"--config", config_, "--out", at("bad2"), "train", "--data", at("nowhere")}).code, 2);

  const std::string k1 = at("k1.json");
  std::ofstream(k1) << R"({"data": {"spec": {"num_categories": 1}}})";
  EXPECT_EQ(cli({"--config", k1, "--out", at("bad3"), "gen-data"}).code, 2);

  const std::string typo = at("typo.json");
  std::ofstream(typo) << R"({"trian": {}})";
  EXPECT_EQ(cli({"--config", typo, "--out", at("bad4"), "gen-data"}).code, 2);

  // K = 3 experts against a two-category dataset.
  const std::string k3 = at("k3.json");
  std::ofstream(k3) << R"({"model": {"preset": "desk", "num_experts": 3}})";
  EXPECT_EQ(cli({"--config", k3, "--out", at("bad5"), "train", "--data", at("data")}).code, 2);

  EXPECT_EQ(cli({"--out", at("bad6"), "launch"}).code, 2);
}

TEST_F(CliTest, ResolutionMismatchExitsTwo) {
  const std::string small = at("small.json");
  std::ofstream(small) << R"({"data": {"spec": {"num_categories": 2, "samples_per_category": 5,
    "height": 32, "width": 32, "blob_count_min": 2, "blob_count_max": 2, "center_margin": 8}}})";
  ASSERT_EQ(cli({"--config", small, "--out", at("data32"), "gen-data"}).code, 0);
  EXPECT_EQ(cli({"--config", config_, "--out", at("bad7"), "eval", "--data", at("data32"), "--checkpoint",
                 at("mix/model.best")})
                .code,
            2);
}

TEST(CliGradcheck, PassesAndFaultFails) {
  testing::TempDir dir("gc");
  const auto ok = cli({"--out", (dir / "ok").string(), "gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("epsilon 1e-04"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ok/gradcheck.json"));
  EXPECT_EQ(cli({"--out", (dir / "bad").string(), "gradcheck", "--fault", "1.5"}).code, 1);
}

}  // namespace
}  // namespace moes
