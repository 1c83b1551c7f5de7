#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "data": {"num_ids": 10, "num_train_ids": 5, "samples_per_id": 8, "queries_per_id": 2},
  "model": {"epochs": 3, "batch_p": 4, "lr": {"warmup_epochs": 1, "decay_epochs": [2]}}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cbdb_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.json") << kSmallConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(CBDB_CLI_PATH) + " " + args + " > " +
                            (dir_ / "stdout.txt").string() + " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string config() const { return (dir_ / "small.json").string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, TrainWritesArtifacts) {
  ASSERT_EQ(run("train --config " + config() + " --out " + (dir_ / "a").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoint.txt"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "train_log.csv"));
  const auto metrics = nlohmann::json::parse(slurp(dir_ / "a" / "metrics.json"));
  EXPECT_TRUE(metrics.contains("config_hash"));
  EXPECT_TRUE(metrics.contains("all"));
}

TEST_F(CliTest, TrainIsByteDeterministic) {
  ASSERT_EQ(run("train --config " + config() + " --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run("train --config " + config() + " --out " + (dir_ / "b").string()), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.json"), slurp(dir_ / "b" / "metrics.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.txt"), slurp(dir_ / "b" / "checkpoint.txt"));
}

TEST_F(CliTest, EvalCheckpointReproducesTrainMetrics) {
  ASSERT_EQ(run("train --config " + config() + " --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run("eval --checkpoint " + (dir_ / "a" / "checkpoint.txt").string() + " --out " +
                (dir_ / "e").string() + " --dump-descriptors " + (dir_ / "d").string()),
            0);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.json"), slurp(dir_ / "e" / "metrics.json"));
  ASSERT_EQ(run("eval --query-csv " + (dir_ / "d" / "query.csv").string() + " --gallery-csv " +
                (dir_ / "d" / "gallery.csv").string() + " --out " + (dir_ / "f").string()),
            0);
  const auto a = nlohmann::json::parse(slurp(dir_ / "a" / "metrics.json"));
  const auto f = nlohmann::json::parse(slurp(dir_ / "f" / "metrics.json"));
  EXPECT_EQ(a["all"]["mAP"], f["all"]["mAP"]);
}

TEST_F(CliTest, ConfigErrorsExitOne) {
  std::ofstream(dir_ / "bad.json") << "{ not json";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string()), 1);
  std::ofstream(dir_ / "unknown.json") << R"({"model": {"colour": 1}})";
  EXPECT_EQ(run("train --config " + (dir_ / "unknown.json").string()), 1);
  EXPECT_NE(slurp(dir_ / "stderr.txt").find("model.colour"), std::string::npos);
  EXPECT_EQ(run("train --config " + (dir_ / "missing.json").string()), 1);
  EXPECT_EQ(run("masks --scheme cbdb:5 --height 24"), 1);
  EXPECT_EQ(run("nonsense"), 1);
  EXPECT_EQ(run("eval"), 1);
}

TEST_F(CliTest, GradcheckPasses) {
  ASSERT_EQ(run("gradcheck --trials 2 --out " + dir_.string()), 0);
  const auto j = nlohmann::json::parse(slurp(dir_ / "gradcheck.json"));
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_EQ(j["suites"].size(), 8u);
}

TEST_F(CliTest, MasksPrintsBranchGrids) {
  ASSERT_EQ(run("masks --height 24 --width 8 --scheme cbdb:6 --out " + dir_.string()), 0);
  const std::string text = slurp(dir_ / "masks.txt");
  EXPECT_NE(text.find("00000000"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "masks.csv"));
}

TEST_F(CliTest, SynthDumpsManifest) {
  ASSERT_EQ(run("synth --config " + config() + " --out " + (dir_ / "s").string()), 0);
  const std::string manifest = slurp(dir_ / "s" / "manifest.csv");
  EXPECT_EQ(manifest.substr(0, manifest.find('\n')),
            "split,index,id,camera,occluded,height,width,channels,file");
  EXPECT_TRUE(fs::exists(dir_ / "s" / "query_0.txt"));
}
