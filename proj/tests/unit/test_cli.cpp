#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

// stdout is captured; stderr is discarded.
CliResult run(const std::string& args) {
  const std::string cmd = std::string(NRT_CLI_PATH) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const std::string kData = " --synthetic --test-per-class 4 ";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "nrt_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const CliResult r = run("train" + kData + "--train-per-class 20 --epochs 2 --seed 3 --trigger patch --trigger-size 3 "
                      "--target-class 3 --poison-fraction 0.1 --checkpoint-every 1 "
                      "--checkpoint-dir " + (dir_ / "ckpt").string() +
                      " --out " + model().string());
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static fs::path model() { return dir_ / "bd.nrtm"; }
  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, TrainWritesModelAndRecord) {
  EXPECT_TRUE(fs::exists(model()));
  std::ifstream rec(model().string() + ".train.csv");
  std::string header;
  std::getline(rec, header);
  EXPECT_EQ(header, "epoch,loss,clean_acc,trigger_success");
  EXPECT_TRUE(fs::exists(dir_ / "ckpt" / "epoch_002.nrtm"));
}

TEST_F(Cli, ScanEmitsVerdictJson) {
  const std::string curve = (dir_ / "curve.csv").string();
  const CliResult r = run("scan " + model().string() + " --sigma-grid 0.5,1 --samples 50 --seed 1 --curve-out " + curve);
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["schema_version"], 1);
  const double s = j["verdict"]["score"];
  EXPECT_GE(s, 0.0);
  EXPECT_LE(s, 1.0);
  EXPECT_EQ(j["verdict"]["n_samples"], 50);
  EXPECT_EQ(j["curve"]["sigmas"].size(), 2u);
  EXPECT_TRUE(fs::exists(curve));

  // Same seed, same report apart from timings.
  auto a = j, b = nlohmann::json::parse(run("scan " + model().string() + " --sigma-grid 0.5,1 --samples 50 --seed 1").out);
  for (auto* x : {&a, &b}) {
    x->erase("runtime_seconds");
    (*x)["verdict"].erase("runtime_seconds");
  }
  EXPECT_EQ(a["verdict"], b["verdict"]);
  EXPECT_EQ(a["curve"], b["curve"]);
}

TEST_F(Cli, ScanFailuresAndUsage) {
  std::ifstream in(model(), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const fs::path cut = dir_ / "cut.nrtm";
  std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  const CliResult r = run("scan " + cut.string() + " --samples 10");
  EXPECT_EQ(r.code, 4);
  EXPECT_TRUE(r.out.empty());

  EXPECT_EQ(run("scan " + (dir_ / "none.nrtm").string()).code, 4);
  EXPECT_EQ(run("scan " + model().string() + " --mode image --samples 10").code, 2);  // no dataset
  EXPECT_EQ(run("scan " + model().string() + " --gamma 1.0 --samples 10").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("train --out x.nrtm").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, LocalizeWithTruthTrigger) {
  const std::string prefix = (dir_ / "map").string();
  const CliResult r = run("localize " + model().string() + kData +
                    "--images 2 --n-avg 3 --truth-trigger --out-prefix " + prefix);
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.contains("localization_score"));
  EXPECT_TRUE(fs::exists(prefix + ".csv"));
  EXPECT_TRUE(fs::exists(prefix + ".json"));
}

TEST_F(Cli, WalkAndEpochTitration) {
  const std::string prefix = (dir_ / "w").string();
  CliResult r = run("walk " + model().string() + kData +
              "--sigmas 0,1,2 --walks 3 --target-class 3 --out-prefix " + prefix);
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(prefix + "_walks.csv"));
  EXPECT_TRUE(fs::exists(prefix + "_basis.json"));

  fs::create_directories(dir_ / "ckpt_mixed");
  fs::copy_file(dir_ / "ckpt" / "epoch_001.nrtm", dir_ / "ckpt_mixed" / "epoch_001.nrtm",
                fs::copy_options::overwrite_existing);
  std::ofstream(dir_ / "ckpt_mixed" / "epoch_002.nrtm") << "garbage";
  r = run("epoch-titration --checkpoint-dir " + (dir_ / "ckpt_mixed").string() +
          " --sigma-grid 0.5 --samples 20");
  EXPECT_EQ(r.code, 0);

  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run("epoch-titration --checkpoint-dir " + (dir_ / "empty").string()).code, 2);
}
