// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

// Small enough that every command finishes in a few seconds.
constexpr const char* kTinyConfig = R"(# tiny test configuration
encoder.L = 2
encoder.heads = 1
encoder.d_t = 8
encoder.d_v = 8
encoder.joint = 8
encoder.image_size = 16
encoder.m = 2
data.image_size = 16
data.samples_per_class = 12
pretrain.epochs = 1
pretrain.samples_per_class = 6
train.epochs = 2
train.batch_size = 8
train.k_shots = 4
train.prompt_depth = 2
flow.boundary_k = 1
)";

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("hicropl_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.conf") << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + HICROPL_CLI_PATH + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  Result run_tiny(const std::string& command, const std::string& args) {
    return run(command + " --config tiny.conf " + args);
  }

  void pretrain() {
    auto r = run_tiny("pretrain", "--out pre");
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

bool single_error_line(const std::string& err, int code) {
  const std::string prefix = "error code=" + std::to_string(code) + " kind=";
  return err.rfind(prefix, 0) == 0 && err.find('\n') == err.size() - 1;
}

}  // namespace

TEST_F(Cli, GenDataManifestIsDeterministicAndGuarded) {
  auto a = run_tiny("gen-data", "--out a --seed 4");
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = run_tiny("gen-data", "--out b --seed 4");
  ASSERT_EQ(b.code, 0) << b.err;
  const auto ma = slurp(dir_ / "a/manifest.txt"), mb = slurp(dir_ / "b/manifest.txt");
  EXPECT_EQ(ma, mb);
  EXPECT_NE(ma.find("classes=12"), std::string::npos) << ma;
  EXPECT_EQ(slurp(dir_ / "a/dataset.bin"), slurp(dir_ / "b/dataset.bin"));

  auto again = run_tiny("gen-data", "--out a --seed 4");
  EXPECT_NE(again.code, 0);
  EXPECT_NE(again.err.find("--overwrite"), std::string::npos) << again.err;
  EXPECT_EQ(run_tiny("gen-data", "--out a --seed 5 --overwrite").code, 0);
  EXPECT_NE(slurp(dir_ / "a/manifest.txt"), mb);
}

TEST_F(Cli, UnknownKeyIsConfigError) {
  auto r = run("train --set train.lamda=3");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(single_error_line(r.err, 2)) << r.err;
  EXPECT_NE(r.err.find("train.lamda"), std::string::npos);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, MissingTeacherHasItsOwnCode) {
  auto r = run_tiny("train", "--out t");
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(single_error_line(r.err, 3)) << r.err;
  EXPECT_EQ(run_tiny("eval", "--set paths.teacher=nowhere.ckpt").code, 3);
}

TEST_F(Cli, NumericAbortHasItsOwnCode) {
  pretrain();
  auto r = run_tiny("train", "--set paths.teacher=pre/teacher.ckpt --set train.lr=1e300 --out t");
  EXPECT_EQ(r.code, 4);
  EXPECT_TRUE(single_error_line(r.err, 4)) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST_F(Cli, GradcheckPasses) {
  auto r = run("gradcheck --out g");
  EXPECT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("max_rel_error=");
  ASSERT_NE(pos, std::string::npos) << r.out;
  EXPECT_LT(std::stod(r.out.substr(pos + 14)), 1e-4);
}

TEST_F(Cli, LambdaZeroAndCeOnlyWriteIdenticalMetrics) {
  pretrain();
  const std::string teacher = " --set paths.teacher=pre/teacher.ckpt";
  ASSERT_EQ(run_tiny("train", "--out l0 --set train.lambda=0" + teacher).code, 0);
  ASSERT_EQ(run_tiny("train", "--out ce --set train.consistency=false" + teacher).code, 0);
  EXPECT_EQ(slurp(dir_ / "l0/metrics.csv"), slurp(dir_ / "ce/metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "l0/prompts.ckpt"), slurp(dir_ / "ce/prompts.ckpt"));
  EXPECT_NE(slurp(dir_ / "l0/config.txt"), slurp(dir_ / "ce/config.txt"));
}

TEST_F(Cli, ConfigSnapshotReproducesTheRun) {
  pretrain();
  ASSERT_EQ(run_tiny("train", "--out first --seed 3 --set paths.teacher=pre/teacher.ckpt").code, 0);
  const auto report = slurp(dir_ / "first/report.txt");
  EXPECT_NE(report.find("train.seed=3"), std::string::npos) << report;
  ASSERT_EQ(run("train --config first/config.txt --out second").code, 0);
  EXPECT_EQ(slurp(dir_ / "first/metrics.csv"), slurp(dir_ / "second/metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "first/prompts.ckpt"), slurp(dir_ / "second/prompts.ckpt"));

  auto eval = run("eval --config first/config.txt --set paths.prompts=first/prompts.ckpt --out ev");
  ASSERT_EQ(eval.code, 0) << eval.err;
  const auto trained = slurp(dir_ / "first/metrics.csv"), evaluated = slurp(dir_ / "ev/metrics.csv");
  EXPECT_EQ(trained.substr(trained.find("\ntrain,") + 6), evaluated.substr(evaluated.find("\neval,") + 5));
}

TEST_F(Cli, TeacherCheckpointIsNotModified) {
  pretrain();
  const auto before = slurp(dir_ / "pre/teacher.ckpt");
  ASSERT_EQ(run_tiny("train", "--out t --set paths.teacher=pre/teacher.ckpt").code, 0);
  EXPECT_EQ(slurp(dir_ / "pre/teacher.ckpt"), before);
  for (const auto& entry : fs::directory_iterator(dir_ / "pre"))
    EXPECT_TRUE(entry.path().filename() == "teacher.ckpt" || entry.path().filename() == "pretrain.txt" ||
                entry.path().filename() == "config.txt")
        << entry.path();
}

TEST_F(Cli, AblateFlowGridHasFourMechanismsPerSeed) {
  pretrain();
  auto r = run_tiny("ablate", "--out ab --set paths.teacher=pre/teacher.ckpt --set ablate.seeds=1,2");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(dir_ / "ab/ablation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "variant,seed,base,novel,hm");
  std::size_t rows = 0;
  std::map<std::string, int> per_variant;
  while (std::getline(csv, line)) {
    ++rows;
    ++per_variant[line.substr(0, line.find(','))];
    EXPECT_EQ(line.find("failed"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 8u);
  for (const char* v : {"unidir_TI", "unidir_IT", "bidir_IT_then_TI", "bidir_TI_then_IT"}) EXPECT_EQ(per_variant[v], 2) << v;
  EXPECT_TRUE(fs::exists(dir_ / "ab/summary.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "ab/zero_shot.csv"));
}
