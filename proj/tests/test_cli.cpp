// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; captures stdout.
CliResult run(const std::string& args) {
  const std::string cmd = std::string(MMFUSE_CLI_PATH) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("mmfuse_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --bogus-flag").code, 2);
  EXPECT_EQ(run("train --data " + p("missing.jsonl") + " --out " + p("m")).code, 3);
  EXPECT_EQ(run("gensynth --n 7 --out " + p("s")).code, 2);
  EXPECT_EQ(run("eval --model " + p("nothing") + " --data " + p("x.jsonl")).code, 2);
  std::ofstream(p("bad.jsonl")) << "{broken\n";
  EXPECT_EQ(run("train --data " + p("bad.jsonl") + " --out " + p("m")).code, 3);
}

TEST_F(Cli, GensynthIsDeterministic) {
  ASSERT_EQ(run("gensynth --n 20 --seed 3 --spec xor --out " + p("a")).code, 0);
  ASSERT_EQ(run("gensynth --n 20 --seed 3 --spec xor --out " + p("b")).code, 0);
  EXPECT_EQ(slurp(p("a/data.jsonl")), slurp(p("b/data.jsonl")));
  EXPECT_EQ(slurp(p("a/images/p00000.mmt")), slurp(p("b/images/p00000.mmt")));
}

TEST_F(Cli, RulesOnly) {
  const CliResult r = run("ensemble --rules-only --quad 0.4,0.3,0.35,0.9");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("id,mean,max,vote"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find(",0,1,0"), std::string::npos) << r.out;
  const CliResult tie = run("ensemble --rules-only --quad 0.25,0.25,0.75,0.75 --tie-to-negative");
  EXPECT_NE(tie.out.find(",0,0,0"), std::string::npos) << tie.out;
}

TEST_F(Cli, TrainEvalPredictRoundTrip) {
  ASSERT_EQ(run("gensynth --n 40 --seed 2 --spec uni --noise 0 --out " + p("d")).code, 0);
  ASSERT_EQ(run("train --data " + p("d/data.jsonl") + " --out " + p("m") +
                " --variant tag_only --epochs 2 --batch-size 8 --lr 1e-3 --quiet")
                .code,
            0);
  EXPECT_TRUE(fs::exists(p("m/manifest.json")));
  EXPECT_TRUE(fs::exists(p("m/history.csv")));
  const CliResult e = run("eval --model " + p("m") + " --data " + p("d/data.jsonl") + " --part test --json");
  ASSERT_EQ(e.code, 0);
  EXPECT_NE(e.out.find("\"accuracy\""), std::string::npos);
  const CliResult pr = run("predict --model " + p("m") + " --data " + p("d/data.jsonl") + " --dump-attention " +
                     p("att.jsonl"));
  ASSERT_EQ(pr.code, 0);
  EXPECT_EQ(pr.out.rfind("id,probability,decision", 0), 0u);
  std::size_t lines = 0;
  for (char c : pr.out) lines += c == '\n';
  EXPECT_EQ(lines, 41u);
  EXPECT_TRUE(fs::exists(p("att.jsonl")));
}
