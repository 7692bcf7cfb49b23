#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / ("glgait_cli_" + std::to_string(getpid()) + ".txt");
  const std::string cmd = std::string("\"") + GLGAIT_CLI + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::ostringstream s;
  s << in.rdbuf();
  r.output = s.str();
  fs::remove(out);
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("glgait_cli_test_" + std::to_string(getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("no-such-command").code, 2);
  EXPECT_EQ(cli("bench-attn --L 193").code, 2);
  EXPECT_NE(cli("bench-attn --L 193").output.find("not divisible"), std::string::npos);
  EXPECT_EQ(cli("train-toy --dataset /nonexistent/corpus.glsd").code, 2);
  EXPECT_EQ(cli("gradcheck --op no_such_op").code, 2);
  EXPECT_EQ(cli("params XL").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, GradcheckFiltersAndDetectsFaults) {
  const auto one = cli("gradcheck --op softmax");
  EXPECT_EQ(one.code, 0);
  EXPECT_EQ(count_lines(one.output), 2u);
  EXPECT_EQ(one.output.rfind("op,max_rel_error,compared,verdict\nsoftmax,", 0), 0u);
  EXPECT_EQ(cli("gradcheck --op softmax --inject-fault softmax").code, 1);
  EXPECT_EQ(cli("gradcheck --op relu --inject-fault softmax").code, 0);
}

TEST(Cli, BenchAttnReportsTheSixteenfoldRatio) {
  const auto all = cli("bench-attn");
  EXPECT_EQ(all.code, 0);
  EXPECT_NE(all.output.find("ratio mhsa/pgta 16.00 expected 16.00 PASS"), std::string::npos);
  const auto single = cli("bench-attn --variant pgta");
  EXPECT_EQ(single.code, 0);
  EXPECT_EQ(count_lines(single.output), 2u);
}

TEST(Cli, TrfOfASingleConvIsThree) {
  const auto arch = scratch("one.json");
  std::ofstream(arch) << R"({"layers": [{"type": "conv", "k": 3, "s": 1}]})";
  const auto r = cli("trf " + arch.string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.output.substr(r.output.find('\n') + 1, 2), "3,");
  fs::remove_all(arch.parent_path());
}

TEST(Cli, ParamsOfBPasses) {
  const auto r = cli("params B");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find(",PASS"), std::string::npos);
}

TEST(Cli, TrainThenScore) {
  const auto data = scratch("corpus.glsd");
  const auto run = data.parent_path() / "run";
  ASSERT_EQ(cli("gen-data --train-ids 3 --test-ids 2 --seqs 2 --frames 30 --out " + data.string()).code, 0);
  ASSERT_EQ(cli("train-toy --iters 4 --frames 6 --eval-frames 6 --batch 2x2 --loss tl --dataset " + data.string() +
                " --out " + run.string())
                .code,
            0);
  std::ifstream loss(run / "loss.csv");
  std::string header;
  std::getline(loss, header);
  EXPECT_EQ(header, "iteration,l_tl,l_ce,total");
  EXPECT_TRUE(fs::exists(run / "eval.json"));
  const auto scores = cli("score " + (run / "checkpoint.glg").string() + " --probe");
  EXPECT_EQ(scores.code, 0);
  EXPECT_EQ(count_lines(scores.output), 31u);
  EXPECT_EQ(cli("score " + (run / "checkpoint.glg").string() + " --dataset " + data.string() + " --index 99").code, 2);
  fs::remove_all(data.parent_path());
}
