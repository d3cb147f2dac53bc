#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

const char* kTinyConfig =
    "d = 16\nheads = 2\ninit_depth = 1\nschedule = 2,4\nlayers_per_stage = 1\n"
    "lr = 0.003\nepochs = 1\nsteps_per_epoch = 2\nbatch_size = 2\n"
    "n_keypoints = 24\noutlier_frac = 0.2\nnoise_px = 1.0\n"
    "encoder_hidden_layers = 1\n";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("clustergnn_cli_" +
            std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
  }
  std::string read(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  // Exit status of the CLI; stderr goes to err.txt.
  int run(const std::string& args) const {
    const std::string cmd = std::string(CLUSTERGNN_CLI) + " " + args + " >" +
                            path("out.txt") + " 2>" + path("err.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
};

TEST_F(CliTest, GenerateTrainMatch) {
  ASSERT_EQ(run("generate --seed 3 --n 24 --dim 16 --out-a " + path("a.kp") +
                " --out-b " + path("b.kp") + " --truth " + path("t.tsv")),
            0);
  write("tiny.cfg", kTinyConfig);
  ASSERT_EQ(run("train --config " + path("tiny.cfg") + " --out " + path("w.bin") +
                " --seed 1"),
            0)
      << read("err.txt");
  EXPECT_NE(read("w.bin.metrics.log").find("epoch=1 loss="), std::string::npos);
  for (const char* head : {"dual-softmax", "sinkhorn"}) {
    ASSERT_EQ(run("match --weights " + path("w.bin") + " --kp-a " + path("a.kp") +
                  " --kp-b " + path("b.kp") + " --out " + path("m.tsv") +
                  " --head " + head),
              0)
        << read("err.txt");
    EXPECT_NE(read("m.tsv").find("# matches="), std::string::npos);
  }
}

TEST_F(CliTest, TrainIsDeterministic) {
  write("tiny.cfg", kTinyConfig);
  for (const char* out : {"w1.bin", "w2.bin"}) {
    ASSERT_EQ(run("train --config " + path("tiny.cfg") + " --out " + path(out) +
                  " --seed 5"),
              0);
  }
  EXPECT_EQ(read("w1.bin.metrics.log"), read("w2.bin.metrics.log"));
  EXPECT_EQ(read("w1.bin"), read("w2.bin"));
}

TEST_F(CliTest, EmptyKeypointFileExitsTwo) {
  write("tiny.cfg", kTinyConfig);
  ASSERT_EQ(run("train --config " + path("tiny.cfg") + " --out " + path("w.bin")), 0);
  write("empty.kp", "");
  EXPECT_EQ(run("match --weights " + path("w.bin") + " --kp-a " + path("empty.kp") +
                " --kp-b " + path("empty.kp") + " --out " + path("m.tsv")),
            2);
  EXPECT_NE(read("err.txt").find("byte offset 0"), std::string::npos);
}

TEST_F(CliTest, MissingConfigKeyExitsTwoNamingTheKey) {
  std::string text = kTinyConfig;
  text.erase(text.find("batch_size = 2\n"), 15);
  write("bad.cfg", text);
  EXPECT_EQ(run("train --config " + path("bad.cfg") + " --out " + path("w.bin")), 2);
  EXPECT_NE(read("err.txt").find("batch_size"), std::string::npos);
}

TEST_F(CliTest, InconsistentConfigExitsThree) {
  std::string text = kTinyConfig;
  text.replace(text.find("heads = 2"), 9, "heads = 3");
  write("bad.cfg", text);
  EXPECT_EQ(run("train --config " + path("bad.cfg") + " --out " + path("w.bin")), 3);
}

TEST_F(CliTest, DescriptorDimMismatchExitsThree) {
  write("tiny.cfg", kTinyConfig);
  ASSERT_EQ(run("train --config " + path("tiny.cfg") + " --out " + path("w.bin")), 0);
  ASSERT_EQ(run("generate --n 10 --dim 8 --out-a " + path("a.kp") + " --out-b " +
                path("b.kp")),
            0);
  EXPECT_EQ(run("match --weights " + path("w.bin") + " --kp-a " + path("a.kp") +
                " --kp-b " + path("b.kp") + " --out " + path("m.tsv")),
            3);
}

TEST_F(CliTest, UnknownOptionExitsTwo) {
  EXPECT_EQ(run("bench --no-such-flag"), 2);
}

TEST_F(CliTest, BenchWritesCsv) {
  ASSERT_EQ(run("bench --sizes 128,256 --schedule 4,8 --runs 1 --dim 16 --heads 2 "
                "--out " + path("b.csv")),
            0)
      << read("err.txt");
  const std::string csv = read("b.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,mode,ms,bytes,unmasked_pairs,dense_pairs");
  EXPECT_NE(csv.find("256,clustered,"), std::string::npos);
}

}  // namespace
