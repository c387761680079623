#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using vsync::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args, const fs::path& scratch) {
  const auto log = scratch / "cli.log";
  const std::string cmd = std::string(VSYNC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::string kSmall = "--resolution 48 --set synth_frames=40 --set train_pairs=20 --set test_sequences=5 ";

/// Copies `count` frames starting at `first` into a fresh directory, renumbered from 0.
fs::path window(const fs::path& src, const fs::path& dst, std::size_t first, std::size_t count) {
  fs::create_directories(dst);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.pgm", first + i);
    char out[32];
    std::snprintf(out, sizeof(out), "frame_%05zu.pgm", i);
    fs::copy_file(src / name, dst / out);
  }
  return dst;
}

}  // namespace

TEST(Cli, HelpAndBadUsage) {
  TempDir d("cli");
  EXPECT_EQ(cli("--help", d.path()).code, 0);
  EXPECT_EQ(cli("", d.path()).code, 1);
  EXPECT_EQ(cli("no-such-command", d.path()).code, 1);
}

TEST(Cli, GenDataIsDeterministic) {
  TempDir d("cli");
  const auto a = d / "a", b = d / "b";
  ASSERT_EQ(cli(kSmall + "--seed 3 --out " + a.string() + " gen-data", d.path()).code, 0);
  ASSERT_EQ(cli(kSmall + "--seed 3 --out " + b.string() + " gen-data", d.path()).code, 0);
  for (const char* f : {"scene_1/manifest.csv", "scene_1/left/frame_00000.pgm", "scene_1/right/frame_00039.pgm"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "config.txt"));
  EXPECT_FALSE(fs::exists(a / "scene_1/left/frame_00040.pgm"));
  const auto manifest = slurp(a / "scene_1/manifest.csv");
  EXPECT_GT(count_lines(manifest), 20u);
}

TEST(Cli, ZeroResolutionIsAConfigError) {
  TempDir d("cli");
  const auto r = cli("--resolution 0 --out " + (d / "o").string() + " gen-data", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("resolution"), std::string::npos) << r.output;
}

TEST(Cli, UnknownConfigKeyIsNamed) {
  TempDir d("cli");
  {
    std::ofstream out(d / "bad.cfg");
    out << "seed = 1\nlearning_speed = 3\n";
  }
  const auto r = cli("--config " + (d / "bad.cfg").string() + " gen-data", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("learning_speed"), std::string::npos) << r.output;
}

TEST(Cli, OracleSyncRecoversOffset) {
  TempDir d("cli");
  ASSERT_EQ(cli(kSmall + "--out " + (d / "g").string() + " gen-data", d.path()).code, 0);
  const auto scene = d / "g" / "scene_1";
  const auto flags = std::string("--resolution 48 --matcher oracle sync ");

  const auto l0 = window(scene / "left", d / "l0", 8, 20), r0 = window(scene / "right", d / "r0", 8, 20);
  auto r = cli(flags + l0.string() + " " + r0.string(), d.path());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("\"delay\":0"), std::string::npos) << r.output;

  // Right frame j shows left frame j + 4.
  const auto r4 = window(scene / "right", d / "r4", 12, 20);
  r = cli(flags + l0.string() + " " + r4.string(), d.path());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("delay +4 frames"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("\"delay\":4"), std::string::npos) << r.output;
}

TEST(Cli, SyncNeedsTwentyFrames) {
  TempDir d("cli");
  ASSERT_EQ(cli(kSmall + "--out " + (d / "g").string() + " gen-data", d.path()).code, 0);
  const auto scene = d / "g" / "scene_1";
  const auto shortdir = window(scene / "left", d / "short", 0, 12);
  const auto full = window(scene / "right", d / "full", 0, 20);
  const auto r = cli("--resolution 48 --matcher oracle sync " + shortdir.string() + " " + full.string(), d.path());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find(shortdir.string()), std::string::npos) << r.output;
}

TEST(Cli, EvaluateRefusesOverwriteWithoutForce) {
  TempDir d("cli");
  const auto out = (d / "ev").string();
  const std::string args = "--resolution 48 --set synth_frames=40 --set test_sequences=6 --set train_sets=a "
                           "--set test_sets=b --set dataset.a=synthetic:1 --set dataset.b=synthetic:2 --out " + out + " ";
  auto r = cli(args + "evaluate", d.path());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("matcher,delay_method"), std::string::npos);
  ASSERT_TRUE(fs::exists(d / "ev" / "results.svg"));
  const auto first = slurp(d / "ev" / "results.csv");
  r = cli(args + "evaluate", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--force"), std::string::npos) << r.output;
  r = cli(args + "--force evaluate", d.path());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(d / "ev" / "results.csv"), first);

  r = cli("--out " + out + " plot", d.path());
  EXPECT_EQ(r.code, 1);
  r = cli("--out " + out + " --force plot", d.path());
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, TrainLogsEpochsAndRejectsMismatchedResume) {
  TempDir d("cli");
  const auto out = (d / "t").string();
  const std::string args = kSmall + "--matcher siamese --set matcher_epochs=2 --set matcher_batch=8 --out " + out + " ";
  auto r = cli(args + "train", d.path());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto log = slurp(d / "t" / "training_log.csv");
  EXPECT_EQ(log.rfind("epoch,loss\n", 0), 0u);
  EXPECT_EQ(count_lines(log), 3u);
  EXPECT_TRUE(fs::exists(d / "t" / "model.json"));
  EXPECT_TRUE(fs::exists(d / "t" / "model.params"));

  r = cli(args + "--set resolution=64 train", d.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("resume rejected"), std::string::npos) << r.output;
  r = cli(args + "--set resolution=64 --force train", d.path());
  EXPECT_EQ(r.code, 0) << r.output;
}
