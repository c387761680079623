#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "vsync/config.hpp"

using namespace vsync;

namespace {

RunConfig parsed(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  apply_config_text(c, in);
  return c;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  RunConfig c;
  EXPECT_EQ(c.resolution, 224u);
  EXPECT_EQ(c.matcher, ModelKind::kTripletEuclidean);
  EXPECT_EQ(c.delay, DelayMethod::kHeatmap);
  EXPECT_EQ(c.dense_input, DenseInput::kRowArgmax);
  EXPECT_FALSE(c.heatmap_normalize);
  EXPECT_TRUE(c.triplet_hinge);
  EXPECT_NO_THROW(c.validate());
  const auto t = c.matcher_options(ModelKind::kTripletEuclidean);
  const auto ref = triplet_reference_options();
  EXPECT_EQ(t.epochs, ref.epochs);
  EXPECT_EQ(t.batch, ref.batch);
  EXPECT_EQ(t.lr, ref.lr);
}

TEST(Config, UnknownKeyIsNamed) {
  const auto msg = error_of([] { parsed("seed = 3\nbogus_key = 1\n"); });
  EXPECT_NE(msg.find("bogus_key"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
}

TEST(Config, BadValuesNameTheKey) {
  for (const auto& [text, key] : std::vector<std::pair<std::string, std::string>>{
           {"resolution = big", "resolution"},
           {"dense_lr = fast", "dense_lr"},
           {"matcher = resnet", "matcher"},
           {"heatmap_normalize = maybe", "heatmap_normalize"},
           {"dense_input = softmax", "dense_input"},
           {"dataset.x = ftp:somewhere", "dataset.x"},
           {"seed", "expected key = value"}}) {
    const auto msg = error_of([&] { parsed(text); });
    EXPECT_NE(msg.find(key), std::string::npos) << text << " -> " << msg;
  }
}

TEST(Config, ValidateRejects) {
  RunConfig c;
  c.resolution = 0;
  EXPECT_NE(error_of([&] { c.validate(); }).find("resolution"), std::string::npos);
  c.resolution = 40;
  EXPECT_THROW(c.validate(), ConfigError);
  c.matcher = ModelKind::kOracle;
  c.grid_matchers = {ModelKind::kOracle};
  EXPECT_NO_THROW(c.validate());
  c.dense_epochs = 0;
  EXPECT_NE(error_of([&] { c.validate(); }).find("dense_epochs"), std::string::npos);
}

TEST(Config, TextRoundTrip) {
  const auto c = parsed(
      "# comment\n"
      "seed = 17\nresolution = 64 # inline\nmatcher = siamese\ndelay = dense\n"
      "matcher_epochs = 3\ndense_lr = 0.125\nheatmap_normalize = true\ntriplet_hinge = false\n"
      "dense_input = raw\nflow_window = 9\nsynth_noise = 0.01\nscenes = 1, 2,3\n"
      "grid_matchers = oracle,triplet-euc\ngrid_delays = heatmap,dense\n"
      "train_sets = a\ntest_sets = b,c\ndataset.a = synthetic:1,2\ndataset.b = dir:/tmp/x\ndataset.c = synthetic:9\n");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.resolution, 64u);
  EXPECT_EQ(c.matcher, ModelKind::kSiamese);
  EXPECT_EQ(*c.matcher_epochs, 3u);
  EXPECT_EQ(c.dense_input, DenseInput::kRaw);
  EXPECT_EQ(c.flow.window_size, 9);
  EXPECT_EQ(c.scenes, (std::vector<std::uint64_t>{1, 2, 3}));
  const auto again = parsed(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_EQ(again.dense_lr, 0.125);
  EXPECT_EQ(again.synthetic.sensor_noise, 0.01);
}

TEST(Config, ReferenceDefaultsRestoreHyperparameters) {
  auto c = parsed("resolution = 64\nmatcher_epochs = 2\nmatcher_lr = 0.5\ndense_epochs = 4\n");
  c.apply_reference_defaults();
  EXPECT_EQ(c.resolution, 224u);
  EXPECT_FALSE(c.matcher_epochs.has_value());
  EXPECT_FALSE(c.matcher_lr.has_value());
  EXPECT_EQ(c.dense_epochs, 50u);
  EXPECT_EQ(c.dense_lr, 0.01);
}

TEST(Config, DatasetSpecsAndGrid) {
  auto c = parsed("seed = 4\nresolution = 64\nsynth_frames = 90\ntrain_sets = a\ntest_sets = b\n"
                  "dataset.a = synthetic:5,6\ndataset.b = dir:/data/b\ndense_input = raw\n");
  const auto a = c.dataset_spec("a");
  EXPECT_EQ(a.source, DatasetSpec::Source::kSynthetic);
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{5, 6}));
  EXPECT_EQ(a.synthetic.frames, 90u);
  EXPECT_EQ(c.dataset_spec("b").directory, "/data/b");
  EXPECT_THROW(c.dataset_spec("zzz"), ConfigError);
  const auto g = c.grid();
  EXPECT_EQ(g.seed, 4u);
  EXPECT_EQ(g.resolution, 64u);
  EXPECT_EQ(g.datasets.size(), 2u);
  EXPECT_EQ(g.dense_input, DenseInput::kRaw);
  EXPECT_NO_THROW(g.validate());
}

TEST(Config, FileLoadingNamesPathAndLine) {
  vsync::testing::TempDir dir("cfg");
  {
    std::ofstream out(dir / "run.cfg");
    out << "seed = 1\n\nnope = 2\n";
  }
  RunConfig c;
  const auto msg = error_of([&] { load_config_file(c, dir / "run.cfg"); });
  EXPECT_NE(msg.find("run.cfg:3:"), std::string::npos) << msg;
  EXPECT_THROW(load_config_file(c, dir / "missing.cfg"), ConfigError);
}
