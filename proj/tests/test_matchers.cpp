#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support/fixtures.hpp"
#include "vsync/matchers.hpp"

using namespace vsync;

namespace {

constexpr std::size_t kRes = 48;

StereoStreams scene(std::size_t frames, std::uint64_t seed, std::size_t res = kRes) {
  SyntheticConfig cfg;
  cfg.resolution = res;
  cfg.frames = frames;
  return render_synthetic_stereo(cfg, seed);
}

SequencePair window(const StereoStreams& s, int start, int delay) {
  SequencePair sp;
  sp.true_delay = delay;
  for (int j = 0; j < 20; ++j) {
    sp.left.push_back(s.left[start + j]);
    sp.right.push_back(s.right[start + j + delay]);
  }
  return sp;
}

ImageFrame noise_frame(std::size_t res, std::uint64_t seed) {
  Rng rng(seed);
  ImageFrame f(res, res, 1);
  for (auto& v : f.data) v = rng.uniform();
  return f;
}

}  // namespace

TEST(CnnBranch, ReferenceShapeTrace) {
  EXPECT_EQ(CnnBranch::shape_trace(224), (std::vector<std::size_t>{222, 111, 109, 54, 52, 26, 24, 12}));
  ParamSet ps(1);
  Rng rng(1);
  CnnBranch branch;
  branch.init(ps, rng);
  EXPECT_EQ(branch.forward(ps, noise_frame(224, 2).to_tensor()).shape(), (Shape{64}));
}

TEST(CnnBranch, EmbeddingLengthAtOtherResolutions) {
  ParamSet ps(1);
  Rng rng(1);
  CnnBranch branch(2);
  branch.init(ps, rng);
  for (std::size_t res : {46u, 64u, 81u}) {
    EXPECT_EQ(branch.forward(ps, Tensor::filled({res, res, 2}, 0.5)).size(), 64u) << res;
  }
  EXPECT_THROW(branch.forward(ps, Tensor::filled({45, 45, 2}, 0.5)), std::invalid_argument);
  EXPECT_THROW(branch.forward(ps, Tensor::filled({64, 64, 1}, 0.5)), std::invalid_argument);
  EXPECT_EQ(CnnBranch::shape_trace(46).back(), 1u);
}

TEST(Siamese, ZeroHeadScoresHalf) {
  SiameseModel m(1, 3);
  for (auto& v : m.params().at("head.weight").mutable_values()) v = 0.0;
  const auto a = noise_frame(kRes, 1), b = noise_frame(kRes, 2);
  EXPECT_DOUBLE_EQ(m.score(a, b), 0.5);
  EXPECT_DOUBLE_EQ(m.forward(a.to_tensor(), b.to_tensor()).item(), 0.5);
}

TEST(Siamese, SameFrameScoresSigmoidOfBias) {
  SiameseModel m(1, 4);
  m.params().at("head.bias").mutable_values()[0] = 0.7;
  const auto a = noise_frame(kRes, 3);
  EXPECT_NEAR(m.score(a, a), 1.0 / (1.0 + std::exp(-0.7)), 1e-12);
}

TEST(Siamese, SignedDifferenceIsAsymmetric) {
  SiameseModel m(1, 5);
  const auto a = noise_frame(kRes, 4), b = noise_frame(kRes, 5);
  EXPECT_NE(m.score(a, b), m.score(b, a));
  EXPECT_NEAR(m.score(a, b), m.forward(a.to_tensor(), b.to_tensor()).item(), 1e-12);
}

TEST(Siamese, OneSharedBranch) {
  SiameseModel m(1, 6);
  std::size_t branch_params = 0;
  for (const auto& [name, t] : m.params()) branch_params += name.rfind("branch.", 0) == 0;
  EXPECT_EQ(branch_params, 8u);
  EXPECT_EQ(m.params().size(), 10u);
  // Perturbing the shared kernel moves both sides identically.
  const auto a = noise_frame(kRes, 6);
  const auto before = m.embed(a);
  m.params().at("branch.conv4.bias").mutable_values()[0] += 0.25;
  const Tensor l = m.embed_tensor(a.to_tensor()), r = m.embed_tensor(a.to_tensor());
  EXPECT_EQ(std::vector<double>(l.values().begin(), l.values().end()), std::vector<double>(r.values().begin(), r.values().end()));
  EXPECT_NE(m.embed(a), before);
}

TEST(Siamese, TrainingLowersLossAndIsDeterministic) {
  const auto s = scene(30, 1);
  const auto pairs = make_pairs(s.left, s.right, 10, 10, 2);
  auto run = [&](double lr) {
    SiameseModel m(1, 7);
    auto opt = siamese_reference_options();
    opt.epochs = 50;
    opt.lr = lr;
    opt.seed = 3;
    const auto log = train_siamese(m, pairs, opt);
    return std::pair{log, m.params()};
  };
  const auto [log, params] = run(0.01);
  ASSERT_EQ(log.epoch_loss.size(), 50u);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
  const auto [log2, params2] = run(0.01);
  EXPECT_EQ(log.epoch_loss, log2.epoch_loss);
  EXPECT_TRUE(params.values_equal(params2));

  SiameseModel fresh(1, 7);
  SiameseModel frozen(1, 7);
  auto opt = siamese_reference_options();
  opt.epochs = 3;
  opt.lr = 0.0;
  train_siamese(frozen, pairs, opt);
  EXPECT_TRUE(frozen.params().values_equal(fresh.params()));
  EXPECT_THROW(train_siamese(frozen, {}, opt), std::invalid_argument);
}

TEST(Triplet, DistanceExamples) {
  const auto a = noise_frame(kRes, 8), b = noise_frame(kRes, 9);
  TripletModel euc(DistanceKind::kEuclidean, 1, 1), cos(DistanceKind::kCosine, 1, 1);
  EXPECT_EQ(euc.score(a, a), 0.0);
  EXPECT_NEAR(cos.score(a, a), 1.0, 1e-12);
  EXPECT_NEAR(euc.score(a, b), euc.score(b, a), 1e-12);
  EXPECT_NEAR(cos.score(a, b), cos.score(b, a), 1e-12);
  EXPECT_EQ(euc.polarity(), Polarity::kLowerIsMatch);
  EXPECT_EQ(cos.polarity(), Polarity::kLowerIsMatch);
}

TEST(Triplet, IdenticalTripletsGiveMargin) {
  TripletModel cos(DistanceKind::kCosine, 1, 2), euc(DistanceKind::kEuclidean, 1, 2);
  const Tensor x = noise_frame(kRes, 10).to_tensor();
  EXPECT_NEAR(cos.loss(x, x, x).item(), 0.5, 1e-12);
  EXPECT_NEAR(euc.loss(x, x, x).item(), 0.5, 1e-12);
}

TEST(Triplet, TrainingSeparatesNegatives) {
  const auto s = scene(40, 3);
  const auto triplets = make_triplets(s.left, s.right, 64, 4);
  TripletModel m(DistanceKind::kEuclidean, 1, 3);
  auto separation = [&] {
    double sep = 0.0;
    for (const auto& t : triplets) sep += m.score(*t.anchor, *t.negative) - m.score(*t.anchor, *t.positive);
    return sep / static_cast<double>(triplets.size());
  };
  const double before = separation();
  auto opt = triplet_reference_options();
  opt.epochs = 50;
  opt.seed = 5;
  const auto log = train_triplet(m, triplets, opt);
  EXPECT_GT(separation(), before);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
}

TEST(Triplet, HingeSwitch) {
  TripletModel m(DistanceKind::kEuclidean, 1, 4);
  const Tensor a = noise_frame(kRes, 11).to_tensor(), n = noise_frame(kRes, 12).to_tensor();
  const double hinged = m.loss(a, a, n).item();
  m.set_hinge(false);
  const double raw = m.loss(a, a, n).item();
  EXPECT_GE(hinged, 0.0);
  EXPECT_NEAR(hinged, std::max(raw, 0.0), 1e-12);
}

TEST(MatchingMatrix, OracleFindsDiagonals) {
  const auto s = scene(60, 4, 32);
  PixelOracleMatcher oracle;
  const auto m0 = build_matching_matrix(oracle, window(s, 20, 0));
  EXPECT_EQ(m0.scores.size(), 400u);
  EXPECT_EQ(m0.polarity, Polarity::kHigherIsMatch);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto row = m0.higher_is_match();
    const auto best = std::max_element(row.begin() + i * 20, row.begin() + i * 20 + 20) - (row.begin() + i * 20);
    EXPECT_EQ(static_cast<std::size_t>(best), i);
  }
  const auto m3 = build_matching_matrix(oracle, window(s, 20, 3));
  for (std::size_t i = 3; i < 20; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 20; ++j) best = m3.at(i, j) > m3.at(i, best) ? j : best;
    EXPECT_EQ(best, i - 3);
  }
}

TEST(MatchingMatrix, PolarityConsistentOnAlignedFrames) {
  const auto s = scene(40, 5, 48);
  TripletModel m(DistanceKind::kEuclidean, 1, 9);
  const auto triplets = make_triplets(s.left, s.right, 100, 6);
  auto opt = triplet_reference_options();
  opt.epochs = 15;
  train_triplet(m, triplets, opt);
  for (const FrameMatcher* matcher : std::initializer_list<const FrameMatcher*>{&m}) {
    const auto mat = build_matching_matrix(*matcher, window(s, 10, 0)).higher_is_match();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto row = mat.begin() + i * 20;
      hits += static_cast<std::size_t>(std::max_element(row, row + 20) - row) == i;
    }
    EXPECT_GE(hits, 18u);
  }
}

TEST(MatchingMatrix, CsvRoundTrip) {
  MatchingMatrix m;
  m.polarity = Polarity::kLowerIsMatch;
  m.model_tag = "triplet-euc";
  Rng rng(3);
  for (auto& v : m.scores) v = rng.normal();
  std::stringstream buf;
  write_matrix_csv(buf, m);
  const auto back = read_matrix_csv(buf);
  EXPECT_EQ(back.scores, m.scores);
  EXPECT_EQ(back.polarity, m.polarity);
  EXPECT_EQ(back.model_tag, m.model_tag);
  std::stringstream bad("# model=x\n1,2\n");
  EXPECT_THROW(read_matrix_csv(bad), DataError);
}

TEST(MatchingMatrix, WrongWindowLength) {
  SequencePair sp;
  PixelOracleMatcher oracle;
  EXPECT_THROW(build_matching_matrix(oracle, sp), std::invalid_argument);
}

TEST(Persistence, MetadataAndParamsRoundTrip) {
  vsync::testing::TempDir dir;
  ModelMetadata meta;
  meta.kind = ModelKind::kTripletCosine;
  meta.input_channels = 2;
  meta.resolution = 64;
  meta.input = "flow";
  auto matcher = make_matcher(meta, 17);
  save_metadata(dir / "m.json", meta);
  matcher_params(*matcher)->save(dir / "m.params");
  ModelMetadata back;
  auto loaded = load_matcher(dir / "m", &back);
  EXPECT_EQ(back, meta);
  EXPECT_EQ(loaded->tag(), "triplet-sim");
  EXPECT_TRUE(matcher_params(*loaded)->values_equal(*matcher_params(*matcher)));
  EXPECT_EQ(parse_model_kind("siamese"), ModelKind::kSiamese);
  EXPECT_THROW(parse_model_kind("sift"), std::invalid_argument);
}
