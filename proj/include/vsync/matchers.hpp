#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vsync/adam.hpp"
#include "vsync/dataset.hpp"
#include "vsync/image.hpp"
#include "vsync/losses.hpp"
#include "vsync/ops.hpp"
#include "vsync/paramset.hpp"
#include "vsync/random.hpp"
#include "vsync/runtime.hpp"

namespace vsync {

enum class Polarity { kHigherIsMatch, kLowerIsMatch };

inline std::string to_string(Polarity p) { return p == Polarity::kHigherIsMatch ? "higher_is_match" : "lower_is_match"; }
inline Polarity parse_polarity(const std::string& s) {
  if (s == "higher_is_match") return Polarity::kHigherIsMatch;
  if (s == "lower_is_match") return Polarity::kLowerIsMatch;
  throw std::invalid_argument("unknown polarity '" + s + "'");
}

inline constexpr std::size_t kMatrixSide = kSequenceLength;
inline constexpr std::size_t kMatrixCells = kMatrixSide * kMatrixSide;

/// Scores of every (left i, right j) frame pair of a sequence pair.
struct MatchingMatrix {
  std::vector<double> scores = std::vector<double>(kMatrixCells, 0.0);
  Polarity polarity = Polarity::kHigherIsMatch;
  std::string model_tag;

  double& at(std::size_t i, std::size_t j) { return scores[i * kMatrixSide + j]; }
  double at(std::size_t i, std::size_t j) const { return scores[i * kMatrixSide + j]; }

  void validate() const {
    if (scores.size() != kMatrixCells) {
      throw std::invalid_argument("matching matrix must hold 20x20 = 400 scores, got " + std::to_string(scores.size()));
    }
  }

  /// Scores oriented so that larger always means a better match.
  std::vector<double> higher_is_match() const {
    validate();
    std::vector<double> out = scores;
    if (polarity == Polarity::kLowerIsMatch) {
      for (auto& v : out) v = -v;
    }
    return out;
  }
};

inline void write_matrix_csv(std::ostream& out, const MatchingMatrix& m) {
  m.validate();
  out << "# polarity=" << to_string(m.polarity) << " model=" << m.model_tag << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < kMatrixSide; ++i) {
    for (std::size_t j = 0; j < kMatrixSide; ++j) out << (j ? "," : "") << m.at(i, j);
    out << '\n';
  }
}

inline MatchingMatrix read_matrix_csv(std::istream& in) {
  MatchingMatrix m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw DataError("matrix CSV: missing header line");
  std::istringstream header(line.substr(2));
  std::string field;
  bool have_polarity = false;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw DataError("matrix CSV: malformed header field '" + field + "'");
    const auto key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "polarity") {
      m.polarity = parse_polarity(value);
      have_polarity = true;
    } else if (key == "model") {
      m.model_tag = value;
    }
  }
  if (!have_polarity) throw DataError("matrix CSV: header lacks polarity");
  m.scores.clear();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(row, cell, ',')) {
      m.scores.push_back(std::stod(cell));
      ++count;
    }
    if (count != kMatrixSide) throw DataError("matrix CSV: row with " + std::to_string(count) + " columns");
  }
  if (m.scores.size() != kMatrixCells) throw DataError("matrix CSV: expected 20 rows");
  return m;
}

/// Frame scorer split into a per-frame embedding and a pairwise comparison so
/// a 20x20 matrix needs only 40 embeddings.
class FrameMatcher {
 public:
  virtual ~FrameMatcher() = default;
  virtual Polarity polarity() const = 0;
  virtual std::string tag() const = 0;
  virtual std::vector<double> embed(const ImageFrame& frame) const = 0;
  virtual double compare(std::span<const double> left, std::span<const double> right) const = 0;

  double score(const ImageFrame& left, const ImageFrame& right) const { return compare(embed(left), embed(right)); }
};

/// Negative sum of squared pixel differences; needs no training.
class PixelOracleMatcher final : public FrameMatcher {
 public:
  Polarity polarity() const override { return Polarity::kHigherIsMatch; }
  std::string tag() const override { return "oracle"; }
  std::vector<double> embed(const ImageFrame& frame) const override { return frame.data; }
  double compare(std::span<const double> a, std::span<const double> b) const override {
    if (a.size() != b.size()) throw std::invalid_argument("oracle matcher: frame sizes differ");
    return -losses::squared_distance(a, b);
  }
};

/// Conv(32)-pool-Conv(48)-pool-Conv(48)-pool-Conv(64)-pool-GAP with 3x3
/// valid convolutions, stride 1 and ReLU.
class CnnBranch {
 public:
  static constexpr std::array<std::size_t, 4> kFilters{32, 48, 48, 64};
  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kEmbeddingSize = 64;
  static constexpr std::size_t kMinResolution = 46;

  explicit CnnBranch(std::size_t in_channels = 1, std::string prefix = "branch")
      : in_channels_(in_channels), prefix_(std::move(prefix)) {}

  std::size_t in_channels() const { return in_channels_; }

  void init(ParamSet& params, Rng& rng) const {
    std::size_t c = in_channels_;
    for (std::size_t l = 0; l < kFilters.size(); ++l) {
      const std::size_t f = kFilters[l];
      params.add(name(l, "kernel"), glorot_uniform({kKernel, kKernel, c, f}, kKernel * kKernel * c, kKernel * kKernel * f, rng));
      params.add(name(l, "bias"), Tensor::zeros({f}, true));
      c = f;
    }
  }

  Tensor forward(const ParamSet& params, const Tensor& image) const {
    if (image.rank() != 3 || image.dim(2) != in_channels_) {
      throw std::invalid_argument("CnnBranch: expected H x W x " + std::to_string(in_channels_) + " input, got " +
                                  shape_string(image.shape()));
    }
    if (image.dim(0) < kMinResolution || image.dim(1) < kMinResolution) {
      throw std::invalid_argument("CnnBranch: input " + shape_string(image.shape()) + " below the minimum " +
                                  std::to_string(kMinResolution) + "x" + std::to_string(kMinResolution));
    }
    Tensor x = image;
    for (std::size_t l = 0; l < kFilters.size(); ++l) {
      x = ops::relu(ops::conv2d(x, params.at(name(l, "kernel")), params.at(name(l, "bias"))));
      x = ops::maxpool2d(x);
    }
    return ops::global_avg_pool(x);
  }

  /// Spatial sizes after each conv and pool for a square input.
  static std::vector<std::size_t> shape_trace(std::size_t resolution) {
    std::vector<std::size_t> trace;
    std::size_t s = resolution;
    for (std::size_t l = 0; l < kFilters.size(); ++l) {
      s = s - (kKernel - 1);
      trace.push_back(s);
      s /= 2;
      trace.push_back(s);
    }
    return trace;
  }

 private:
  std::string name(std::size_t layer, const char* what) const {
    return prefix_ + ".conv" + std::to_string(layer + 1) + "." + what;
  }

  std::size_t in_channels_;
  std::string prefix_;
};

enum class ModelKind { kOracle, kSiamese, kTripletEuclidean, kTripletCosine };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kOracle: return "oracle";
    case ModelKind::kSiamese: return "siamese";
    case ModelKind::kTripletEuclidean: return "triplet-euc";
    case ModelKind::kTripletCosine: return "triplet-sim";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "oracle") return ModelKind::kOracle;
  if (s == "siamese") return ModelKind::kSiamese;
  if (s == "triplet-euc") return ModelKind::kTripletEuclidean;
  if (s == "triplet-sim") return ModelKind::kTripletCosine;
  throw std::invalid_argument("unknown matcher '" + s + "' (expected siamese, triplet-euc, triplet-sim or oracle)");
}

/// Shared branch, signed embedding difference, dense(64 -> 1), sigmoid.
class SiameseModel final : public FrameMatcher {
 public:
  explicit SiameseModel(std::size_t in_channels = 1, std::uint64_t seed = 0) : branch_(in_channels), params_(seed) {
    Rng rng(seed);
    branch_.init(params_, rng);
    params_.add("head.weight", glorot_uniform({CnnBranch::kEmbeddingSize, 1}, CnnBranch::kEmbeddingSize, 1, rng));
    params_.add("head.bias", Tensor::zeros({1}, true));
  }

  Polarity polarity() const override { return Polarity::kHigherIsMatch; }
  std::string tag() const override { return "siamese"; }
  std::size_t in_channels() const { return branch_.in_channels(); }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor embed_tensor(const Tensor& image) const { return branch_.forward(params_, image); }

  Tensor forward(const Tensor& left, const Tensor& right) const {
    const Tensor diff = ops::sub(embed_tensor(left), embed_tensor(right));
    return ops::sigmoid(ops::dense(diff, params_.at("head.weight"), params_.at("head.bias")));
  }

  std::vector<double> embed(const ImageFrame& frame) const override {
    const auto e = embed_tensor(frame.to_tensor());
    return {e.values().begin(), e.values().end()};
  }

  double compare(std::span<const double> a, std::span<const double> b) const override {
    const auto& w = params_.at("head.weight");
    double z = params_.at("head.bias")[0];
    for (std::size_t i = 0; i < a.size(); ++i) z += (a[i] - b[i]) * w[i];
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }

 private:
  CnnBranch branch_;
  ParamSet params_;
};

enum class DistanceKind { kEuclidean, kCosine };

/// Shared branch plus a linear dense(64 -> 64) projection. Scores are squared
/// Euclidean distance or cosine similarity; both read lower-is-match.
class TripletModel final : public FrameMatcher {
 public:
  explicit TripletModel(DistanceKind distance = DistanceKind::kEuclidean, std::size_t in_channels = 1,
                        std::uint64_t seed = 0)
      : distance_(distance), branch_(in_channels), params_(seed) {
    Rng rng(seed);
    branch_.init(params_, rng);
    constexpr auto d = CnnBranch::kEmbeddingSize;
    params_.add("proj.weight", glorot_uniform({d, d}, d, d, rng));
    params_.add("proj.bias", Tensor::zeros({d}, true));
  }

  Polarity polarity() const override { return Polarity::kLowerIsMatch; }
  std::string tag() const override { return distance_ == DistanceKind::kEuclidean ? "triplet-euc" : "triplet-sim"; }
  DistanceKind distance() const { return distance_; }
  std::size_t in_channels() const { return branch_.in_channels(); }
  /// Euclidean loss without the [.]+ hinge when false.
  void set_hinge(bool on) { hinge_ = on; }
  bool hinge() const { return hinge_; }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor embed_tensor(const Tensor& image) const {
    return ops::dense(branch_.forward(params_, image), params_.at("proj.weight"), params_.at("proj.bias"));
  }

  Tensor loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative) const {
    const Tensor a = embed_tensor(anchor), p = embed_tensor(positive), n = embed_tensor(negative);
    return distance_ == DistanceKind::kEuclidean ? losses::triplet_euclidean_loss(a, p, n, losses::kTripletMargin, hinge_)
                                                 : losses::triplet_cosine_loss(a, p, n);
  }

  std::vector<double> embed(const ImageFrame& frame) const override {
    const auto e = embed_tensor(frame.to_tensor());
    return {e.values().begin(), e.values().end()};
  }

  double compare(std::span<const double> a, std::span<const double> b) const override {
    return distance_ == DistanceKind::kEuclidean ? losses::squared_distance(a, b) : losses::cosine_similarity(a, b);
  }

 private:
  DistanceKind distance_;
  bool hinge_ = true;
  CnnBranch branch_;
  ParamSet params_;
};

/// M[i][j] = score(left[i], right[j]); embeddings are cached per frame.
class MatrixBuilder {
 public:
  explicit MatrixBuilder(const FrameMatcher& matcher) : matcher_(matcher) { tune_allocator(); }

  MatchingMatrix build(const SequencePair& seq) {
    if (seq.left.size() != kMatrixSide || seq.right.size() != kMatrixSide) {
      throw std::invalid_argument("build_matching_matrix: sequences must hold 20 frames each");
    }
    MatchingMatrix m;
    m.polarity = matcher_.polarity();
    m.model_tag = matcher_.tag();
    std::vector<const std::vector<double>*> right(kMatrixSide);
    for (std::size_t j = 0; j < kMatrixSide; ++j) right[j] = &embedding(seq.right[j]);
    for (std::size_t i = 0; i < kMatrixSide; ++i) {
      const auto& l = embedding(seq.left[i]);
      for (std::size_t j = 0; j < kMatrixSide; ++j) m.at(i, j) = matcher_.compare(l, *right[j]);
    }
    return m;
  }

  void clear() { cache_.clear(); }

 private:
  const std::vector<double>& embedding(const FramePtr& frame) {
    auto it = cache_.find(frame.get());
    if (it != cache_.end()) return it->second.second;
    auto& slot = cache_[frame.get()];
    slot.first = frame;
    slot.second = matcher_.embed(*frame);
    return slot.second;
  }

  const FrameMatcher& matcher_;
  std::unordered_map<const ImageFrame*, std::pair<FramePtr, std::vector<double>>> cache_;
};

inline MatchingMatrix build_matching_matrix(const FrameMatcher& matcher, const SequencePair& seq) {
  return MatrixBuilder(matcher).build(seq);
}

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch = 1;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

inline TrainOptions siamese_reference_options() { return {100, 1, 0.01, 0, {}}; }
inline TrainOptions triplet_reference_options() { return {100, 32, 0.001, 0, {}}; }

struct TrainingLog {
  std::vector<double> epoch_loss;
};

namespace train_detail {

// Shuffled mini-batch loop; `sample_loss` returns the recorded loss of one item.
template <typename Item, typename LossFn>
TrainingLog run(ParamSet& params, const std::vector<Item>& items, const TrainOptions& opt, LossFn&& sample_loss) {
  if (items.empty()) throw std::invalid_argument("training set is empty");
  if (opt.batch == 0) throw std::invalid_argument("batch size must be positive");
  tune_allocator();
  Rng rng(opt.seed);
  AdamState adam(opt.lr);
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::size_t stop = std::min(order.size(), start + opt.batch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      params.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        Tensor loss = sample_loss(items[order[k]]);
        total += loss.item();
        ops::scale(loss, inv).backward();
      }
      adam_step(params, adam);
    }
    log.epoch_loss.push_back(total / static_cast<double>(items.size()));
    if (opt.on_epoch) opt.on_epoch(epoch, log.epoch_loss.back());
  }
  return log;
}

}  // namespace train_detail

/// Binary cross-entropy on labeled pairs with Adam.
inline TrainingLog train_siamese(SiameseModel& model, const std::vector<LabeledPair>& pairs, const TrainOptions& opt) {
  return train_detail::run(model.params(), pairs, opt, [&](const LabeledPair& p) {
    return losses::bce_loss(model.forward(p.left->to_tensor(), p.right->to_tensor()), p.label);
  });
}

/// Triplet loss of the model's distance kind with Adam.
inline TrainingLog train_triplet(TripletModel& model, const std::vector<Triplet>& triplets, const TrainOptions& opt) {
  return train_detail::run(model.params(), triplets, opt, [&](const Triplet& t) {
    return model.loss(t.anchor->to_tensor(), t.positive->to_tensor(), t.negative->to_tensor());
  });
}

/// What is needed to rebuild a matcher next to its ParamSet file.
struct ModelMetadata {
  ModelKind kind = ModelKind::kOracle;
  std::size_t input_channels = 1;
  std::size_t resolution = 64;
  std::string input = "raw";

  nlohmann::json to_json() const {
    return {{"model", to_string(kind)},
            {"distance", kind == ModelKind::kTripletCosine ? "cosine" : kind == ModelKind::kTripletEuclidean ? "euclidean" : "none"},
            {"input_channels", input_channels},
            {"resolution", resolution},
            {"input", input}};
  }
  static ModelMetadata from_json(const nlohmann::json& j) {
    ModelMetadata m;
    m.kind = parse_model_kind(j.at("model").get<std::string>());
    m.input_channels = j.at("input_channels").get<std::size_t>();
    m.resolution = j.at("resolution").get<std::size_t>();
    m.input = j.at("input").get<std::string>();
    return m;
  }
  bool operator==(const ModelMetadata&) const = default;
};

inline std::unique_ptr<FrameMatcher> make_matcher(const ModelMetadata& meta, std::uint64_t seed) {
  switch (meta.kind) {
    case ModelKind::kOracle: return std::make_unique<PixelOracleMatcher>();
    case ModelKind::kSiamese: return std::make_unique<SiameseModel>(meta.input_channels, seed);
    case ModelKind::kTripletEuclidean: return std::make_unique<TripletModel>(DistanceKind::kEuclidean, meta.input_channels, seed);
    case ModelKind::kTripletCosine: return std::make_unique<TripletModel>(DistanceKind::kCosine, meta.input_channels, seed);
  }
  throw std::logic_error("unhandled model kind");
}

inline ParamSet* matcher_params(FrameMatcher& m) {
  if (auto* s = dynamic_cast<SiameseModel*>(&m)) return &s->params();
  if (auto* t = dynamic_cast<TripletModel*>(&m)) return &t->params();
  return nullptr;
}

inline void save_metadata(const std::filesystem::path& path, const ModelMetadata& meta) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << meta.to_json().dump(2) << '\n';
}

inline ModelMetadata load_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return ModelMetadata::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model metadata " + path.string() + ": " + e.what());
  }
}

/// Rebuilds a matcher from `<stem>.json` (+ `<stem>.params` for learned kinds).
inline std::unique_ptr<FrameMatcher> load_matcher(const std::filesystem::path& stem, ModelMetadata* meta_out = nullptr) {
  auto meta = load_metadata(stem.string() + ".json");
  auto matcher = make_matcher(meta, 0);
  if (auto* params = matcher_params(*matcher)) params->assign_values(ParamSet::load(stem.string() + ".params"));
  if (meta_out) *meta_out = meta;
  return matcher;
}

}  // namespace vsync
