#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsync/adam.hpp"
#include "vsync/dataset.hpp"
#include "vsync/losses.hpp"
#include "vsync/matchers.hpp"
#include "vsync/ops.hpp"
#include "vsync/paramset.hpp"

namespace vsync {

/// Class c <-> delay c - 20, covering [-20, 19].
inline int class_to_delay(int cls) {
  if (cls < 0 || cls >= kDelayClasses) throw std::invalid_argument("delay class " + std::to_string(cls) + " outside [0, 39]");
  return cls + kMinDelay;
}

inline int delay_to_class(int delay) {
  if (delay < kMinDelay || delay > kMaxDelay) {
    throw std::invalid_argument("delay " + std::to_string(delay) + " outside [-20, 19]");
  }
  return delay - kMinDelay;
}

struct DelayEstimate {
  int delay = 0;
  double confidence = 0.0;
  std::string method;
};

struct HeatmapOptions {
  /// Rank diagonals by votes / diagonal length instead of raw votes.
  bool normalize_by_length = false;
};

/// Each row votes for the diagonal k = i - j of its best column (first on
/// ties); the most-voted diagonal is the delay. Diagonal ties go to the
/// smallest |k|, then to the negative k.
inline DelayEstimate heatmap_estimate(const MatchingMatrix& matrix, const HeatmapOptions& opt = {}) {
  const auto s = matrix.higher_is_match();
  constexpr int side = static_cast<int>(kMatrixSide);
  std::vector<int> votes(2 * side - 1, 0);
  for (int i = 0; i < side; ++i) {
    const double* row = s.data() + i * side;
    const int best = static_cast<int>(std::max_element(row, row + side) - row);
    ++votes[static_cast<std::size_t>(i - best + side - 1)];
  }
  int winner = 0;
  double winner_score = -1.0;
  for (int k = -(side - 1); k <= side - 1; ++k) {
    const int v = votes[static_cast<std::size_t>(k + side - 1)];
    const double score = opt.normalize_by_length ? static_cast<double>(v) / (side - std::abs(k)) : v;
    const bool better = score > winner_score ||
                        (score == winner_score && (std::abs(k) < std::abs(winner) ||
                                                   (std::abs(k) == std::abs(winner) && k < winner)));
    if (better) {
      winner = k;
      winner_score = score;
    }
  }
  return {winner, votes[static_cast<std::size_t>(winner + side - 1)] / static_cast<double>(side), "heatmap"};
}

/// How a matrix becomes the 400 classifier inputs. kRaw flattens the
/// higher-is-match scores as they are; kRowArgmax keeps a 1 at each row's best
/// column (first on ties) and 0 elsewhere.
enum class DenseInput { kRaw, kRowArgmax };

inline std::string to_string(DenseInput d) { return d == DenseInput::kRaw ? "raw" : "row_argmax"; }

inline DenseInput parse_dense_input(const std::string& s) {
  if (s == "raw") return DenseInput::kRaw;
  if (s == "row_argmax") return DenseInput::kRowArgmax;
  throw std::invalid_argument("unknown DenseDelay input '" + s + "' (expected raw or row_argmax)");
}

/// Dense 400-64 (ReLU) - 32 (ReLU) - 40 (softmax) classifier over a flattened matrix.
class DenseDelayModel {
 public:
  static constexpr std::array<std::size_t, 4> kLayers{kMatrixCells, 64, 32, static_cast<std::size_t>(kDelayClasses)};

  explicit DenseDelayModel(std::uint64_t seed = 0, bool zero_init = false, DenseInput input = DenseInput::kRowArgmax)
      : params_(seed), input_(input) {
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < kLayers.size(); ++l) {
      const auto n = kLayers[l], m = kLayers[l + 1];
      params_.add(layer(l, "weight"), zero_init ? Tensor::zeros({n, m}, true) : glorot_uniform({n, m}, n, m, rng));
      params_.add(layer(l, "bias"), Tensor::zeros({m}, true));
    }
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  DenseInput input() const { return input_; }

  /// Row-major flatten of the matrix oriented higher-is-match, after the
  /// model's input transform.
  Tensor prepare_input(const MatchingMatrix& matrix) const {
    auto v = matrix.higher_is_match();
    if (v.size() != kMatrixCells) {
      throw std::invalid_argument("DenseDelay expects a 20x20 matrix, got " + std::to_string(v.size()) + " cells");
    }
    if (input_ == DenseInput::kRowArgmax) {
      for (std::size_t i = 0; i < kMatrixSide; ++i) {
        auto* row = v.data() + i * kMatrixSide;
        const auto best = std::max_element(row, row + kMatrixSide) - row;
        std::fill(row, row + kMatrixSide, 0.0);
        row[best] = 1.0;
      }
    }
    return Tensor::vector(std::move(v));
  }

  /// Class probabilities for a length-400 input.
  Tensor forward(const Tensor& input) const {
    if (input.size() != kMatrixCells) {
      throw std::invalid_argument("DenseDelay expects 400 inputs, got " + std::to_string(input.size()));
    }
    Tensor x = input;
    for (std::size_t l = 0; l + 1 < kLayers.size(); ++l) {
      x = ops::dense(x, params_.at(layer(l, "weight")), params_.at(layer(l, "bias")));
      x = l + 2 < kLayers.size() ? ops::relu(x) : ops::softmax(x);
    }
    return x;
  }

  DelayEstimate estimate(const MatchingMatrix& matrix) const {
    const Tensor p = forward(prepare_input(matrix));
    const auto v = p.values();
    const auto best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    return {class_to_delay(best), v[static_cast<std::size_t>(best)], "dense"};
  }

 private:
  static std::string layer(std::size_t l, const char* what) { return "dense" + std::to_string(l + 1) + "." + what; }

  ParamSet params_;
  DenseInput input_;
};

inline DelayEstimate densedelay_forward(const DenseDelayModel& model, const MatchingMatrix& matrix) {
  return model.estimate(matrix);
}

struct DelaySample {
  MatchingMatrix matrix;
  int label = 0;
};

inline TrainOptions densedelay_reference_options() { return {50, 32, 0.01, 0, {}}; }

/// Categorical cross-entropy with Adam; labels are class indices in [0, 39].
inline TrainingLog train_densedelay(DenseDelayModel& model, const std::vector<MatchingMatrix>& matrices,
                                    const std::vector<int>& labels, const TrainOptions& opt) {
  if (matrices.size() != labels.size()) throw std::invalid_argument("train_densedelay: matrices and labels differ in count");
  std::vector<DelaySample> samples;
  samples.reserve(matrices.size());
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kDelayClasses) {
      throw std::invalid_argument("train_densedelay: label " + std::to_string(labels[i]) + " outside [0, 39]");
    }
    samples.push_back({matrices[i], labels[i]});
  }
  return train_detail::run(model.params(), samples, opt, [&](const DelaySample& s) {
    return losses::categorical_ce_loss(model.forward(model.prepare_input(s.matrix)),
                                       static_cast<std::size_t>(s.label));
  });
}

}  // namespace vsync
