#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsync/image.hpp"
#include "vsync/random.hpp"

namespace vsync {

inline constexpr int kSequenceLength = 20;
inline constexpr int kMaxPairOffset = 10;
inline constexpr int kMinDelay = -20;
inline constexpr int kMaxDelay = 19;
inline constexpr int kDelayClasses = kMaxDelay - kMinDelay + 1;

struct LabeledPair {
  FramePtr left;
  FramePtr right;
  int label = 0;
  int offset = 0;
  int left_index = 0;
  int right_index = 0;
};

struct Triplet {
  FramePtr anchor;
  FramePtr positive;
  FramePtr negative;
  int anchor_index = 0;
  int negative_offset = 0;
};

/// Two 20-frame windows. Right frame j shows the instant of left frame j + delay.
struct SequencePair {
  std::vector<FramePtr> left;
  std::vector<FramePtr> right;
  int true_delay = 0;
  int left_start = 0;
  int right_start = 0;
};

struct StereoStreams {
  Stream left;
  Stream right;
};

/// Frames of one directory in filename order, converted to luma, resized to
/// resolution x resolution and scaled to [0, 1].
inline Stream load_frames(const std::filesystem::path& dir, std::size_t resolution) {
  if (resolution == 0) throw std::invalid_argument("load_frames: resolution must be positive");
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no image files in " + dir.string());
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  Stream out;
  out.reserve(files.size());
  int index = 0;
  for (const auto& f : files) {
    ImageFrame frame = resize_bilinear(to_gray_frame(read_image(f)), resolution, resolution);
    frame.index = index++;
    out.push_back(std::make_shared<const ImageFrame>(std::move(frame)));
  }
  return out;
}

/// Loads `<root>/left` and `<root>/right`; both must hold the same frame count.
inline StereoStreams load_stereo(const std::filesystem::path& root, std::size_t resolution) {
  StereoStreams s{load_frames(root / "left", resolution), load_frames(root / "right", resolution)};
  if (s.left.size() != s.right.size()) {
    throw DataError("left/right frame counts differ in " + root.string() + " (" + std::to_string(s.left.size()) +
                    " vs " + std::to_string(s.right.size()) + ")");
  }
  return s;
}

namespace dataset_detail {

struct OffsetCandidate {
  int t;
  int offset;
};

inline std::vector<OffsetCandidate> nonmatch_candidates(int length) {
  std::vector<OffsetCandidate> c;
  for (int t = 0; t < length; ++t) {
    for (int o = -kMaxPairOffset; o <= kMaxPairOffset; ++o) {
      if (o != 0 && t + o >= 0 && t + o < length) c.push_back({t, o});
    }
  }
  return c;
}

inline void check_streams(const Stream& left, const Stream& right, std::size_t min_length, const char* op) {
  if (left.size() != right.size()) {
    throw std::invalid_argument(std::string(op) + ": left/right streams differ in length (" + std::to_string(left.size()) +
                                " vs " + std::to_string(right.size()) + ")");
  }
  if (left.size() < min_length) {
    throw DataError(std::string(op) + ": streams need at least " + std::to_string(min_length) + " frames, got " +
                    std::to_string(left.size()));
  }
}

}  // namespace dataset_detail

/// Matching pairs are aligned frames; non-matching pairs pair left t with
/// right t+o, o in [-10,-1] U [1,10]. Sampled without replacement.
inline std::vector<LabeledPair> make_pairs(const Stream& left, const Stream& right, std::size_t n_match,
                                           std::size_t n_nonmatch, std::uint64_t seed) {
  dataset_detail::check_streams(left, right, kMaxPairOffset + 1, "make_pairs");
  const int length = static_cast<int>(left.size());
  auto nonmatch = dataset_detail::nonmatch_candidates(length);
  if (n_match > left.size()) {
    throw std::invalid_argument("make_pairs: " + std::to_string(n_match) + " matching pairs requested, only " +
                                std::to_string(left.size()) + " available");
  }
  if (n_nonmatch > nonmatch.size()) {
    throw std::invalid_argument("make_pairs: " + std::to_string(n_nonmatch) + " non-matching pairs requested, only " +
                                std::to_string(nonmatch.size()) + " available");
  }
  Rng rng(seed);
  std::vector<int> aligned(left.size());
  for (int t = 0; t < length; ++t) aligned[static_cast<std::size_t>(t)] = t;
  rng.shuffle(aligned);
  rng.shuffle(nonmatch);

  std::vector<LabeledPair> pairs;
  pairs.reserve(n_match + n_nonmatch);
  for (std::size_t i = 0; i < n_match; ++i) {
    const int t = aligned[i];
    pairs.push_back({left[static_cast<std::size_t>(t)], right[static_cast<std::size_t>(t)], 1, 0, t, t});
  }
  for (std::size_t i = 0; i < n_nonmatch; ++i) {
    const auto [t, o] = nonmatch[i];
    pairs.push_back({left[static_cast<std::size_t>(t)], right[static_cast<std::size_t>(t + o)], 0, o, t, t + o});
  }
  rng.shuffle(pairs);
  return pairs;
}

/// anchor = left[t], positive = right[t], negative = right[t+o] with the
/// non-matching offset rule.
inline std::vector<Triplet> make_triplets(const Stream& left, const Stream& right, std::size_t n, std::uint64_t seed) {
  dataset_detail::check_streams(left, right, kMaxPairOffset + 1, "make_triplets");
  auto candidates = dataset_detail::nonmatch_candidates(static_cast<int>(left.size()));
  if (n > candidates.size()) {
    throw std::invalid_argument("make_triplets: " + std::to_string(n) + " triplets requested, only " +
                                std::to_string(candidates.size()) + " available");
  }
  Rng rng(seed);
  rng.shuffle(candidates);
  std::vector<Triplet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [t, o] = candidates[i];
    const auto ut = static_cast<std::size_t>(t);
    out.push_back({left[ut], right[ut], right[static_cast<std::size_t>(t + o)], t, o});
  }
  return out;
}

/// Minimum stream length for sequence pairs: a 20-frame window plus 20 frames of slack.
inline constexpr std::size_t kMinSequenceStream = 2 * kSequenceLength;

/// Desynchronized 20-frame window pairs. Delays cover [-20, 19] with per-class
/// counts differing by at most one; the right window starts at left start + delay.
inline std::vector<SequencePair> make_sequence_pairs(const Stream& left, const Stream& right, std::size_t n,
                                                     std::uint64_t seed) {
  dataset_detail::check_streams(left, right, kMinSequenceStream, "make_sequence_pairs");
  const int length = static_cast<int>(left.size());
  Rng rng(seed);

  std::vector<int> delays;
  delays.reserve(n);
  for (std::size_t i = 0; i < n / kDelayClasses; ++i) {
    for (int d = kMinDelay; d <= kMaxDelay; ++d) delays.push_back(d);
  }
  std::vector<int> extra;
  for (int d = kMinDelay; d <= kMaxDelay; ++d) extra.push_back(d);
  rng.shuffle(extra);
  for (std::size_t i = 0; i < n % kDelayClasses; ++i) delays.push_back(extra[i]);
  rng.shuffle(delays);

  std::vector<SequencePair> out;
  out.reserve(n);
  for (int d : delays) {
    const int lo = std::max(0, -d);
    const int hi = length - kSequenceLength - std::max(0, d);
    const int start = static_cast<int>(rng.uniform_int(lo, hi));
    SequencePair sp;
    sp.true_delay = d;
    sp.left_start = start;
    sp.right_start = start + d;
    for (int j = 0; j < kSequenceLength; ++j) {
      sp.left.push_back(left[static_cast<std::size_t>(start + j)]);
      sp.right.push_back(right[static_cast<std::size_t>(start + d + j)]);
    }
    out.push_back(std::move(sp));
  }
  return out;
}

/// Parameters of the procedural stereo scene. Lengths are in pixels of a
/// 64-pixel frame and scale with the resolution.
struct SyntheticConfig {
  std::size_t resolution = 64;
  std::size_t frames = 120;
  double disparity = 1.0;
  double pan_speed = 1.5;
  int objects = 4;
  double object_speed = 1.5;
  double flicker = 0.04;
  double sensor_noise = 0.0;

  void validate() const {
    if (resolution < 16) throw std::invalid_argument("SyntheticConfig: resolution must be >= 16");
    if (frames < 2) throw std::invalid_argument("SyntheticConfig: need at least two frames");
    if (disparity < 0.0) throw std::invalid_argument("SyntheticConfig: disparity must be >= 0");
    if (objects < 0) throw std::invalid_argument("SyntheticConfig: object count must be >= 0");
    if (flicker < 0.0 || sensor_noise < 0.0) throw std::invalid_argument("SyntheticConfig: noise levels must be >= 0");
  }
};

namespace synth_detail {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const auto h = mix(seed ^ mix(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                static_cast<std::uint64_t>(iy) * 0x85157af5ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

// Smoothly interpolated lattice noise in [-1, 1] with the given cell size.
inline double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double fx = x / cell, fy = y / cell;
  const double x0 = std::floor(fx), y0 = std::floor(fy);
  double tx = fx - x0, ty = fy - y0;
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const auto ix = static_cast<std::int64_t>(x0), iy = static_cast<std::int64_t>(y0);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

struct Blob {
  double x0, y0, vx, vy;
  double radius, pulse_amp, pulse_freq, pulse_phase;
  double amplitude;
};

}  // namespace synth_detail

/// Procedural stereo scene: a camera panning vertically over a multi-scale
/// textured world with a slanted grating, pulsing blobs that move across the
/// view and per-instant flicker. The right view samples the same world
/// shifted horizontally by the disparity.
inline StereoStreams render_synthetic_stereo(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using namespace synth_detail;
  const double u = static_cast<double>(cfg.resolution) / 64.0;
  const double res = static_cast<double>(cfg.resolution);
  Rng rng(seed);
  const std::uint64_t texture_seed = rng.derive();
  const std::uint64_t flicker_seed = rng.derive();
  const double grating_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grating_turn = rng.uniform(0.6, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double world_span = cfg.pan_speed * u * static_cast<double>(cfg.frames) + res;

  std::vector<Blob> blobs;
  for (int k = 0; k < cfg.objects; ++k) {
    Blob b{};
    b.x0 = rng.uniform(0.0, res);
    b.y0 = rng.uniform(0.0, res);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.vx = std::cos(angle) * cfg.object_speed * u;
    b.vy = std::sin(angle) * cfg.object_speed * u;
    b.radius = rng.uniform(3.0, 6.0) * u;
    b.pulse_amp = rng.uniform(0.25, 0.5);
    b.pulse_freq = rng.uniform(0.08, 0.3);
    b.pulse_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.amplitude = rng.uniform(0.2, 0.35) * (k % 2 == 0 ? 1.0 : -1.0);
    blobs.push_back(b);
  }

  Rng noise_rng(rng.derive());
  StereoStreams out;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const double td = static_cast<double>(t);
    const double pan = cfg.pan_speed * u * td;
    for (int view = 0; view < 2; ++view) {
      const double offset = view == 0 ? 0.0 : cfg.disparity * u;
      ImageFrame f(cfg.resolution, cfg.resolution, 1, 0.0, static_cast<int>(t));
      for (std::size_t y = 0; y < cfg.resolution; ++y) {
        for (std::size_t x = 0; x < cfg.resolution; ++x) {
          const double wx = static_cast<double>(x) + offset;
          const double wy = static_cast<double>(y) + pan;
          double v = 0.3 + 0.35 * wy / world_span;
          double amp = 0.16;
          for (double cell = 64.0 * u; cell >= 4.0 * u; cell *= 0.5) {
            v += amp * value_noise(texture_seed + static_cast<std::uint64_t>(cell * 16), wx, wy, cell);
            amp *= 0.6;
          }
          const double theta = grating_turn * std::numbers::pi * wy / world_span;
          const double lambda = (8.0 + 4.0 * std::sin(2.0 * std::numbers::pi * wy / (0.6 * world_span))) * u;
          v += 0.08 * std::sin(2.0 * std::numbers::pi * (wx * std::cos(theta) + wy * std::sin(theta)) / lambda + grating_phase);
          v += cfg.flicker * value_noise(flicker_seed + t * 7919, wx, wy, 3.0 * u);
          for (const auto& b : blobs) {
            // Blob positions wrap in frame coordinates; the world position adds the pan.
            double bx = std::fmod(b.x0 + b.vx * td, res + 16.0 * u);
            double by = std::fmod(b.y0 + b.vy * td, res + 16.0 * u);
            if (bx < 0) bx += res + 16.0 * u;
            if (by < 0) by += res + 16.0 * u;
            bx -= 8.0 * u;
            by -= 8.0 * u;
            const double r = b.radius * (1.0 + b.pulse_amp * std::sin(b.pulse_freq * td + b.pulse_phase));
            const double dx = wx - bx, dy = (wy - pan) - by;
            v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
          }
          f.at(x, y) = v;
        }
      }
      for (auto& px : f.data) {
        if (cfg.sensor_noise > 0.0) px += cfg.sensor_noise * noise_rng.normal();
        px = std::clamp(px, 0.0, 1.0);
      }
      (view == 0 ? out.left : out.right).push_back(std::make_shared<const ImageFrame>(std::move(f)));
    }
  }
  return out;
}

/// One manifest row per labeled pair or sequence pair.
inline void write_manifest(const std::filesystem::path& path, const std::vector<LabeledPair>& pairs,
                           const std::vector<SequencePair>& sequences, const std::string& split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "kind,id,left_index,right_index,offset,label,split\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    out << "pair," << i << ',' << p.left_index << ',' << p.right_index << ',' << p.offset << ',' << p.label << ','
        << split << '\n';
  }
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    out << "sequence," << i << ',' << s.left_start << ',' << s.right_start << ',' << s.true_delay << ",," << split
        << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace vsync
