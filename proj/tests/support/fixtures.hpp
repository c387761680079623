#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "vsync/flow.hpp"
#include "vsync/image.hpp"
#include "vsync/random.hpp"

namespace vsync::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "vsync") {
    static std::atomic<unsigned> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// 8-bit RGB PNG through libpng's simplified writer.
inline void write_png_rgb(const std::filesystem::path& path, std::size_t w, std::size_t h,
                          const std::vector<unsigned char>& rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error("png write failed: " + path.string());
  }
}

/// Band-limited random texture in [0, 1].
inline ImageFrame smooth_texture(std::size_t w, std::size_t h, std::uint64_t seed, double sigma = 2.0) {
  Rng rng(seed);
  std::vector<double> plane(w * h);
  for (auto& v : plane) v = rng.uniform();
  plane = blur_plane(plane, w, h, sigma);
  double lo = 1e9, hi = -1e9;
  for (double v : plane) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  ImageFrame f(w, h, 1);
  for (std::size_t i = 0; i < plane.size(); ++i) f.data[i] = (plane[i] - lo) / (hi - lo);
  return f;
}

/// Crop of `src` at (ox, oy); cropping the same texture at (ox - dx, oy - dy)
/// gives a frame whose content moved by (dx, dy).
inline ImageFrame crop(const ImageFrame& src, std::size_t ox, std::size_t oy, std::size_t w, std::size_t h) {
  ImageFrame f(w, h, 1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) f.at(x, y) = src.at(ox + x, oy + y);
  return f;
}

struct ShiftScore {
  double fraction_within = 0.0;
  std::size_t interior = 0;
};

/// Fraction of interior pixels (border excluded) whose flow lies within `tol`
/// of (dx, dy).
inline ShiftScore shift_recovery(const FlowField& flow, double dx, double dy, std::size_t border = 10, double tol = 0.5) {
  ShiftScore s;
  std::size_t ok = 0;
  for (std::size_t y = border; y + border < flow.height; ++y)
    for (std::size_t x = border; x + border < flow.width; ++x) {
      const std::size_t i = y * flow.width + x;
      ++s.interior;
      if (std::hypot(flow.dx[i] - dx, flow.dy[i] - dy) <= tol) ++ok;
    }
  s.fraction_within = s.interior ? static_cast<double>(ok) / static_cast<double>(s.interior) : 0.0;
  return s;
}

/// Flow between two crops of one texture that differ by an integer shift.
inline FlowField shifted_pair_flow(int dx, int dy, std::uint64_t seed, std::size_t size = 96, const FlowParams& params = {}) {
  const std::size_t pad = 16;
  const ImageFrame tex = smooth_texture(size + 2 * pad, size + 2 * pad, seed);
  const ImageFrame prev = crop(tex, pad, pad, size, size);
  const ImageFrame next = crop(tex, static_cast<std::size_t>(static_cast<int>(pad) - dx),
                               static_cast<std::size_t>(static_cast<int>(pad) - dy), size, size);
  return farneback_flow(prev, next, params);
}

}  // namespace vsync::testing
