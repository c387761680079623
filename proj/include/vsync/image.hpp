#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "vsync/tensor.hpp"

namespace vsync {

/// Data problems (unreadable files, short streams) as opposed to misuse.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major H x W x C pixel grid, C in {1, 2}, values in [0, 1].
struct ImageFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> data;
  int index = 0;

  ImageFrame() = default;
  ImageFrame(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0, int idx = 0)
      : width(w), height(h), channels(c), data(w * h * c, fill), index(idx) {}

  double& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }

  Tensor to_tensor() const { return Tensor({height, width, channels}, data); }

  bool in_unit_range() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }
  bool operator==(const ImageFrame& o) const {
    return width == o.width && height == o.height && channels == o.channels && data == o.data;
  }
};

using FramePtr = std::shared_ptr<const ImageFrame>;
using Stream = std::vector<FramePtr>;

/// Normalized 1-D Gaussian taps over [-radius, radius].
inline std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    s += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  }
  for (auto& v : k) v /= s;
  return k;
}

/// Separable Gaussian blur of a single plane with replicated borders.
inline std::vector<double> blur_plane(const std::vector<double>& plane, std::size_t w, std::size_t h, double sigma) {
  if (sigma <= 0.0) return plane;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const auto k = gaussian_kernel(sigma, radius);
  std::vector<double> tmp(plane.size()), out(plane.size());
  const auto iw = static_cast<int>(w), ih = static_cast<int>(h);
  for (int y = 0; y < ih; ++y) {
    for (int x = 0; x < iw; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, iw - 1);
        s += k[static_cast<std::size_t>(i + radius)] * plane[static_cast<std::size_t>(y * iw + xx)];
      }
      tmp[static_cast<std::size_t>(y * iw + x)] = s;
    }
  }
  for (int y = 0; y < ih; ++y) {
    for (int x = 0; x < iw; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, ih - 1);
        s += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy * iw + x)];
      }
      out[static_cast<std::size_t>(y * iw + x)] = s;
    }
  }
  return out;
}

/// Bilinear resize with pixel-center alignment and edge clamping.
inline ImageFrame resize_bilinear(const ImageFrame& src, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw std::invalid_argument("resize_bilinear: target size must be positive");
  if (src.width == 0 || src.height == 0) throw std::invalid_argument("resize_bilinear: empty source image");
  if (out_w == src.width && out_h == src.height) return src;
  ImageFrame dst(out_w, out_h, src.channels, 0.0, src.index);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        const double bot = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        dst.at(x, y, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

/// Decoded 8/16-bit raster before conversion (gray, gray+alpha, RGB or RGBA).
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  double max_value = 255.0;
  std::vector<std::uint16_t> samples;
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

/// Luma conversion to a single-channel frame normalized by the sample range.
inline ImageFrame to_gray_frame(const RawImage& img) {
  ImageFrame f(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const std::uint16_t* px = img.samples.data() + i * img.channels;
    double v;
    if (img.channels >= 3) {
      v = kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2];
    } else {
      v = px[0];
    }
    f.data[i] = std::clamp(v / img.max_value, 0.0, 1.0);
  }
  return f;
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& name) {
  skip_pnm_space(in);
  long long v = -1;
  in >> v;
  if (!in || v <= 0) throw DataError("malformed PNM header in " + name);
  return static_cast<std::size_t>(v);
}

inline RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError("unsupported PNM variant in " + path.string());
  }
  RawImage img;
  img.channels = magic[1] == '6' ? 3 : 1;
  img.width = read_pnm_int(in, path.string());
  img.height = read_pnm_int(in, path.string());
  const auto maxval = read_pnm_int(in, path.string());
  if (maxval > 65535) throw DataError("PNM maxval out of range in " + path.string());
  img.max_value = static_cast<double>(maxval);
  const std::size_t n = img.width * img.height * img.channels;
  img.samples.resize(n);
  in.get();
  const bool wide = maxval > 255;
  std::vector<unsigned char> buf(n * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw DataError("truncated pixel data in " + path.string());
  for (std::size_t i = 0; i < n; ++i) {
    img.samples[i] = wide ? static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]) : buf[i];
  }
  return img;
}

inline RawImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng initialisation failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed for " + path.string());
  }
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("cannot decode PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  img.max_value = depth == 16 ? 65535.0 : 255.0;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img.samples.resize(img.width * img.height * img.channels);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (depth == 16) {
      std::uint16_t s;
      std::memcpy(&s, buffer.data() + 2 * i, 2);
      img.samples[i] = s;
    } else {
      img.samples[i] = buffer[i];
    }
  }
  // Drop alpha so channel counts are 1 (gray) or 3 (RGB).
  if (img.channels == 2 || img.channels == 4) {
    const std::size_t keep = img.channels - 1;
    std::vector<std::uint16_t> out(img.width * img.height * keep);
    for (std::size_t p = 0; p < img.width * img.height; ++p) {
      for (std::size_t c = 0; c < keep; ++c) out[p * keep + c] = img.samples[p * img.channels + c];
    }
    img.samples = std::move(out);
    img.channels = keep;
  }
  return img;
}

inline std::string lower_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace detail

inline bool is_image_file(const std::filesystem::path& p) {
  const auto ext = detail::lower_extension(p);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

inline RawImage read_image(const std::filesystem::path& path) {
  const auto ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::read_pnm(path);
  throw DataError("unsupported image format: " + path.string());
}

/// Writes channel 0 as an 8-bit binary PGM.
inline void write_pgm(const std::filesystem::path& path, const ImageFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  std::vector<unsigned char> buf(frame.width * frame.height);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(frame.data[i * frame.channels], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace vsync
