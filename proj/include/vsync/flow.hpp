#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsync/image.hpp"
#include "vsync/paramset.hpp"

namespace vsync {

/// Per-pixel displacement from one frame to the next, stored as two planes.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), dx(w * h, 0.0), dy(w * h, 0.0) {}
};

struct FlowParams {
  int levels = 3;
  double pyramid_scale = 0.5;
  int window_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const {
    if (levels < 1) throw std::invalid_argument("FlowParams: levels must be >= 1");
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) throw std::invalid_argument("FlowParams: pyramid scale must be in (0, 1)");
    if (window_size < 3 || window_size % 2 == 0) throw std::invalid_argument("FlowParams: window size must be odd and >= 3");
    if (iterations < 1) throw std::invalid_argument("FlowParams: iterations must be >= 1");
    if (poly_n < 1) throw std::invalid_argument("FlowParams: polynomial neighborhood must be >= 1");
    if (poly_sigma <= 0.0) throw std::invalid_argument("FlowParams: polynomial sigma must be positive");
  }
};

namespace flow_detail {

// Quadratic model f(p) ~ p'Ap + b'p + c per pixel, stored as
// {b1, b2, a11, a22, a12}.
struct Expansion {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::array<double, 5>> coef;
};

inline Expansion poly_expand(const std::vector<double>& img, std::size_t w, std::size_t h, int n, double sigma) {
  const auto g = gaussian_kernel(sigma, n);
  const int taps = 2 * n + 1;

  // Normal equations for basis {1, x, y, x^2, y^2, xy} under weights g(x)g(y).
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (int y = -n; y <= n; ++y) {
    for (int x = -n; x <= n; ++x) {
      const double wgt = g[static_cast<std::size_t>(x + n)] * g[static_cast<std::size_t>(y + n)];
      const Eigen::Matrix<double, 6, 1> b{1.0, double(x), double(y), double(x * x), double(y * y), double(x * y)};
      gram += wgt * b * b.transpose();
    }
  }
  const Eigen::Matrix<double, 6, 6> inv = gram.inverse();

  const auto iw = static_cast<int>(w), ih = static_cast<int>(h);
  // Vertical pass: weighted sums of y^0, y^1, y^2.
  std::vector<std::array<double, 3>> vert(w * h);
  for (int y = 0; y < ih; ++y) {
    for (int x = 0; x < iw; ++x) {
      std::array<double, 3> acc{};
      for (int k = 0; k < taps; ++k) {
        const int dy = k - n;
        const int yy = std::clamp(y + dy, 0, ih - 1);
        const double v = g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(yy * iw + x)];
        acc[0] += v;
        acc[1] += v * dy;
        acc[2] += v * dy * dy;
      }
      vert[static_cast<std::size_t>(y * iw + x)] = acc;
    }
  }

  Expansion e{w, h, std::vector<std::array<double, 5>>(w * h)};
  for (int y = 0; y < ih; ++y) {
    for (int x = 0; x < iw; ++x) {
      Eigen::Matrix<double, 6, 1> m = Eigen::Matrix<double, 6, 1>::Zero();
      for (int k = 0; k < taps; ++k) {
        const int dx = k - n;
        const int xx = std::clamp(x + dx, 0, iw - 1);
        const auto& v = vert[static_cast<std::size_t>(y * iw + xx)];
        const double gx = g[static_cast<std::size_t>(k)];
        m[0] += gx * v[0];
        m[1] += gx * dx * v[0];
        m[2] += gx * v[1];
        m[3] += gx * dx * dx * v[0];
        m[4] += gx * v[2];
        m[5] += gx * dx * v[1];
      }
      const Eigen::Matrix<double, 6, 1> r = inv * m;
      e.coef[static_cast<std::size_t>(y * iw + x)] = {r[1], r[2], r[3], r[4], 0.5 * r[5]};
    }
  }
  return e;
}

inline std::array<double, 5> sample(const Expansion& e, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(e.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(e.height - 1));
  const auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, e.width - 1), y1 = std::min(y0 + 1, e.height - 1);
  const double wx = x - static_cast<double>(x0), wy = y - static_cast<double>(y0);
  std::array<double, 5> out{};
  const auto& c00 = e.coef[y0 * e.width + x0];
  const auto& c10 = e.coef[y0 * e.width + x1];
  const auto& c01 = e.coef[y1 * e.width + x0];
  const auto& c11 = e.coef[y1 * e.width + x1];
  for (std::size_t i = 0; i < 5; ++i) {
    out[i] = (c00[i] * (1 - wx) + c10[i] * wx) * (1 - wy) + (c01[i] * (1 - wx) + c11[i] * wx) * wy;
  }
  return out;
}

// One displacement refinement: per-pixel normal equations from the averaged
// quadratic terms, Gaussian-smoothed over the window, then solved.
inline void refine(const Expansion& e1, const Expansion& e2, FlowField& flow, double window_sigma) {
  const std::size_t n = flow.width * flow.height;
  std::array<std::vector<double>, 5> terms;
  for (auto& t : terms) t.assign(n, 0.0);
  for (std::size_t y = 0; y < flow.height; ++y) {
    for (std::size_t x = 0; x < flow.width; ++x) {
      const std::size_t i = y * flow.width + x;
      const double fx = flow.dx[i], fy = flow.dy[i];
      const auto& r1 = e1.coef[i];
      const auto r2 = sample(e2, static_cast<double>(x) + fx, static_cast<double>(y) + fy);
      const double a11 = 0.5 * (r1[2] + r2[2]);
      const double a22 = 0.5 * (r1[3] + r2[3]);
      const double a12 = 0.5 * (r1[4] + r2[4]);
      const double b1 = -0.5 * (r2[0] - r1[0]) + a11 * fx + a12 * fy;
      const double b2 = -0.5 * (r2[1] - r1[1]) + a12 * fx + a22 * fy;
      terms[0][i] = a11 * a11 + a12 * a12;
      terms[1][i] = a12 * (a11 + a22);
      terms[2][i] = a12 * a12 + a22 * a22;
      terms[3][i] = a11 * b1 + a12 * b2;
      terms[4][i] = a12 * b1 + a22 * b2;
    }
  }
  for (auto& t : terms) t = blur_plane(t, flow.width, flow.height, window_sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double g11 = terms[0][i], g12 = terms[1][i], g22 = terms[2][i];
    const double h1 = terms[3][i], h2 = terms[4][i];
    const double det = g11 * g22 - g12 * g12;
    const double scale = std::max(std::abs(g11) + std::abs(g22), 1e-30);
    const double idet = 1.0 / (det + 1e-6 * scale * scale + 1e-30);
    flow.dx[i] = (g22 * h1 - g12 * h2) * idet;
    flow.dy[i] = (g11 * h2 - g12 * h1) * idet;
  }
}

inline std::vector<double> resize_plane(const std::vector<double>& src, std::size_t w, std::size_t h, std::size_t nw,
                                        std::size_t nh) {
  ImageFrame f(w, h, 1);
  f.data = src;
  return resize_bilinear(f, nw, nh).data;
}

}  // namespace flow_detail

/// Dense Farneback flow from `prev` to `next`: next(p + flow(p)) ~ prev(p).
inline FlowField farneback_flow(const ImageFrame& prev, const ImageFrame& next, const FlowParams& params = {}) {
  params.validate();
  if (prev.channels != 1 || next.channels != 1) throw std::invalid_argument("farneback_flow: frames must be grayscale");
  if (prev.width != next.width || prev.height != next.height) {
    throw std::invalid_argument("farneback_flow: frame dimensions differ (" + std::to_string(prev.width) + "x" +
                                std::to_string(prev.height) + " vs " + std::to_string(next.width) + "x" +
                                std::to_string(next.height) + ")");
  }
  const std::size_t w = prev.width, h = prev.height;
  const double window_sigma = 0.3 * ((params.window_size - 1) * 0.5 - 1.0) + 0.8;

  // Level sizes from coarsest to finest; stop shrinking below the expansion window.
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  double s = 1.0;
  for (int l = 0; l < params.levels; ++l) {
    const auto lw = static_cast<std::size_t>(std::lround(static_cast<double>(w) * s));
    const auto lh = static_cast<std::size_t>(std::lround(static_cast<double>(h) * s));
    if (l > 0 && (lw < static_cast<std::size_t>(2 * params.poly_n + 1) || lh < static_cast<std::size_t>(2 * params.poly_n + 1))) break;
    sizes.emplace_back(lw, lh);
    s *= params.pyramid_scale;
  }
  std::reverse(sizes.begin(), sizes.end());

  FlowField flow;
  for (std::size_t level = 0; level < sizes.size(); ++level) {
    const auto [lw, lh] = sizes[level];
    std::vector<double> p = prev.data, q = next.data;
    if (lw != w || lh != h) {
      const double blur = (static_cast<double>(w) / static_cast<double>(lw) - 1.0) * 0.5;
      p = flow_detail::resize_plane(blur_plane(p, w, h, blur), w, h, lw, lh);
      q = flow_detail::resize_plane(blur_plane(q, w, h, blur), w, h, lw, lh);
    }
    if (level == 0) {
      flow = FlowField(lw, lh);
    } else {
      const double sx = static_cast<double>(lw) / static_cast<double>(flow.width);
      const double sy = static_cast<double>(lh) / static_cast<double>(flow.height);
      FlowField up(lw, lh);
      up.dx = flow_detail::resize_plane(flow.dx, flow.width, flow.height, lw, lh);
      up.dy = flow_detail::resize_plane(flow.dy, flow.width, flow.height, lw, lh);
      for (auto& v : up.dx) v *= sx;
      for (auto& v : up.dy) v *= sy;
      flow = std::move(up);
    }
    const auto e1 = flow_detail::poly_expand(p, lw, lh, params.poly_n, params.poly_sigma);
    const auto e2 = flow_detail::poly_expand(q, lw, lh, params.poly_n, params.poly_sigma);
    for (int it = 0; it < params.iterations; ++it) flow_detail::refine(e1, e2, flow, window_sigma);
  }

  const double limit = static_cast<double>(std::max(w, h));
  for (auto* plane : {&flow.dx, &flow.dy}) {
    for (auto& v : *plane) v = std::isfinite(v) ? std::clamp(v, -limit, limit) : 0.0;
  }
  return flow;
}

enum class FlowEncoding { kDisplacement, kMagnitude };

inline constexpr double kFlowRange = 10.0;

/// Encode a flow field as a model input frame: (dx, dy) mapped from
/// [-10, 10] px to [0, 1] (two channels), or |flow| / 10 (one channel).
inline ImageFrame flow_to_frame(const FlowField& flow, std::size_t resolution,
                                FlowEncoding encoding = FlowEncoding::kDisplacement, int index = 0) {
  const std::size_t channels = encoding == FlowEncoding::kDisplacement ? 2 : 1;
  ImageFrame f(flow.width, flow.height, channels, 0.0, index);
  for (std::size_t i = 0; i < flow.dx.size(); ++i) {
    if (encoding == FlowEncoding::kDisplacement) {
      f.data[2 * i] = std::clamp((flow.dx[i] + kFlowRange) / (2.0 * kFlowRange), 0.0, 1.0);
      f.data[2 * i + 1] = std::clamp((flow.dy[i] + kFlowRange) / (2.0 * kFlowRange), 0.0, 1.0);
    } else {
      f.data[i] = std::clamp(std::hypot(flow.dx[i], flow.dy[i]) / kFlowRange, 0.0, 1.0);
    }
  }
  return resize_bilinear(f, resolution, resolution);
}

/// Consecutive-frame flow of one lens: output frame t encodes flow t -> t+1.
inline Stream flow_stream(const Stream& frames, std::size_t resolution, const FlowParams& params = {},
                          FlowEncoding encoding = FlowEncoding::kDisplacement) {
  if (frames.size() < 2) throw DataError("flow_stream: need at least two frames, got " + std::to_string(frames.size()));
  Stream out;
  out.reserve(frames.size() - 1);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    const auto flow = farneback_flow(*frames[t], *frames[t + 1], params);
    out.push_back(std::make_shared<const ImageFrame>(flow_to_frame(flow, resolution, encoding, frames[t]->index)));
  }
  return out;
}

inline constexpr std::uint32_t kFlowFormatVersion = 1;

inline void save_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::write_header(out, kFlowFormatVersion, 0);
  io::put_u32(out, static_cast<std::uint32_t>(flow.width));
  io::put_u32(out, static_cast<std::uint32_t>(flow.height));
  for (double v : flow.dx) io::put_f64(out, v);
  for (double v : flow.dy) io::put_f64(out, v);
  if (!out) throw DataError("failed writing " + path.string());
}

inline FlowField load_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const auto header = io::read_header(in);
  if (header.version != kFlowFormatVersion) throw DataError("unsupported flow format version in " + path.string());
  const auto w = io::get_u32(in);
  const auto h = io::get_u32(in);
  FlowField f(w, h);
  for (auto& v : f.dx) v = io::get_f64(in);
  for (auto& v : f.dy) v = io::get_f64(in);
  return f;
}

}  // namespace vsync
