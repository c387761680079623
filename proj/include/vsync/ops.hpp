#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsync/tensor.hpp"

namespace vsync::ops {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                ", got " + shape_string(t.shape()));
  }
}

inline void mismatch(const char* op, const std::string& what, std::size_t expected, std::size_t got) {
  throw std::invalid_argument(std::string(op) + ": " + what + " mismatch (expected " + std::to_string(expected) +
                              ", got " + std::to_string(got) + ")");
}

inline bool wants_grad(const vsync::detail::Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

// Patch matrix for a valid correlation: row per output pixel, column per
// (ky, kx, c) in the kernel's row-major order.
inline void im2col(const double* in, std::size_t h, std::size_t w, std::size_t c, std::size_t kh, std::size_t kw,
                   std::vector<double>& cols) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1, k = kh * kw * c;
  cols.resize(oh * ow * k);
  double* dst = cols.data();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const double* src = in + ((y + ky) * w + x) * c;
        std::copy(src, src + kw * c, dst);
        dst += kw * c;
      }
    }
  }
  (void)k;
}

inline void col2im_add(const double* cols, std::size_t h, std::size_t w, std::size_t c, std::size_t kh, std::size_t kw,
                       double* out) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const double* src = cols;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        double* dst = out + ((y + ky) * w + x) * c;
        for (std::size_t i = 0; i < kw * c; ++i) dst[i] += src[i];
        src += kw * c;
      }
    }
  }
}

}  // namespace detail

/// Valid (unpadded) cross-correlation with stride 1.
/// input H x W x C, kernels KH x KW x C x F, bias F -> (H-KH+1) x (W-KW+1) x F.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  constexpr const char* op = "conv2d";
  detail::require_rank(input, 3, op, "input");
  detail::require_rank(kernels, 4, op, "kernels");
  detail::require_rank(bias, 1, op, "bias");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1), f = kernels.dim(3);
  if (kernels.dim(2) != c) detail::mismatch(op, "kernel input channels (dim 2)", c, kernels.dim(2));
  if (bias.dim(0) != f) detail::mismatch(op, "bias length vs kernel filters (dim 3)", f, bias.dim(0));
  if (h < kh) detail::mismatch(op, "input height below kernel height", kh, h);
  if (w < kw) detail::mismatch(op, "input width below kernel width", kw, w);

  const std::size_t oh = h - kh + 1, ow = w - kw + 1, k = kh * kw * c, npix = oh * ow;
  std::vector<double> cols;
  detail::im2col(input.values().data(), h, w, c, kh, kw, cols);

  std::vector<double> out(npix * f);
  detail::MatrixMap o(out.data(), static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(f));
  detail::ConstMatrixMap p(cols.data(), static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(k));
  detail::ConstMatrixMap kk(kernels.values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
  Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), static_cast<Eigen::Index>(f));
  o.noalias() = p * kk;
  o.rowwise() += b;

  const bool keep_cols = kernels.requires_grad();
  return Tensor::from_op(
      {oh, ow, f}, std::move(out), {input, kernels, bias},
      [h, w, c, kh, kw, f, k, npix, cols = keep_cols ? std::move(cols) : std::vector<double>{}](
          vsync::detail::Node& self) {
        detail::ConstMatrixMap g(self.grad.data(), static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(f));
        auto& in_node = *self.parents[0];
        auto& k_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        if (detail::wants_grad(self, 2)) {
          // Plain loop: Eigen's vectorized colwise sum peels by address, so
          // its rounding would vary between allocations.
          auto& gb = b_node.grad_buffer();
          for (std::size_t px = 0; px < npix; ++px)
            for (std::size_t j = 0; j < f; ++j) gb[j] += self.grad[px * f + j];
        }
        if (detail::wants_grad(self, 1)) {
          detail::ConstMatrixMap p(cols.data(), static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(k));
          detail::MatrixMap gk(k_node.grad_buffer().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
          gk.noalias() += p.transpose() * g;
        }
        if (detail::wants_grad(self, 0)) {
          detail::ConstMatrixMap kk(k_node.value.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
          detail::RowMatrix gcols(static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(k));
          gcols.noalias() = g * kk.transpose();
          detail::col2im_add(gcols.data(), h, w, c, kh, kw, in_node.grad_buffer().data());
        }
      });
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Gradient goes to the first maximal cell of each window.
inline Tensor maxpool2d(const Tensor& input) {
  constexpr const char* op = "maxpool2d";
  detail::require_rank(input, 3, op, "input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h < 2 || w < 2) {
    throw std::invalid_argument(std::string(op) + ": input must be at least 2x2, got " + shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow * c);
  std::vector<std::size_t> argmax(out.size());
  const auto in = input.values();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (y * ow + x) * c + ch;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor::from_op({oh, ow, c}, std::move(out), {input}, [argmax = std::move(argmax)](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

/// Channel-wise mean over the spatial dimensions: H x W x C -> C.
inline Tensor global_avg_pool(const Tensor& input) {
  detail::require_rank(input, 3, "global_avg_pool", "input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2), n = h * w;
  std::vector<double> out(c, 0.0);
  const auto in = input.values();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[p * c + ch];
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return Tensor::from_op({c}, std::move(out), {input}, [n, c](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) g[p * c + ch] += self.grad[ch] * scale;
    }
  });
}

/// Affine map y = x W + b with x of length n, W n x m, b of length m.
inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  constexpr const char* op = "dense";
  detail::require_rank(weights, 2, op, "weights");
  detail::require_rank(bias, 1, op, "bias");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  if (input.size() != n) detail::mismatch(op, "input length vs weight rows", n, input.size());
  if (bias.dim(0) != m) detail::mismatch(op, "bias length vs weight columns", m, bias.dim(0));

  std::vector<double> out(bias.values().begin(), bias.values().end());
  Eigen::Map<Eigen::RowVectorXd> o(out.data(), static_cast<Eigen::Index>(m));
  Eigen::Map<const Eigen::RowVectorXd> x(input.values().data(), static_cast<Eigen::Index>(n));
  detail::ConstMatrixMap wm(weights.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  o.noalias() += x * wm;
  return Tensor::from_op({m}, std::move(out), {input, weights, bias}, [n, m](vsync::detail::Node& self) {
    Eigen::Map<const Eigen::RowVectorXd> g(self.grad.data(), static_cast<Eigen::Index>(m));
    auto& x_node = *self.parents[0];
    auto& w_node = *self.parents[1];
    if (detail::wants_grad(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd> gb(self.parents[2]->grad_buffer().data(), static_cast<Eigen::Index>(m));
      gb += g;
    }
    if (detail::wants_grad(self, 1)) {
      Eigen::Map<const Eigen::VectorXd> x(x_node.value.data(), static_cast<Eigen::Index>(n));
      detail::MatrixMap gw(w_node.grad_buffer().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      gw.noalias() += x * g;
    }
    if (detail::wants_grad(self, 0)) {
      detail::ConstMatrixMap wm(w_node.value.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      Eigen::Map<Eigen::RowVectorXd> gx(x_node.grad_buffer().data(), static_cast<Eigen::Index>(n));
      gx.noalias() += g * wm.transpose();
    }
  });
}

inline Tensor relu(const Tensor& input) {
  std::vector<double> out(input.values().begin(), input.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::from_op(input.shape(), std::move(out), {input}, [](vsync::detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Tensor sigmoid(const Tensor& input) {
  std::vector<double> out(input.size());
  const auto in = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = in[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return Tensor::from_op(input.shape(), std::move(out), {input}, [](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
}

/// Softmax over the last axis, stabilized by subtracting the row maximum.
inline Tensor softmax(const Tensor& input) {
  const std::size_t width = input.shape().back();
  const std::size_t rows = input.size() / width;
  std::vector<double> out(input.size());
  const auto in = input.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * width;
    double* dst = out.data() + r * width;
    const double mx = *std::max_element(src, src + width);
    double sum = 0.0;
    for (std::size_t i = 0; i < width; ++i) sum += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < width; ++i) dst[i] /= sum;
  }
  return Tensor::from_op(input.shape(), std::move(out), {input}, [rows, width](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = self.value.data() + r * width;
      const double* gy = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += gy[i] * s[i];
      for (std::size_t i = 0; i < width; ++i) g[r * width + i] += s[i] * (gy[i] - dot);
    }
  });
}

/// Elementwise a - b for equal shapes.
inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](vsync::detail::Node& self) {
    if (detail::wants_grad(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (double v : input.values()) s += v;
  return Tensor::from_op({1}, {s}, {input}, [](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor scale(const Tensor& input, double factor) {
  std::vector<double> out(input.values().begin(), input.values().end());
  for (auto& v : out) v *= factor;
  return Tensor::from_op(input.shape(), std::move(out), {input}, [factor](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

/// Plain dot product of two equal-length tensors.
inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) detail::mismatch("dot", "length", a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return Tensor::from_op({1}, {s}, {a, b}, [](vsync::detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double g = self.grad[0];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * pa.value[i];
    }
  });
}

/// Reinterpret the values under a new shape of the same size.
inline Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_size(shape) != input.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(input.values().begin(), input.values().end());
  return Tensor::from_op(std::move(shape), std::move(out), {input}, [](vsync::detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace vsync::ops
