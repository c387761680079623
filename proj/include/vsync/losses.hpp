#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsync/ops.hpp"
#include "vsync/tensor.hpp"

namespace vsync::losses {

inline constexpr double kLogClamp = 1e-7;
inline constexpr double kTripletMargin = 0.5;

/// Binary cross-entropy of one probability against a 0/1 label.
/// The probability is clipped to [1e-7, 1-1e-7]; clipped inputs get zero gradient.
inline Tensor bce_loss(const Tensor& pred, int label) {
  if (pred.size() != 1) throw std::invalid_argument("bce_loss: prediction must be a scalar, got " + shape_string(pred.shape()));
  if (label != 0 && label != 1) throw std::invalid_argument("bce_loss: label must be 0 or 1, got " + std::to_string(label));
  const double raw = pred[0];
  const double p = std::clamp(raw, kLogClamp, 1.0 - kLogClamp);
  const double y = label;
  const double loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  const bool inside = raw >= kLogClamp && raw <= 1.0 - kLogClamp;
  return Tensor::from_op({1}, {loss}, {pred}, [p, y, inside](vsync::detail::Node& self) {
    if (!inside) return;
    self.parents[0]->grad_buffer()[0] += self.grad[0] * (-y / p + (1.0 - y) / (1.0 - p));
  });
}

/// -ln(pred[label]) on a probability vector, same clipping as bce_loss.
inline Tensor categorical_ce_loss(const Tensor& pred, std::size_t label) {
  if (label >= pred.size()) {
    throw std::invalid_argument("categorical_ce_loss: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(pred.size() - 1) + "]");
  }
  const double raw = pred[label];
  const double p = std::clamp(raw, kLogClamp, 1.0 - kLogClamp);
  const bool inside = raw >= kLogClamp && raw <= 1.0 - kLogClamp;
  return Tensor::from_op({1}, {-std::log(p)}, {pred}, [label, p, inside](vsync::detail::Node& self) {
    if (!inside) return;
    self.parents[0]->grad_buffer()[label] += -self.grad[0] / p;
  });
}

namespace detail {

// Views a rank-1 tensor as one row and a rank-2 tensor as a batch of rows.
struct Rows {
  std::size_t count;
  std::size_t width;
};

inline Rows triplet_rows(const Tensor& fa, const Tensor& fp, const Tensor& fn, const char* op) {
  for (const Tensor* t : {&fp, &fn}) {
    if (t->shape() != fa.shape()) {
      throw std::invalid_argument(std::string(op) + ": embedding shape mismatch " + shape_string(fa.shape()) +
                                  " vs " + shape_string(t->shape()));
    }
  }
  if (fa.rank() == 1) return {1, fa.dim(0)};
  if (fa.rank() == 2) return {fa.dim(0), fa.dim(1)};
  throw std::invalid_argument(std::string(op) + ": embeddings must be rank 1 or 2, got " + shape_string(fa.shape()));
}

inline double cosine(const double* a, const double* b, std::size_t d, double& na, double& nb) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  na = std::sqrt(aa);
  nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return ab / (na * nb);
}

// Accumulates scale * d cos(a,b) / da into ga and / db into gb.
inline void cosine_grad(const double* a, const double* b, std::size_t d, double scale, double* ga, double* gb) {
  double na = 0.0, nb = 0.0;
  const double c = cosine(a, b, d, na, nb);
  if (na == 0.0 || nb == 0.0) return;
  const double inv = 1.0 / (na * nb);
  for (std::size_t i = 0; i < d; ++i) {
    if (ga) ga[i] += scale * (b[i] * inv - c * a[i] / (na * na));
    if (gb) gb[i] += scale * (a[i] * inv - c * b[i] / (nb * nb));
  }
}

}  // namespace detail

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double na = 0.0, nb = 0.0;
  return detail::cosine(a.data(), b.data(), a.size(), na, nb);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// mean_i max(|fa-fp|^2 - |fa-fn|^2 + margin, 0). With hinge=false the
/// bracket is used unclipped.
inline Tensor triplet_euclidean_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn,
                                     double margin = kTripletMargin, bool hinge = true) {
  const auto rows = detail::triplet_rows(fa, fp, fn, "triplet_euclidean_loss");
  std::vector<char> active(rows.count);
  double total = 0.0;
  for (std::size_t r = 0; r < rows.count; ++r) {
    const std::size_t off = r * rows.width;
    const double dp = squared_distance(fa.values().subspan(off, rows.width), fp.values().subspan(off, rows.width));
    const double dn = squared_distance(fa.values().subspan(off, rows.width), fn.values().subspan(off, rows.width));
    const double v = dp - dn + margin;
    active[r] = !hinge || v > 0.0;
    if (active[r]) total += v;
  }
  const double n = static_cast<double>(rows.count);
  return Tensor::from_op({1}, {total / n}, {fa, fp, fn}, [rows, n, active = std::move(active)](vsync::detail::Node& self) {
    auto& a = *self.parents[0];
    auto& p = *self.parents[1];
    auto& q = *self.parents[2];
    double* ga = a.requires_grad ? a.grad_buffer().data() : nullptr;
    double* gp = p.requires_grad ? p.grad_buffer().data() : nullptr;
    double* gn = q.requires_grad ? q.grad_buffer().data() : nullptr;
    const double s = self.grad[0] / n;
    for (std::size_t r = 0; r < rows.count; ++r) {
      if (!active[r]) continue;
      for (std::size_t i = r * rows.width; i < (r + 1) * rows.width; ++i) {
        const double dap = a.value[i] - p.value[i];
        const double dan = a.value[i] - q.value[i];
        if (ga) ga[i] += s * 2.0 * (dap - dan);
        if (gp) gp[i] -= s * 2.0 * dap;
        if (gn) gn[i] += s * 2.0 * dan;
      }
    }
  });
}

/// mean_i max(cos(fa,fp) - cos(fa,fn) + margin, 0); cosine with a zero vector is 0.
inline Tensor triplet_cosine_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn,
                                  double margin = kTripletMargin) {
  const auto rows = detail::triplet_rows(fa, fp, fn, "triplet_cosine_loss");
  std::vector<char> active(rows.count);
  double total = 0.0;
  for (std::size_t r = 0; r < rows.count; ++r) {
    const std::size_t off = r * rows.width;
    const auto a = fa.values().subspan(off, rows.width);
    const double v = cosine_similarity(a, fp.values().subspan(off, rows.width)) -
                     cosine_similarity(a, fn.values().subspan(off, rows.width)) + margin;
    active[r] = v > 0.0;
    if (active[r]) total += v;
  }
  const double n = static_cast<double>(rows.count);
  return Tensor::from_op({1}, {total / n}, {fa, fp, fn}, [rows, n, active = std::move(active)](vsync::detail::Node& self) {
    auto& a = *self.parents[0];
    auto& p = *self.parents[1];
    auto& q = *self.parents[2];
    double* ga = a.requires_grad ? a.grad_buffer().data() : nullptr;
    double* gp = p.requires_grad ? p.grad_buffer().data() : nullptr;
    double* gn = q.requires_grad ? q.grad_buffer().data() : nullptr;
    const double s = self.grad[0] / n;
    for (std::size_t r = 0; r < rows.count; ++r) {
      if (!active[r]) continue;
      const std::size_t off = r * rows.width;
      detail::cosine_grad(a.value.data() + off, p.value.data() + off, rows.width, s, ga ? ga + off : nullptr,
                          gp ? gp + off : nullptr);
      detail::cosine_grad(a.value.data() + off, q.value.data() + off, rows.width, -s, ga ? ga + off : nullptr,
                          gn ? gn + off : nullptr);
    }
  });
}

}  // namespace vsync::losses
