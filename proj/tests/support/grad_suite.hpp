#pragma once

// Central-difference gradient checks for every layer and loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vsync/losses.hpp"
#include "vsync/ops.hpp"
#include "vsync/random.hpp"

namespace vsync::testing {

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr std::size_t kGradInstances = 20;

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
/// input element.
inline double grad_check(std::vector<Tensor> inputs, const ScalarFn& f, double h = kGradStep, double floor = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f(inputs).item();
      v[i] = keep - h;
      const double down = f(inputs).item();
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// Values at least `gap` apart from each other, shuffled.
inline Tensor distinct_tensor(Shape shape, Rng& rng, double gap = 0.05) {
  std::vector<double> v(shape_size(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = gap * static_cast<double>(i) + rng.uniform(0.0, gap / 4.0);
  rng.shuffle(v);
  return Tensor(std::move(shape), std::move(v));
}

/// Values kept away from zero so kinks are never straddled.
inline Tensor off_kink_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) {
    do x = rng.uniform(-1.0, 1.0);
    while (std::abs(x) < 1e-2);
  }
  return Tensor(std::move(shape), std::move(v));
}

/// Weighted sum, so every output element carries a distinct upstream gradient.
inline Tensor project(const Tensor& out, const Tensor& weights) { return ops::dot(out, weights); }

struct GradCase {
  std::string name;
  std::size_t instances = 0;
  double worst = 0.0;
  bool passed() const { return instances >= kGradInstances && worst < kGradTolerance; }
};

inline GradCase run_case(const std::string& name, std::uint64_t seed,
                         const std::function<double(Rng&)>& instance) {
  GradCase c{name, 0, 0.0};
  Rng rng(seed);
  for (std::size_t k = 0; k < kGradInstances; ++k) {
    c.worst = std::max(c.worst, instance(rng));
    ++c.instances;
  }
  return c;
}

inline std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> out;

  out.push_back(run_case("conv2d", 11, [](Rng& rng) {
    const std::size_t k = rng.uniform() < 0.3 ? 1 : 3;
    const std::size_t h = k + static_cast<std::size_t>(rng.uniform_int(0, 4));
    const std::size_t w = k + static_cast<std::size_t>(rng.uniform_int(0, 4));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t f = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const Tensor proj = random_tensor({(h - k + 1) * (w - k + 1) * f}, rng);
    return grad_check({random_tensor({h, w, c}, rng), random_tensor({k, k, c, f}, rng), random_tensor({f}, rng)},
                      [&](const std::vector<Tensor>& in) { return project(ops::conv2d(in[0], in[1], in[2]), proj); });
  }));

  out.push_back(run_case("maxpool2d", 12, [](Rng& rng) {
    const std::size_t h = static_cast<std::size_t>(rng.uniform_int(2, 7));
    const std::size_t w = static_cast<std::size_t>(rng.uniform_int(2, 7));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const Tensor proj = random_tensor({(h / 2) * (w / 2) * c}, rng);
    return grad_check({distinct_tensor({h, w, c}, rng)},
                      [&](const std::vector<Tensor>& in) { return project(ops::maxpool2d(in[0]), proj); });
  }));

  out.push_back(run_case("global_avg_pool", 13, [](Rng& rng) {
    const std::size_t h = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const std::size_t w = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const Tensor proj = random_tensor({c}, rng);
    return grad_check({random_tensor({h, w, c}, rng)},
                      [&](const std::vector<Tensor>& in) { return project(ops::global_avg_pool(in[0]), proj); });
  }));

  out.push_back(run_case("dense", 14, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const std::size_t m = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const Tensor proj = random_tensor({m}, rng);
    return grad_check({random_tensor({n}, rng), random_tensor({n, m}, rng), random_tensor({m}, rng)},
                      [&](const std::vector<Tensor>& in) { return project(ops::dense(in[0], in[1], in[2]), proj); });
  }));

  out.push_back(run_case("relu", 15, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const Tensor proj = random_tensor({n}, rng);
    return grad_check({off_kink_tensor({n}, rng)}, [&](const std::vector<Tensor>& in) { return project(ops::relu(in[0]), proj); });
  }));

  out.push_back(run_case("sigmoid", 16, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const Tensor proj = random_tensor({n}, rng);
    return grad_check({random_tensor({n}, rng, -6.0, 6.0)},
                      [&](const std::vector<Tensor>& in) { return project(ops::sigmoid(in[0]), proj); });
  }));

  out.push_back(run_case("softmax", 17, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const Shape shape = rng.uniform() < 0.5 ? Shape{n} : Shape{3, n};
    const Tensor proj = random_tensor({shape_size(shape)}, rng);
    return grad_check({random_tensor(shape, rng, -3.0, 3.0)},
                      [&](const std::vector<Tensor>& in) { return project(ops::softmax(in[0]), proj); });
  }));

  out.push_back(run_case("sub/sum/scale/reshape", 18, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 9));
    const double factor = rng.uniform(-2.0, 2.0);
    return grad_check({random_tensor({n}, rng), random_tensor({n}, rng)}, [&](const std::vector<Tensor>& in) {
      const Tensor d = ops::reshape(ops::sub(in[0], in[1]), {1, n});
      return ops::sum(ops::scale(ops::sigmoid(d), factor));
    });
  }));

  out.push_back(run_case("dot", 19, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 10));
    return grad_check({random_tensor({n}, rng), random_tensor({n}, rng)},
                      [](const std::vector<Tensor>& in) { return ops::dot(in[0], in[1]); });
  }));

  out.push_back(run_case("sigmoid(w.x) chain", 20, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 10));
    return grad_check({random_tensor({n}, rng), random_tensor({n}, rng)},
                      [](const std::vector<Tensor>& in) { return ops::sigmoid(ops::dot(in[0], in[1])); });
  }));

  out.push_back(run_case("bce_loss", 21, [](Rng& rng) {
    const int label = rng.uniform() < 0.5 ? 0 : 1;
    return grad_check({Tensor::scalar(rng.uniform(0.05, 0.95))},
                      [&](const std::vector<Tensor>& in) { return losses::bce_loss(in[0], label); });
  }));

  out.push_back(run_case("categorical_ce_loss", 22, [](Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 40));
    const auto label = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    return grad_check({random_tensor({n}, rng, -2.0, 2.0)}, [&](const std::vector<Tensor>& in) {
      return losses::categorical_ce_loss(ops::softmax(in[0]), label);
    });
  }));

  // Triplet instances are redrawn until the hinge argument is clear of zero.
  auto triplet_case = [](const std::string& name, std::uint64_t seed, bool cosine, bool hinge, bool batched) {
    return run_case(name, seed, [=](Rng& rng) {
      const std::size_t d = static_cast<std::size_t>(rng.uniform_int(2, 8));
      const Shape shape = batched ? Shape{3, d} : Shape{d};
      for (;;) {
        std::vector<Tensor> in{random_tensor(shape, rng), random_tensor(shape, rng), random_tensor(shape, rng)};
        auto loss = [&](const std::vector<Tensor>& x) {
          return cosine ? losses::triplet_cosine_loss(x[0], x[1], x[2])
                        : losses::triplet_euclidean_loss(x[0], x[1], x[2], losses::kTripletMargin, hinge);
        };
        bool clear = true;
        const std::size_t rows = batched ? 3 : 1;
        for (std::size_t r = 0; r < rows; ++r) {
          const auto a = in[0].values().subspan(r * d, d), p = in[1].values().subspan(r * d, d),
                     n = in[2].values().subspan(r * d, d);
          const double v = cosine ? losses::cosine_similarity(a, p) - losses::cosine_similarity(a, n) + losses::kTripletMargin
                                  : losses::squared_distance(a, p) - losses::squared_distance(a, n) + losses::kTripletMargin;
          clear = clear && std::abs(v) > 1e-3;
        }
        if (clear) return grad_check(in, loss);
      }
    });
  };
  out.push_back(triplet_case("triplet_euclidean_loss", 23, false, true, false));
  out.push_back(triplet_case("triplet_euclidean_loss (batch)", 24, false, true, true));
  out.push_back(triplet_case("triplet_euclidean_loss (no hinge)", 25, false, false, false));
  out.push_back(triplet_case("triplet_cosine_loss", 26, true, true, false));
  out.push_back(triplet_case("triplet_cosine_loss (batch)", 27, true, true, true));
  return out;
}

}  // namespace vsync::testing
