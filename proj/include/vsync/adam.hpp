#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsync/paramset.hpp"

namespace vsync {

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::unordered_map<std::string, std::vector<double>> m;
  std::unordered_map<std::string, std::vector<double>> v;

  explicit AdamState(double learning_rate = 0.001) : lr(learning_rate) {}
};

/// One bias-corrected Adam update over every parameter. Parameters without an
/// allocated gradient are treated as having a zero gradient.
inline void adam_step(ParamSet& params, AdamState& state) {
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto values = p.mutable_values();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace vsync
