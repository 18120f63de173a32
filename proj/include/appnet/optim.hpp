#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "appnet/tensor.hpp"

namespace appnet {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update over all parameters, in place.
/// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter count changed");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) throw std::invalid_argument("adam_step: moment shape does not match parameter");
    auto w = p.mutable_values();
    const bool has = p.has_grad();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

struct LrSchedule {
  double lr_max = 2e-3;
  double lr_min = 2e-4;
  int t_max = 200;
  int warmup_epochs = 1;

  void validate() const {
    if (lr_min > lr_max) throw std::invalid_argument("LrSchedule: lr_min exceeds lr_max");
    if (t_max < 1) throw std::invalid_argument("LrSchedule: t_max must be at least 1");
    if (warmup_epochs < 0) throw std::invalid_argument("LrSchedule: negative warmup");
  }
};

/// Learning rate for a given epoch (and batch, during warmup).
///
/// Warmup epochs ramp linearly from lr_max / batches to lr_max across their
/// batches. Afterwards the rate follows a cosine from lr_max to lr_min over
/// t_max epochs and stays at lr_min.
inline double lr_at(int epoch, const LrSchedule& s, int batch = 0, int batches_per_epoch = 1) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  if (epoch < s.warmup_epochs) {
    const double total = static_cast<double>(s.warmup_epochs) * std::max(batches_per_epoch, 1);
    const double done = static_cast<double>(epoch) * std::max(batches_per_epoch, 1) + batch + 1;
    return s.lr_max * std::min(done, total) / total;
  }
  const int t = std::min(epoch - s.warmup_epochs, s.t_max);
  constexpr double pi = 3.14159265358979323846;
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(pi * t / s.t_max));
}

}  // namespace appnet
