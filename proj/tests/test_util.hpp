#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "appnet/rng.hpp"
#include "appnet/selfcheck.hpp"
#include "appnet/tensor.hpp"

namespace testutil {

using appnet::Tensor;

inline Tensor<double> random_tensor(appnet::Shape shape, appnet::Rng& rng, double scale = 1.0, bool grad = true) {
  std::vector<double> v(appnet::shape_numel(shape));
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor<double>(std::move(shape), std::move(v), grad);
}

/// Largest mixed error |analytic - numeric| / max(1, |analytic|, |numeric|)
/// over every element of every input, central differences with step h.
inline double gradient_error(std::vector<Tensor<double>> inputs,
                             const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                             double h = 1e-6) {
  return appnet::selfcheck::finite_difference_error(inputs, [&] { return f(inputs); }, h);
}

template <class Span>
double max_abs_diff(const Span& a, const Span& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace testutil
