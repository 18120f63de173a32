#pragma once

// Oracles and baselines: literal per-block O(n^2) aggregation, a kNN
// grouping block and closed-form operation counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "appnet/appblock.hpp"
#include "appnet/counters.hpp"
#include "appnet/geometry.hpp"
#include "appnet/ops.hpp"
#include "appnet/rng.hpp"

namespace appnet {

namespace detail {

// row x (1 x rows(W)) times W (rows x cols)
template <class T>
std::vector<T> row_times(const std::vector<T>& x, std::span<const T> w, std::size_t cols) {
  std::vector<T> out(cols, T(0));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r] * w[r * cols + c];
  return out;
}

template <class T>
T gamma_scalar(Family f, T w) {
  switch (f) {
    case Family::Linear: return w;
    case Family::Exponential: return std::exp(w);
    case Family::Cosine: return std::cos(w);
    case Family::Sine: return std::sin(w);
  }
  throw std::logic_error("gamma_scalar: bad family");
}

}  // namespace detail

/// Anchor-free aggregation evaluated literally: for every point i, loop over
/// all j of its block and average the pairwise term. `phi` is the position
/// encoding (N x c_in), `w` the relation weight (relation_in x c_in).
template <class T>
std::vector<T> direct_block_aggregate(std::span<const T> features, std::span<const T> phi,
                                      std::span<const std::size_t> assignment, const AppBlockConfig& cfg,
                                      std::span<const T> w) {
  const std::size_t n = assignment.size(), c = cfg.c_in, out_c = cfg.pull_channels();
  if (features.size() != n * c || phi.size() != n * c || w.size() != cfg.relation_in() * c)
    throw std::invalid_argument("direct_block_aggregate: size mismatch");
  std::vector<T> out(n * out_c, T(0));
  const bool pw_linear = cfg.style == Style::PointwiseMLP && cfg.family == Family::Linear;
  const bool zero = cfg.pull_mode == PullMode::ZeroFeature;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    std::vector<T> acc(out_c, T(0));
    for (std::size_t j = 0; j < n; ++j) {
      if (assignment[j] != assignment[i]) continue;
      ++count;
      std::vector<T> dphi(c);
      for (std::size_t k = 0; k < c; ++k) dphi[k] = phi[j * c + k] - phi[i * c + k];
      if (pw_linear) {
        std::vector<T> x(2 * c);
        for (std::size_t k = 0; k < c; ++k) {
          x[k] = zero ? features[j * c + k] : features[j * c + k] - features[i * c + k];
          x[c + k] = dphi[k];
        }
        const auto y = detail::row_times(x, w, c);
        for (std::size_t k = 0; k < c; ++k) acc[k] += y[k];
        continue;
      }
      const auto u = detail::row_times(dphi, w, c);
      if (cfg.style == Style::AdaptiveWeight) {
        for (std::size_t k = 0; k < c; ++k) acc[k] += features[j * c + k] * detail::gamma_scalar(cfg.family, u[k]);
      } else {
        for (std::size_t k = 0; k < c; ++k) {
          acc[k] += zero ? features[j * c + k] : features[j * c + k] - features[i * c + k];
          acc[c + k] += detail::gamma_scalar(cfg.family, u[k]);
        }
      }
    }
    for (std::size_t k = 0; k < out_c; ++k) out[i * out_c + k] = acc[k] / static_cast<T>(count);
  }
  return out;
}

struct KnnBlockConfig {
  std::size_t m = 512;
  std::size_t k = 32;
  std::size_t c_in = 32;
  std::size_t c_out = 64;
};

/// Single-scale grouping block: per-neighbor linear map of
/// [feature, relative position] with a leaky rectifier, max over neighbors.
template <class T>
struct KnnBlockParams {
  std::vector<T> weight;  // (c_in + 3) x c_out
  std::vector<T> bias;    // c_out

  KnnBlockParams() = default;
  KnnBlockParams(const KnnBlockConfig& cfg, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(cfg.c_in + 3));
    weight.resize((cfg.c_in + 3) * cfg.c_out);
    for (auto& v : weight) v = static_cast<T>(rng.uniform(-bound, bound));
    bias.assign(cfg.c_out, T(0));
  }
};

template <class T>
struct KnnBlockOutput {
  std::vector<T> centers;   // M x 3
  std::vector<T> features;  // M x c_out
};

template <class T>
KnnBlockOutput<T> knn_block(std::span<const T> points, std::span<const T> features, const KnnBlockConfig& cfg,
                            const KnnBlockParams<T>& params, std::uint64_t seed, CostReport* cost = nullptr) {
  const std::size_t n = points.size() / 3, ci = cfg.c_in, co = cfg.c_out;
  if (cfg.k > n) throw std::invalid_argument("knn_block: K exceeds the number of points");
  if (cfg.m < 1 || cfg.m > n) throw std::invalid_argument("knn_block: need 1 <= M <= N centers");
  if (features.size() != n * ci) throw std::invalid_argument("knn_block: feature size mismatch");
  if (params.weight.size() != (ci + 3) * co || params.bias.size() != co)
    throw std::invalid_argument("knn_block: parameter size mismatch");

  // seeded choice of M distinct centers
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < cfg.m; ++i) std::swap(perm[i], perm[i + rng.uniform_index(n - i)]);
  perm.resize(cfg.m);

  KnnBlockOutput<T> out;
  out.centers = select_points<T>(points, perm);
  const auto nbrs = knn<T>(points, out.centers, cfg.k);
  out.features.assign(cfg.m * co, T(0));
  std::vector<T> x(ci + 3);
  for (std::size_t c = 0; c < cfg.m; ++c) {
    std::vector<T> best(co, -std::numeric_limits<T>::infinity());
    for (std::size_t j = 0; j < cfg.k; ++j) {
      const std::size_t q = nbrs[c * cfg.k + j];
      for (std::size_t k = 0; k < ci; ++k) x[k] = features[q * ci + k];
      for (std::size_t d = 0; d < 3; ++d) x[ci + d] = points[3 * q + d] - out.centers[3 * c + d];
      auto y = detail::row_times(x, std::span<const T>(params.weight), co);
      for (std::size_t o = 0; o < co; ++o) {
        T v = y[o] + params.bias[o];
        v = v > T(0) ? v : T(kLeakySlope) * v;
        best[o] = std::max(best[o], v);
      }
    }
    std::copy(best.begin(), best.end(), out.features.begin() + c * co);
  }
  if (cost) {
    cost->add("group", 0, cfg.m * cfg.k * (ci + 3));
    cost->add("mlp", cfg.m * cfg.k * (ci + 3) * co, cfg.m * cfg.k * co);
    cost->add("pooling", 0, cfg.m * co);
  }
  return out;
}

/// Closed-form per-step counts for one APP block on a single cloud of N
/// points, using the same step names as the instrumented forward pass.
inline CostReport app_block_cost(std::size_t n, const AppBlockConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.c_in, m = std::max<std::size_t>(1, ceil_div(n, cfg.r_a));
  const std::size_t m_down = std::max<std::size_t>(1, ceil_div(n, cfg.r_d));
  const std::size_t comps = static_cast<std::size_t>(component_count(cfg.family));
  const bool pw = cfg.style == Style::PointwiseMLP;
  const bool pw_linear = pw && cfg.family == Family::Linear;

  CostReport r;
  if (cfg.posenc != PosEncMode::None) {
    r.add("position_encoding", n * 3 * c, n * c);
    r.add("anchor_encoding", m * 3 * c, m * c);
  }
  r.add("relation", n * cfg.relation_in() * c, n * c);

  std::size_t push_products = 0, payload = 0;
  if (pw_linear) {
    payload = 1;
  } else if (!pw) {
    push_products = comps;
    payload = comps + (cfg.family == Family::Linear ? 1 : 0);
  } else {
    payload = comps + 1;
  }
  const std::size_t push = n * c * push_products + m * c * payload;
  r.add("push", push, push);

  std::size_t pull_products = pw_linear ? 0 : comps;
  std::size_t extra = pw_linear && cfg.pull_mode == PullMode::ZeroFeature ? n * 2 * c * c : 0;
  r.add("pull", n * c * pull_products + extra, n * cfg.pull_channels());

  const std::size_t out_c = cfg.out_channels();
  r.add("channel_mixing", cfg.update_style == UpdateStyle::Identity ? 0 : n * cfg.mixer_in() * cfg.c_out, n * out_c);
  r.add("block_pool", 0, m_down * out_c);
  return r;
}

inline CostReport knn_block_cost(const KnnBlockConfig& cfg) {
  CostReport r;
  r.add("group", 0, cfg.m * cfg.k * (cfg.c_in + 3));
  r.add("mlp", cfg.m * cfg.k * (cfg.c_in + 3) * cfg.c_out, cfg.m * cfg.k * cfg.c_out);
  r.add("pooling", 0, cfg.m * cfg.c_out);
  return r;
}

/// Headline numbers comparing the two blocks.
struct CostSummary {
  CostReport app;
  CostReport baseline;
  double recompute_factor = 0.0;  // M*K / N
  double dominant_ratio = 0.0;    // M*K*(C_in+3)*C_out / (2*N*C_in*C_out)
  double total_ratio = 0.0;       // all baseline MACs / all APP MACs
};

inline CostSummary evaluate_cost(std::size_t n, std::size_t m, std::size_t k, std::size_t c_in, std::size_t c_out,
                                 std::size_t r_a, const AppBlockConfig& base = {}) {
  if (n == 0 || m == 0 || k == 0 || c_in == 0 || c_out == 0 || r_a == 0)
    throw std::invalid_argument("evaluate_cost: arguments must be positive");
  AppBlockConfig cfg = base;
  cfg.c_in = c_in;
  cfg.c_out = c_out;
  cfg.r_a = r_a;
  CostSummary s;
  s.app = app_block_cost(n, cfg);
  s.baseline = knn_block_cost({m, k, c_in, c_out});
  s.recompute_factor = static_cast<double>(m * k) / static_cast<double>(n);
  s.dominant_ratio = static_cast<double>(m * k * (c_in + 3) * c_out) / static_cast<double>(2 * n * c_in * c_out);
  s.total_ratio = static_cast<double>(s.baseline.total_macs()) / static_cast<double>(s.app.total_macs());
  return s;
}

}  // namespace appnet
