#pragma once

// Randomized property checks shared by the command-line oracle-check and the
// acceptance runner: reducibility of the operator families, the reuse
// identities, anchor independence, agreement with the direct O(n^2) oracle,
// and finite-difference gradients of a whole network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <valarray>
#include <vector>

#include "appnet/appblock.hpp"
#include "appnet/network.hpp"
#include "appnet/ops.hpp"
#include "appnet/reference.hpp"
#include "appnet/rng.hpp"

namespace appnet::selfcheck {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // largest observed error
  double tolerance = 0.0;
  std::size_t cases = 0;
};

namespace detail {

template <class T>
std::vector<T> uniform_vec(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

// y = x W for a row vector x (c) and W (c x c)
template <class T>
std::valarray<T> apply(const std::vector<T>& w, const std::valarray<T>& x) {
  const std::size_t c = x.size();
  std::valarray<T> y(T(0), c);
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t k = 0; k < c; ++k) y[k] += x[r] * w[r * c + k];
  return y;
}

template <class T>
std::valarray<T> to_va(const std::vector<T>& v) {
  return std::valarray<T>(v.data(), v.size());
}

inline double mixed_error(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

template <class T>
CheckResult finish(std::string name, double worst, double tol, std::size_t cases) {
  return {std::move(name), worst < tol, worst, tol, cases};
}

}  // namespace detail

/// eps(alpha(W(x - a)), beta(W(a - y))) against gamma(W(x - y)) for random
/// W, x, a, y with C <= 64, per family.
template <class T>
CheckResult reducibility(std::size_t trials, std::uint64_t seed, double tol) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t cases = 0;
  for (auto f : kAllFamilies)
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t c = 1 + rng.uniform_index(64);
      const double bound = 1.0 / std::sqrt(static_cast<double>(c));
      const auto w = detail::uniform_vec<T>(c * c, rng, -bound, bound);
      const auto x = detail::to_va(detail::uniform_vec<T>(c, rng, -1.0, 1.0));
      const auto a = detail::to_va(detail::uniform_vec<T>(c, rng, -1.0, 1.0));
      const auto y = detail::to_va(detail::uniform_vec<T>(c, rng, -1.0, 1.0));
      const std::valarray<T> xa = x - a, ay = a - y, xy = x - y;
      const auto g = ops::epsilon_combine(f, ops::alpha(f, detail::apply(w, xa)), ops::beta(f, detail::apply(w, ay)));
      const auto d = ops::gamma_direct(f, detail::apply(w, xy));
      for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, detail::mixed_error(g[k], d[k]));
      ++cases;
    }
  return detail::finish<T>(std::string("reducibility/") + (sizeof(T) == 8 ? "double" : "single"), worst, tol, cases);
}

/// beta_from_alpha(alpha(u)) against alpha(-u), measured in units of the
/// type's epsilon relative to the larger magnitude.
template <class T>
CheckResult reuse_identities(std::size_t trials, std::uint64_t seed, double tol_ulps = 4.0) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t cases = 0;
  const double eps = std::numeric_limits<T>::epsilon();
  for (auto f : kAllFamilies)
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t c = 1 + rng.uniform_index(64);
      const auto u = detail::to_va(detail::uniform_vec<T>(c, rng, -25.0, 25.0));
      const auto reused = ops::beta_from_alpha(f, ops::alpha(f, u));
      const auto direct = ops::alpha(f, std::valarray<T>(-u));
      for (std::size_t k = 0; k < reused.size(); ++k)
        for (std::size_t i = 0; i < c; ++i) {
          const double a = reused[k][i], b = direct[k][i];
          const double scale = std::max({std::abs(a), std::abs(b), std::numeric_limits<double>::min()});
          worst = std::max(worst, std::abs(a - b) / (scale * eps));
        }
      ++cases;
    }
  return detail::finish<T>(std::string("reuse-identities/") + (sizeof(T) == 8 ? "double" : "single"), worst, tol_ulps,
                           cases);
}

inline std::vector<AppBlockConfig> block_variants(std::size_t c) {
  std::vector<AppBlockConfig> out;
  for (auto f : kAllFamilies)
    for (auto s : {Style::PointwiseMLP, Style::AdaptiveWeight})
      for (auto p : {PullMode::FeatureDifference, PullMode::ZeroFeature}) {
        AppBlockConfig cfg;
        cfg.c_in = c;
        cfg.c_out = c;
        cfg.family = f;
        cfg.style = s;
        cfg.pull_mode = p;
        out.push_back(cfg);
      }
  return out;
}

namespace detail {

template <class T>
void randomize_norm(BatchNormState<T>& bn, Rng& rng) {
  for (std::size_t j = 0; j < bn.channels(); ++j) {
    bn.running_mean[j] = static_cast<T>(rng.uniform(-0.3, 0.3));
    bn.running_var[j] = static_cast<T>(rng.uniform(0.5, 2.0));
  }
}

template <class T>
Tensor<T> pull_output(const std::vector<T>& pts, const Tensor<T>& f, const BlockPartition<T>& part,
                      const AppBlockConfig& cfg, AppBlockParams<T>& params) {
  auto enc = position_encode<T>(pts, part, cfg, params, Mode::Eval);
  auto st = push(f, enc, part, cfg, params);
  return pull(st, f, part, cfg, params);
}

template <class T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace detail

/// Moves every anchor to a random location while keeping the assignment and
/// compares pull outputs (Global position encoding, eval-mode statistics).
template <class T>
CheckResult anchor_independence(std::size_t clouds, std::uint64_t seed, double tol) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t t = 0; t < clouds; ++t)
    for (auto cfg : block_variants(2 + rng.uniform_index(7))) {
      const std::size_t n = 8 + rng.uniform_index(249);
      cfg.r_a = 1 + rng.uniform_index(32);
      const auto pts = detail::uniform_vec<T>(3 * n, rng, -1.0, 1.0);
      AppBlockParams<T> params(cfg, rng);
      detail::randomize_norm(params.posenc.norm, rng);
      auto f = Tensor<T>({n, cfg.c_in}, detail::uniform_vec<T>(n * cfg.c_in, rng, -1.0, 1.0));
      auto part = partition_batch(single_cloud(pts), cfg.r_a, Sampler::Random, rng.next_u64()).first;
      const auto g = detail::pull_output(pts, f, part, cfg, params);
      for (auto& v : part.anchors) v = static_cast<T>(rng.uniform(-5.0, 5.0));
      const auto g2 = detail::pull_output(pts, f, part, cfg, params);
      worst = std::max(worst, detail::max_abs_diff<T>(g.values(), g2.values()));
      ++cases;
    }
  return detail::finish<T>(std::string("anchor-independence/") + (sizeof(T) == 8 ? "double" : "single"), worst, tol,
                           cases);
}

/// push then pull against the literal per-block average of the pairwise term.
inline CheckResult oracle_equivalence(std::size_t instances, std::uint64_t seed, double tol) {
  Rng rng(seed);
  double worst = 0.0;
  const auto variants = block_variants(1);
  for (std::size_t t = 0; t < instances; ++t) {
    auto cfg = variants[t % variants.size()];
    cfg.c_in = cfg.c_out = 1 + rng.uniform_index(8);
    cfg.r_a = 1 + rng.uniform_index(32);
    const std::size_t n = 8 + rng.uniform_index(249);
    const auto pts = detail::uniform_vec<double>(3 * n, rng, -1.0, 1.0);
    AppBlockParams<double> params(cfg, rng);
    detail::randomize_norm(params.posenc.norm, rng);
    auto f = Tensor<double>({n, cfg.c_in}, detail::uniform_vec<double>(n * cfg.c_in, rng, -1.0, 1.0));
    const auto part = partition_batch(single_cloud(pts), cfg.r_a, Sampler::Random, rng.next_u64()).first;
    auto enc = position_encode<double>(pts, part, cfg, params, Mode::Eval);
    auto st = push(f, enc, part, cfg, params);
    const auto g = pull(st, f, part, cfg, params);
    const auto direct = direct_block_aggregate<double>(f.values(), enc.points.values(), part.assignment, cfg,
                                                       params.relation.weight.values());
    worst = std::max(worst, detail::max_abs_diff<double>(g.values(), direct));
  }
  return detail::finish<double>("oracle-equivalence/double", worst, tol, instances);
}

/// Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over every
/// element of `inputs`, central differences with step h.
inline double finite_difference_error(std::vector<Tensor<double>> inputs,
                                      const std::function<Tensor<double>()>& loss_fn, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.numel(), 0.0);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto vals = inputs[k].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = loss_fn().item();
      vals[i] = keep - h;
      const double down = loss_fn().item();
      vals[i] = keep;
      worst = std::max(worst, detail::mixed_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

/// Whole-network gradients in double precision on a 32-point, 2-class batch,
/// for every family and aggregator style.
inline CheckResult network_gradients(std::uint64_t seed, double tol, double h = 1e-6) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t cases = 0;
  for (auto fam : kAllFamilies)
    for (auto style : {Style::AdaptiveWeight, Style::PointwiseMLP}) {
      AppNetConfig cfg;
      cfg.embed_channels = 4;
      cfg.block_channels = {6, 8};
      cfg.r_a = {4, 4};
      cfg.r_d = {2, 2};
      cfg.classifier_hidden = {8};
      cfg.num_classes = 2;
      cfg.family = fam;
      cfg.style = style;
      AppNet<double> net(cfg, rng.next_u64());
      std::vector<PointCloud<double>> batch;
      for (int label = 0; label < 2; ++label) {
        PointCloud<double> c;
        c.positions = detail::uniform_vec<double>(3 * 32, rng, -1.0, 1.0);
        c.feature_channels = 4;
        c.features = detail::uniform_vec<double>(4 * 32, rng, -1.0, 1.0);
        c.label = label;
        batch.push_back(std::move(c));
      }
      const std::vector<int> labels{0, 1};
      const std::uint64_t fseed = rng.next_u64();
      worst = std::max(worst, finite_difference_error(net.parameters(), [&] {
                         return cross_entropy(net.forward(batch, Mode::Train, fseed), labels);
                       }, h));
      ++cases;
    }
  return detail::finish<double>("network-gradients/double", worst, tol, cases);
}

}  // namespace appnet::selfcheck
