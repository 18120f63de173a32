#pragma once

// Cost-model vs instrumented counts and wall-clock timings for one APP block
// and the kNN baseline block, at a given point count.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "appnet/appblock.hpp"
#include "appnet/reference.hpp"
#include "appnet/rng.hpp"

namespace appnet {

struct BenchRow {
  std::size_t n = 0, m = 0, k = 0;
  std::size_t model_macs = 0;    // closed form
  std::size_t counted_macs = 0;  // instrumented forward pass
  std::size_t baseline_macs = 0;
  double recompute_factor = 0.0;
  double dominant_ratio = 0.0;
  double total_ratio = 0.0;
  double app_seconds = 0.0;       // block forward, median
  double one_nn_seconds = 0.0;    // anchor assignment only
  double knn_seconds = 0.0;       // neighbor query of the baseline
  double baseline_seconds = 0.0;  // whole baseline block, 0 when skipped
};

struct BenchOptions {
  AppBlockConfig block;
  std::size_t k = 32;          // baseline neighbors
  std::size_t m_divisor = 2;   // baseline centers M = N / m_divisor
  std::size_t repeats = 5;
  bool baseline = true;
  std::uint64_t seed = 1;
};

template <class F>
double median_seconds(std::size_t repeats, F&& fn) {
  std::vector<double> t;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

inline BenchRow bench_block(std::size_t n, const BenchOptions& opt) {
  const auto& cfg = opt.block;
  cfg.validate();
  BenchRow row;
  row.n = n;
  row.m = std::max<std::size_t>(1, n / opt.m_divisor);
  row.k = std::min(opt.k, n);
  const auto cost = evaluate_cost(n, row.m, row.k, cfg.c_in, cfg.c_out, cfg.r_a, cfg);
  row.model_macs = cost.app.total_macs();
  row.baseline_macs = cost.baseline.total_macs();
  row.recompute_factor = cost.recompute_factor;
  row.dominant_ratio = cost.dominant_ratio;
  row.total_ratio = cost.total_ratio;

  Rng rng(opt.seed);
  std::vector<float> pts(3 * n), feats(n * cfg.c_in);
  for (auto& v : pts) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : feats) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  AppBlockParams<float> params(cfg, rng);
  const auto cloud = single_cloud(pts);
  const Tensor<float> f({n, cfg.c_in}, feats);

  CostReport counted;
  app_block_forward(cloud, f, cfg, params, Mode::Eval, opt.seed, 0, &counted);
  row.counted_macs = counted.total_macs();
  row.app_seconds = median_seconds(opt.repeats, [&] { app_block_forward(cloud, f, cfg, params, Mode::Eval, opt.seed); });

  const auto anchors = select_points<float>(pts, random_subsample(n, cfg.r_a, opt.seed));
  row.one_nn_seconds = median_seconds(opt.repeats, [&] { one_nn_assign<float>(pts, anchors); });
  const auto centers = select_points<float>(pts, random_subsample(n, opt.m_divisor, opt.seed));
  row.knn_seconds = median_seconds(opt.repeats, [&] { knn<float>(pts, centers, row.k); });
  if (opt.baseline) {
    const KnnBlockConfig kc{row.m, row.k, cfg.c_in, cfg.c_out};
    KnnBlockParams<float> kp(kc, rng);
    row.baseline_seconds = median_seconds(opt.repeats, [&] { knn_block<float>(pts, feats, kc, kp, opt.seed); });
  }
  return row;
}

struct LinearFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

/// Least-squares y = slope * x + intercept.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need two or more paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
  return fit;
}

}  // namespace appnet
