#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "appnet/reference.hpp"
#include "test_util.hpp"

using namespace appnet;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

}  // namespace

TEST(CostModel, HeadlineNumbers) {
  const auto s = evaluate_cost(1024, 512, 32, 32, 64, 64);
  EXPECT_DOUBLE_EQ(s.recompute_factor, 16.0);
  EXPECT_DOUBLE_EQ(s.dominant_ratio, 8.75);
  // one shared linear map over all points: N * (2 C_in) * C_out
  EXPECT_EQ(s.app.macs("channel_mixing"), 4194304u);
  EXPECT_EQ(s.baseline.macs("mlp"), 512u * 32 * 35 * 64);
  EXPECT_GT(s.total_ratio, 1.0);
  EXPECT_THROW(evaluate_cost(0, 1, 1, 1, 1, 1), std::invalid_argument);
}

TEST(CostModel, PeakAndStepNames) {
  const auto r = app_block_cost(1024, AppBlockConfig{});
  std::vector<std::string> names;
  for (const auto& s : r.steps) names.push_back(s.step);
  EXPECT_EQ(names, (std::vector<std::string>{"position_encoding", "anchor_encoding", "relation", "push", "pull",
                                              "channel_mixing", "block_pool"}));
  EXPECT_EQ(r.floats("block_pool"), 128u * 64);
  const auto k = knn_block_cost({512, 32, 32, 64});
  EXPECT_EQ(k.floats("group"), 512u * 32 * 35);
  EXPECT_EQ(k.peak_floats(), 512u * 32 * 64);
  EXPECT_EQ(k.macs("group"), 0u);
}

TEST(KnnBlock, CountersMatchClosedForm) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    KnnBlockConfig cfg;
    const std::size_t n = 16 + rng.uniform_index(300);
    cfg.m = 1 + rng.uniform_index(n);
    cfg.k = 1 + rng.uniform_index(std::min<std::size_t>(n, 40));
    cfg.c_in = 1 + rng.uniform_index(16);
    cfg.c_out = 1 + rng.uniform_index(16);
    KnnBlockParams<float> params(cfg, rng);
    CostReport got;
    const auto pts = random_vec(3 * n, rng);
    const auto f = random_vec(n * cfg.c_in, rng);
    auto out = knn_block<float>(pts, f, cfg, params, t, &got);
    EXPECT_EQ(out.features.size(), cfg.m * cfg.c_out);
    const auto want = knn_block_cost(cfg);
    for (const auto& s : want.steps) {
      EXPECT_EQ(got.macs(s.step), s.macs);
      EXPECT_EQ(got.floats(s.step), s.floats);
    }
  }
}

TEST(KnnBlock, SingleNeighborPassesThroughOwnFeature) {
  Rng rng(2);
  KnnBlockConfig cfg{20, 1, 3, 3};
  KnnBlockParams<double> params(cfg, rng);
  // identity on the feature part, zero on the relative position
  std::fill(params.weight.begin(), params.weight.end(), 0.0);
  for (std::size_t k = 0; k < 3; ++k) params.weight[k * 3 + k] = 1.0;
  std::vector<double> pts(60), f(60);
  for (auto& v : pts) v = rng.uniform(-1.0, 1.0);
  for (auto& v : f) v = rng.uniform(0.0, 1.0);
  auto out = knn_block<double>(pts, f, cfg, params, 3);
  for (std::size_t c = 0; c < 20; ++c) {
    // the center's own point is its nearest neighbor
    std::size_t src = 0;
    while (pts[3 * src] != out.centers[3 * c] || pts[3 * src + 1] != out.centers[3 * c + 1]) ++src;
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.features[c * 3 + k], f[src * 3 + k]);
  }
}

TEST(KnnBlock, NeighborOrderDoesNotMatter) {
  Rng rng(3);
  KnnBlockConfig cfg{8, 12, 4, 5};
  KnnBlockParams<double> params(cfg, rng);
  std::vector<double> pts(3 * 40), f(4 * 40);
  for (auto& v : pts) v = rng.uniform(-1.0, 1.0);
  for (auto& v : f) v = rng.uniform(-1.0, 1.0);
  auto out = knn_block<double>(pts, f, cfg, params, 4);
  const auto nbrs = knn<double>(pts, out.centers, cfg.k);
  for (std::size_t c = 0; c < cfg.m; ++c) {
    // same max over the neighbors visited in reverse
    for (std::size_t o = 0; o < cfg.c_out; ++o) {
      double best = -1e300;
      for (std::size_t j = cfg.k; j-- > 0;) {
        const std::size_t q = nbrs[c * cfg.k + j];
        double v = params.bias[o];
        for (std::size_t k = 0; k < 4; ++k) v += f[q * 4 + k] * params.weight[k * cfg.c_out + o];
        for (std::size_t d = 0; d < 3; ++d)
          v += (pts[3 * q + d] - out.centers[3 * c + d]) * params.weight[(4 + d) * cfg.c_out + o];
        best = std::max(best, v > 0 ? v : kLeakySlope * v);
      }
      EXPECT_NEAR(out.features[c * cfg.c_out + o], best, 1e-12);
    }
  }
}

TEST(KnnBlock, Errors) {
  Rng rng(4);
  std::vector<float> pts(30), f(10 * 2);
  KnnBlockConfig big{5, 11, 2, 2};
  KnnBlockParams<float> p(big, rng);
  EXPECT_THROW(knn_block<float>(pts, f, big, p, 1), std::invalid_argument);
  KnnBlockConfig many{11, 2, 2, 2};
  EXPECT_THROW(knn_block<float>(pts, f, many, KnnBlockParams<float>(many, rng), 1), std::invalid_argument);
  KnnBlockConfig ok{5, 2, 2, 2};
  EXPECT_THROW(knn_block<float>(pts, std::vector<float>(7), ok, KnnBlockParams<float>(ok, rng), 1), std::invalid_argument);
}

TEST(CostModel, ClosedFormsEqualInstrumentedCountersOnRandomSettings) {
  Rng rng(5);
  const Family fams[] = {Family::Linear, Family::Exponential, Family::Sine, Family::Cosine};
  for (int t = 0; t < 50; ++t) {
    AppBlockConfig base;
    base.family = fams[rng.uniform_index(4)];
    base.style = rng.uniform_index(2) ? Style::AdaptiveWeight : Style::PointwiseMLP;
    base.pull_mode = rng.uniform_index(2) ? PullMode::ZeroFeature : PullMode::FeatureDifference;
    base.r_d = 1 + rng.uniform_index(10);
    const std::size_t n = 16 + rng.uniform_index(500), c_in = 1 + rng.uniform_index(12), c_out = 1 + rng.uniform_index(12);
    const std::size_t m = 1 + rng.uniform_index(n), k = 1 + rng.uniform_index(std::min<std::size_t>(n, 16));
    const std::size_t r_a = 1 + rng.uniform_index(80);
    const auto s = evaluate_cost(n, m, k, c_in, c_out, r_a, base);

    AppBlockConfig cfg = base;
    cfg.c_in = c_in;
    cfg.c_out = c_out;
    cfg.r_a = r_a;
    if (cfg.posenc == PosEncMode::None && c_in < 3) continue;
    AppBlockParams<float> params(cfg, rng);
    CostReport app;
    app_block_forward(single_cloud(random_vec(3 * n, rng)), Tensor<float>({n, c_in}, random_vec(n * c_in, rng)), cfg,
                      params, Mode::Train, t, 0, &app);
    ASSERT_EQ(app.steps.size(), s.app.steps.size());
    for (const auto& st : s.app.steps) {
      EXPECT_EQ(app.macs(st.step), st.macs) << st.step;
      EXPECT_EQ(app.floats(st.step), st.floats) << st.step;
    }
    KnnBlockConfig kc{m, k, c_in, c_out};
    CostReport base_got;
    knn_block<float>(random_vec(3 * n, rng), random_vec(n * c_in, rng), kc, KnnBlockParams<float>(kc, rng), t,
                     &base_got);
    EXPECT_EQ(base_got.total_macs(), s.baseline.total_macs());
    EXPECT_DOUBLE_EQ(s.recompute_factor, static_cast<double>(m * k) / static_cast<double>(n));
  }
}

TEST(DirectAggregate, HandCheckedAdaptiveWeight) {
  // two points in one block, c = 1, W = [1], exp family
  const std::vector<double> f{2.0, 4.0}, phi{0.0, 1.0}, w{1.0};
  const std::vector<std::size_t> assign{0, 0};
  AppBlockConfig cfg;
  cfg.c_in = 1;
  const auto g = direct_block_aggregate<double>(f, phi, assign, cfg, w);
  EXPECT_NEAR(g[0], (2.0 + 4.0 * std::exp(1.0)) / 2, 1e-15);
  EXPECT_NEAR(g[1], (2.0 * std::exp(-1.0) + 4.0) / 2, 1e-15);
  EXPECT_THROW(direct_block_aggregate<double>(f, phi, assign, cfg, std::vector<double>{1, 2}), std::invalid_argument);
}
