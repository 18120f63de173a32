#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "appnet/appblock.hpp"
#include "appnet/reference.hpp"
#include "test_util.hpp"

using namespace appnet;

namespace {

template <class T>
std::vector<T> random_points(std::size_t n, Rng& rng) {
  std::vector<T> p(3 * n);
  for (auto& v : p) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return p;
}

template <class T>
Tensor<T> random_features(std::size_t n, std::size_t c, Rng& rng) {
  std::vector<T> v(n * c);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return Tensor<T>({n, c}, std::move(v));
}

// Gives a norm layer non-trivial running statistics so eval mode is not the identity.
template <class T>
void randomize_norm(BatchNormState<T>& bn, Rng& rng) {
  for (std::size_t j = 0; j < bn.channels(); ++j) {
    bn.running_mean[j] = static_cast<T>(rng.uniform(-0.3, 0.3));
    bn.running_var[j] = static_cast<T>(rng.uniform(0.5, 2.0));
  }
}

template <class T>
std::vector<T> to_vec(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

std::vector<AppBlockConfig> all_variants(std::size_t c) {
  std::vector<AppBlockConfig> out;
  for (auto f : kAllFamilies)
    for (auto s : {Style::PointwiseMLP, Style::AdaptiveWeight})
      for (auto p : {PullMode::FeatureDifference, PullMode::ZeroFeature}) {
        AppBlockConfig cfg;
        cfg.c_in = c;
        cfg.c_out = 2 * c;
        cfg.family = f;
        cfg.style = s;
        cfg.pull_mode = p;
        out.push_back(cfg);
      }
  return out;
}

template <class T>
Tensor<T> pull_output(const std::vector<T>& pts, const Tensor<T>& f, const BlockPartition<T>& part,
                      const AppBlockConfig& cfg, AppBlockParams<T>& params) {
  auto enc = position_encode<T>(pts, part, cfg, params, Mode::Eval);
  auto st = push(f, enc, part, cfg, params);
  return pull(st, f, part, cfg, params);
}

std::string describe(const AppBlockConfig& c) {
  return std::string(family_name(c.family)) + "/" + std::string(style_name(c.style)) + "/" +
         std::string(pull_mode_name(c.pull_mode)) + "/" + std::string(posenc_name(c.posenc));
}

}  // namespace

TEST(PositionEncode, NoneModePassesCoordinates) {
  Rng rng(1);
  const auto pts = random_points<double>(10, rng);
  AppBlockConfig cfg;
  cfg.c_in = 3;
  cfg.posenc = PosEncMode::None;
  AppBlockParams<double> params(cfg, rng);
  const auto part = one_nn_assign<double>(pts, select_points<double>(pts, std::vector<std::size_t>{0, 5}));
  auto enc = position_encode<double>(pts, part, cfg, params, Mode::Eval);
  EXPECT_EQ(to_vec(enc.points), pts);
  EXPECT_EQ(to_vec(enc.anchors), part.anchors);

  cfg.c_in = 5;
  AppBlockParams<double> wide(cfg, rng);
  auto padded = position_encode<double>(pts, part, cfg, wide, Mode::Eval);
  EXPECT_EQ(padded.points.cols(), 5u);
  EXPECT_EQ(padded.points.at(3, 1), pts[10]);
  EXPECT_EQ(padded.points.at(3, 4), 0.0);

  cfg.c_in = 2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(PositionEncode, IdenticalPointsAndLocalMode) {
  Rng rng(2);
  std::vector<double> pts{0.1, 0.2, 0.3, 0.1, 0.2, 0.3, -0.5, 0.4, 0.0};
  AppBlockConfig cfg;
  cfg.c_in = 4;
  AppBlockParams<double> params(cfg, rng);
  randomize_norm(params.posenc.norm, rng);
  const auto part = one_nn_assign<double>(pts, select_points<double>(pts, std::vector<std::size_t>{0, 2}));
  auto enc = position_encode<double>(pts, part, cfg, params, Mode::Eval);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(enc.points.at(0, c), enc.points.at(1, c));

  // local mode with anchors == points: all inputs are zero, every row equal
  cfg.posenc = PosEncMode::Local;
  const auto self = one_nn_assign<double>(pts, select_points<double>(pts, std::vector<std::size_t>{0, 1, 2}));
  auto local = position_encode<double>(pts, self, cfg, params, Mode::Eval);
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(local.points.at(r, c), local.points.at(0, c));
}

TEST(PushPull, SingletonBlocks) {
  Rng rng(3);
  const std::size_t n = 12, c = 4;
  const auto pts = random_points<double>(n, rng);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto part = one_nn_assign<double>(pts, select_points<double>(pts, all));
  auto f = random_features<double>(n, c, rng);

  AppBlockConfig cfg;
  cfg.c_in = c;
  AppBlockParams<double> aw(cfg, rng);
  EXPECT_LT(testutil::max_abs_diff(pull_output(pts, f, part, cfg, aw).values(), f.values()), 1e-15);

  cfg.style = Style::PointwiseMLP;
  cfg.family = Family::Linear;
  AppBlockParams<double> pw(cfg, rng);
  auto g = pull_output(pts, f, part, cfg, pw);
  for (double v : g.values()) EXPECT_NEAR(v, 0.0, 1e-15);

  // accumulator of a one-point block is the pushed value itself
  auto enc = position_encode<double>(pts, part, cfg, pw, Mode::Eval);
  auto st = push(f, enc, part, cfg, pw);
  EXPECT_EQ(to_vec(st.accumulators[0]), to_vec(st.alpha[0]));
}

TEST(PushPull, ZeroRelationWeightGivesBlockMean) {
  Rng rng(4);
  const std::size_t n = 40, c = 3;
  const auto pts = random_points<double>(n, rng);
  const auto part = one_nn_assign<double>(pts, select_points<double>(pts, random_subsample(n, 8, 5)));
  auto f = random_features<double>(n, c, rng);
  AppBlockConfig cfg;
  cfg.c_in = c;
  AppBlockParams<double> params(cfg, rng);
  params.relation.weight = Tensor<double>::zeros(params.relation.weight.shape(), true);
  auto g = pull_output(pts, f, part, cfg, params);
  auto expect = gather(scatter_mean(f, part), part);
  EXPECT_LT(testutil::max_abs_diff(g.values(), expect.values()), 1e-15);
}

TEST(PushPull, TwoPointBlockByHand) {
  // pointwise linear, FeatureDifference, raw coordinates as the encoding
  std::vector<double> pts{0, 0, 0, 1, 2, 0};
  const auto part = one_nn_assign<double>(pts, std::vector<double>{0, 0, 0});
  AppBlockConfig cfg;
  cfg.c_in = 3;
  cfg.posenc = PosEncMode::None;
  cfg.style = Style::PointwiseMLP;
  cfg.family = Family::Linear;
  Rng rng(5);
  AppBlockParams<double> params(cfg, rng);
  // W sums the feature difference and twice the position difference per channel
  std::vector<double> w(6 * 3, 0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    w[k * 3 + k] = 1.0;
    w[(3 + k) * 3 + k] = 2.0;
  }
  params.relation.weight = Tensor<double>::matrix(6, 3, w);
  auto f = Tensor<double>::matrix(2, 3, {1, 1, 1, 3, 0, 5});
  auto g = pull_output(pts, f, part, cfg, params);
  // g_0 = mean_j W[f_j - f_0, p_j - p_0] = ([0,0,0] + [2,-1,4] + 2*[1,2,0]) / 2
  EXPECT_EQ(to_vec(g), (std::vector<double>{2, 1.5, 2, -2, -1.5, -2}));
}

TEST(PushPull, AnchorIndependence) {
  Rng rng(6);
  for (auto posenc : {PosEncMode::Global, PosEncMode::None})
    for (auto cfg : all_variants(4)) {
      cfg.posenc = posenc;
      SCOPED_TRACE(describe(cfg));
      const std::size_t n = 96;
      const auto pts = random_points<double>(n, rng);
      AppBlockParams<double> params(cfg, rng);
      randomize_norm(params.posenc.norm, rng);
      auto f = random_features<double>(n, cfg.c_in, rng);
      auto part = one_nn_assign<double>(pts, select_points<double>(pts, random_subsample(n, 16, 7)));
      auto g = pull_output(pts, f, part, cfg, params);
      auto moved = part;
      for (auto& v : moved.anchors) v = rng.uniform(-5.0, 5.0);
      auto g2 = pull_output(pts, f, moved, cfg, params);
      EXPECT_LT(testutil::max_abs_diff(g.values(), g2.values()), 1e-10);

      // single precision
      const auto pf = random_points<float>(n, rng);
      AppBlockParams<float> pp(cfg, rng);
      auto ff = random_features<float>(n, cfg.c_in, rng);
      auto partf = one_nn_assign<float>(pf, select_points<float>(pf, random_subsample(n, 16, 8)));
      auto gf = pull_output(pf, ff, partf, cfg, pp);
      for (auto& v : partf.anchors) v = static_cast<float>(rng.uniform(-5.0, 5.0));
      auto gf2 = pull_output(pf, ff, partf, cfg, pp);
      EXPECT_LT(testutil::max_abs_diff(gf.values(), gf2.values()), 1e-5);
    }
}

TEST(PushPull, MatchesDirectBlockOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial)
    for (auto cfg : all_variants(3 + trial)) {
      SCOPED_TRACE(describe(cfg));
      const std::size_t n = 8 + rng.uniform_index(249);
      const auto pts = random_points<double>(n, rng);
      cfg.r_a = 1 + rng.uniform_index(32);
      AppBlockParams<double> params(cfg, rng);
      randomize_norm(params.posenc.norm, rng);
      auto f = random_features<double>(n, cfg.c_in, rng);
      auto part = partition_batch(single_cloud(pts), cfg.r_a, Sampler::Random, 11 + trial).first;
      auto enc = position_encode<double>(pts, part, cfg, params, Mode::Eval);
      auto st = push(f, enc, part, cfg, params);
      auto g = pull(st, f, part, cfg, params);
      const auto direct = direct_block_aggregate<double>(f.values(), enc.points.values(), part.assignment, cfg,
                                                         params.relation.weight.values());
      EXPECT_LT(testutil::max_abs_diff(g.values(), std::span<const double>(direct)), 1e-10);
    }
}

TEST(PushPull, PermutationEquivariantInEvalMode) {
  Rng rng(8);
  for (auto cfg : all_variants(4)) {
    SCOPED_TRACE(describe(cfg));
    const std::size_t n = 64;
    const auto pts = random_points<double>(n, rng);
    AppBlockParams<double> params(cfg, rng);
    auto f = random_features<double>(n, cfg.c_in, rng);
    auto part = one_nn_assign<double>(pts, select_points<double>(pts, random_subsample(n, 8, 9)));
    auto g = pull_output(pts, f, part, cfg, params);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    const auto pp = select_points<double>(pts, perm);
    auto fp = gather_rows(f, perm);
    std::vector<std::size_t> ap(n);
    for (std::size_t i = 0; i < n; ++i) ap[i] = part.assignment[perm[i]];
    auto gp = pull_output(pp, fp, detail::finish_partition<double>(part.anchors, ap), cfg, params);
    auto expect = gather_rows(g, perm);
    EXPECT_LT(testutil::max_abs_diff(gp.values(), expect.values()), 1e-12);
  }
}

TEST(PushPull, ExponentialGuardAndMismatchedPartition) {
  Rng rng(9);
  const std::size_t n = 20;
  const auto pts = random_points<double>(n, rng);
  AppBlockConfig cfg;
  cfg.c_in = 3;
  cfg.posenc = PosEncMode::None;
  AppBlockParams<double> params(cfg, rng);
  params.relation.weight = Tensor<double>::full({3, 3}, 100.0);
  auto f = random_features<double>(n, 3, rng);
  auto part = one_nn_assign<double>(pts, select_points<double>(pts, std::vector<std::size_t>{0}));
  EXPECT_THROW(pull_output(pts, f, part, cfg, params), std::domain_error);

  AppBlockParams<double> ok(cfg, rng);
  auto enc = position_encode<double>(pts, part, cfg, ok, Mode::Eval);
  auto st = push(f, enc, part, cfg, ok);
  auto other = one_nn_assign<double>(pts, select_points<double>(pts, std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(pull(st, f, other, cfg, ok), std::invalid_argument);
}

TEST(ChannelMix, UpdateStyles) {
  Rng rng(10);
  const std::size_t n = 6, c = 3;
  auto g = random_features<double>(n, c, rng);
  auto f = random_features<double>(n, c, rng);
  AppBlockConfig cfg;
  cfg.c_in = c;
  cfg.c_out = c;

  cfg.update_style = UpdateStyle::Identity;
  AppBlockParams<double> id(cfg, rng);
  EXPECT_EQ(to_vec(channel_mix(g, f, id, cfg, Mode::Eval)), to_vec(g));

  cfg.update_style = UpdateStyle::Concat;
  AppBlockParams<double> cat(cfg, rng);
  std::vector<double> w(2 * c * c, 0.0);
  for (std::size_t k = 0; k < c; ++k) w[k * c + k] = 1.0;
  cat.mixer.linear.weight = Tensor<double>::matrix(2 * c, c, w);
  auto out = channel_mix(g, f, cat, cfg, Mode::Eval);
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < n * c; ++i) {
    const double v = g.values()[i] * s;
    EXPECT_NEAR(out.values()[i], v >= 0 ? v : kLeakySlope * v, 1e-15);
  }

  cfg.update_style = UpdateStyle::Residual;
  AppBlockParams<double> res(cfg, rng);
  auto r = channel_mix(g, f, res, cfg, Mode::Eval);
  auto plain = res.mixer(g, Mode::Eval);
  EXPECT_LT(testutil::max_abs_diff(r.values(), (plain + f).values()), 1e-15);
  cfg.c_out = c + 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(channel_mix(g, f, res, cfg, Mode::Eval), std::invalid_argument);
}

TEST(BlockDownsample, CountsIdentityAndSingleBlock) {
  Rng rng(11);
  const auto pts = random_points<double>(1024, rng);
  auto f = random_features<double>(1024, 5, rng);
  auto cloud = single_cloud(pts);
  auto d = block_downsample(cloud, f, 8, Sampler::Random, 3);
  EXPECT_EQ(d.cloud.total(), 128u);
  EXPECT_EQ(d.features.rows(), 128u);
  EXPECT_EQ(block_downsample(cloud, f, 8, Sampler::Fps, 3).cloud.sizes, (std::vector<std::size_t>{128}));
  EXPECT_EQ(block_downsample(single_cloud(random_points<double>(1000, rng)), random_features<double>(1000, 2, rng), 8,
                             Sampler::Random, 1)
                .cloud.total(),
            125u);

  // r_d = 1: every point is an anchor and owns itself
  auto same = block_downsample(cloud, f, 1, Sampler::Random, 4);
  ASSERT_EQ(same.cloud.total(), 1024u);
  for (std::size_t b = 0; b < 1024; ++b) {
    std::size_t src = 0;
    while (same.partition.assignment[src] != b) ++src;
    for (std::size_t d3 = 0; d3 < 3; ++d3) ASSERT_EQ(same.cloud.positions[3 * b + d3], pts[3 * src + d3]);
    for (std::size_t c = 0; c < 5; ++c) ASSERT_EQ(same.features.at(b, c), f.at(src, c));
  }

  auto one = block_downsample(cloud, f, 2048, Sampler::Random, 5);
  ASSERT_EQ(one.features.rows(), 1u);
  for (std::size_t c = 0; c < 5; ++c) {
    double m = -1e300;
    for (std::size_t i = 0; i < 1024; ++i) m = std::max(m, f.at(i, c));
    EXPECT_EQ(one.features.at(0, c), m);
  }
}

TEST(AppBlockForward, MatchesStepByStepEvaluation) {
  Rng rng(12);
  const std::size_t n = 16;
  const auto pts = random_points<double>(n, rng);
  AppBlockConfig cfg;
  cfg.c_in = 4;
  cfg.c_out = 6;
  cfg.r_a = 4;
  cfg.r_d = 4;
  AppBlockParams<double> params(cfg, rng);
  randomize_norm(params.posenc.norm, rng);
  randomize_norm(params.mixer.norm, rng);
  auto f = random_features<double>(n, cfg.c_in, rng);
  const std::uint64_t seed = 77;
  auto out = app_block_forward(single_cloud(pts), f, cfg, params, Mode::Eval, seed, 2);

  // transliteration with plain loops
  auto leaky = [](double v) { return v >= 0 ? v : kLeakySlope * v; };
  auto dense = [&](const DenseUnit<double>& u, const std::vector<double>& x, std::size_t rows) {
    const std::size_t ci = u.in_channels(), co = u.out_channels();
    std::vector<double> y(rows * co);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t o = 0; o < co; ++o) {
        double z = u.linear.bias.values()[o];
        for (std::size_t k = 0; k < ci; ++k) z += x[i * ci + k] * u.linear.weight.values()[k * co + o];
        z = (z - u.norm.running_mean[o]) / std::sqrt(u.norm.running_var[o] + u.norm.eps);
        y[i * co + o] = leaky(u.norm.gamma.values()[o] * z + u.norm.beta.values()[o]);
      }
    return y;
  };
  const auto aux_idx = random_subsample(n, cfg.r_a, partition_seed(seed, 2, PartitionStage::Auxiliary));
  const auto aux = one_nn_assign_exhaustive<double>(pts, select_points<double>(pts, aux_idx));
  const auto phi = dense(params.posenc, pts, n);
  const auto g = direct_block_aggregate<double>(f.values(), phi, aux.assignment, cfg, params.relation.weight.values());
  std::vector<double> cat(n * 2 * cfg.c_in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < cfg.c_in; ++k) {
      cat[i * 2 * cfg.c_in + k] = g[i * cfg.c_in + k];
      cat[i * 2 * cfg.c_in + cfg.c_in + k] = f.at(i, k);
    }
  const auto mixed = dense(params.mixer, cat, n);
  const auto down_idx = random_subsample(n, cfg.r_d, partition_seed(seed, 2, PartitionStage::Downsample));
  const auto down = one_nn_assign_exhaustive<double>(pts, select_points<double>(pts, down_idx));
  ASSERT_EQ(out.features.rows(), down_idx.size());
  EXPECT_EQ(out.cloud.positions, down.anchors);
  for (std::size_t b = 0; b < down_idx.size(); ++b)
    for (std::size_t o = 0; o < cfg.c_out; ++o) {
      double m = -1e300;
      for (std::size_t i = 0; i < n; ++i)
        if (down.assignment[i] == b) m = std::max(m, mixed[i * cfg.c_out + o]);
      EXPECT_NEAR(out.features.at(b, o), m, 1e-12);
    }
}

TEST(AppBlockForward, DeterministicAndSeedSensitive) {
  Rng rng(13);
  const auto pts = random_points<float>(300, rng);
  AppBlockConfig cfg;
  cfg.c_in = 8;
  cfg.c_out = 16;
  cfg.r_a = 16;
  AppBlockParams<float> params(cfg, rng);
  auto f = random_features<float>(300, 8, rng);
  auto a = app_block_forward(single_cloud(pts), f, cfg, params, Mode::Train, 5);
  auto b = app_block_forward(single_cloud(pts), f, cfg, params, Mode::Train, 5);
  auto c = app_block_forward(single_cloud(pts), f, cfg, params, Mode::Train, 6);
  EXPECT_EQ(a.cloud.total(), 38u);
  EXPECT_EQ(to_vec(a.features), to_vec(b.features));
  EXPECT_EQ(a.auxiliary.assignment, b.auxiliary.assignment);
  EXPECT_NE(a.auxiliary.assignment, c.auxiliary.assignment);
  EXPECT_NE(a.downsample.assignment, a.auxiliary.assignment);
}

TEST(AppBlockForward, InstrumentedCostsEqualClosedForms) {
  Rng rng(14);
  for (auto cfg : all_variants(8))
    for (auto update : {UpdateStyle::Concat, UpdateStyle::NoConcat, UpdateStyle::Identity})
      for (auto posenc : {PosEncMode::Global, PosEncMode::None}) {
        cfg.update_style = update;
        cfg.posenc = posenc;
        cfg.r_a = 1 + rng.uniform_index(64);
        cfg.r_d = 1 + rng.uniform_index(16);
        SCOPED_TRACE(describe(cfg));
        const std::size_t n = 20 + rng.uniform_index(400);
        AppBlockParams<float> params(cfg, rng);
        CostReport got;
        app_block_forward(single_cloud(random_points<float>(n, rng)), random_features<float>(n, 8, rng), cfg, params,
                          Mode::Train, 3, 0, &got);
        const auto want = app_block_cost(n, cfg);
        ASSERT_EQ(got.steps.size(), want.steps.size());
        for (const auto& s : want.steps) {
          EXPECT_EQ(got.macs(s.step), s.macs) << s.step;
          EXPECT_EQ(got.floats(s.step), s.floats) << s.step;
        }
      }
}

TEST(AppBlockForward, BatchOfIdenticalCloudsGivesIdenticalRows) {
  Rng rng(15);
  const auto pts = random_points<double>(50, rng);
  CloudBatch<double> batch;
  batch.positions = pts;
  batch.positions.insert(batch.positions.end(), pts.begin(), pts.end());
  batch.sizes = {50, 50};
  AppBlockConfig cfg;
  cfg.c_in = 4;
  cfg.r_a = 8;
  cfg.r_d = 5;
  AppBlockParams<double> params(cfg, rng);
  auto f1 = random_features<double>(50, 4, rng);
  std::vector<std::size_t> twice(100);
  for (std::size_t i = 0; i < 100; ++i) twice[i] = i % 50;
  auto out = app_block_forward(batch, gather_rows(f1, twice), cfg, params, Mode::Train, 21);
  ASSERT_EQ(out.cloud.sizes, (std::vector<std::size_t>{10, 10}));
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < cfg.c_out; ++c) EXPECT_EQ(out.features.at(r, c), out.features.at(r + 10, c));
}
