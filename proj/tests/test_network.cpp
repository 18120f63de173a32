#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "appnet/network.hpp"
#include "test_util.hpp"

using namespace appnet;

namespace {

template <class T>
PointCloud<T> random_cloud(std::size_t n, std::size_t channels, Rng& rng, int label = 0) {
  PointCloud<T> c;
  c.positions.resize(3 * n);
  for (auto& v : c.positions) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  c.feature_channels = channels;
  c.features.resize(n * channels);
  for (auto& v : c.features) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  c.label = label;
  return c;
}

// Weights + biases + BatchNorm affine pairs, written out layer by layer.
std::size_t expected_parameters(const AppNetConfig& cfg) {
  auto dense = [](std::size_t i, std::size_t o) { return i * o + o + 2 * o; };
  std::size_t n = dense(input_channels(cfg.input), cfg.embed_channels);
  std::size_t c = cfg.embed_channels;
  for (std::size_t l = 0; l < cfg.depth(); ++l) {
    const auto b = cfg.block(l, c);
    n += dense(3, c) + b.relation_in() * c + dense(b.mixer_in(), b.c_out);
    c = b.c_out;
  }
  std::size_t d = cfg.pooling == Pooling::AvgMax ? 2 * c : c;
  for (auto h : cfg.classifier_hidden) {
    n += dense(d, h);
    d = h;
  }
  return n + d * cfg.num_classes + cfg.num_classes;
}

std::vector<float> values(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(AppNetConfig, DefaultsAndDepthPresets) {
  AppNetConfig cfg;
  EXPECT_EQ(cfg.depth(), 3u);
  EXPECT_EQ(cfg.r_a, (std::vector<std::size_t>{64, 64, 64}));
  EXPECT_EQ(cfg.r_d, (std::vector<std::size_t>{8, 8, 8}));
  EXPECT_EQ(cfg.family, Family::Exponential);
  EXPECT_EQ(cfg.style, Style::AdaptiveWeight);
  EXPECT_EQ(cfg.update_style, UpdateStyle::Concat);
  cfg.set_depth(4);
  EXPECT_EQ(cfg.depth(), 4u);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(cfg.set_depth(5), std::invalid_argument);
  cfg.r_a.pop_back();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(AppNetConfig, TextRoundTrip) {
  AppNetConfig cfg;
  cfg.input = InputMode::Xyz;
  cfg.family = Family::Cosine;
  cfg.style = Style::PointwiseMLP;
  cfg.pull_mode = PullMode::ZeroFeature;
  cfg.pooling = Pooling::PositionAdaptive;
  cfg.set_depth(2);
  cfg.dropout = 0.25;
  cfg.canonical_order = true;
  const auto text = config_to_text(cfg);
  EXPECT_EQ(config_to_text(config_from_text(text)), text);
  EXPECT_THROW(config_from_text("colour = red\n"), std::invalid_argument);
  EXPECT_THROW(config_from_text("family = exp\nbogus\n"), std::invalid_argument);
  EXPECT_EQ(config_from_text("# comment\n\nfamily = sin\n").family, Family::Sine);
}

TEST(AppNet, ParameterCountMatchesLayerFormula) {
  for (auto fam : kAllFamilies)
    for (auto style : {Style::AdaptiveWeight, Style::PointwiseMLP}) {
      AppNetConfig cfg;
      cfg.family = fam;
      cfg.style = style;
      AppNet<float> net(cfg, 1);
      EXPECT_EQ(net.parameter_count(), expected_parameters(cfg)) << family_name(fam) << style_name(style);
    }
  AppNet<float> def(AppNetConfig{}, 1);
  EXPECT_NEAR(static_cast<double>(def.parameter_count()), 0.77e6, 0.077e6);
}

TEST(GlobalPool, Examples) {
  CloudBatch<double> cloud;
  cloud.positions = {1, 0, 0, -1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 5};
  cloud.sizes = {2, 3};
  auto f = Tensor<double>::matrix(5, 2, {1, 2, 3, 0, 1, 1, 2, 2, 3, 6});
  auto am = global_pool(f, cloud, Pooling::AvgMax);
  EXPECT_EQ(am.cols(), 4u);
  EXPECT_EQ(std::vector<double>(am.values().begin(), am.values().begin() + 4), (std::vector<double>{2, 1, 3, 2}));
  EXPECT_EQ(global_pool(f, cloud, Pooling::Max).at(1, 1), 6.0);
  EXPECT_EQ(global_pool(f, cloud, Pooling::Avg).at(1, 0), 2.0);
  // equidistant points around the centroid get equal weights
  auto ad = global_pool(f, cloud, Pooling::PositionAdaptive);
  EXPECT_NEAR(ad.at(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(ad.at(0, 1), 1.0, 1e-12);
  cloud.sizes = {5, 0};
  EXPECT_THROW(global_pool(f, cloud, Pooling::Max), std::invalid_argument);
}

TEST(AppNet, StageSizesAndLogitShape) {
  Rng rng(2);
  AppNetConfig cfg;
  cfg.num_classes = 4;
  AppNet<float> net(cfg, 3);
  std::vector<PointCloud<float>> batch{random_cloud<float>(1024, 4, rng), random_cloud<float>(1024, 4, rng)};
  ForwardTrace<float> trace;
  auto logits = net.forward(batch, Mode::Train, 5, nullptr, &trace);
  EXPECT_EQ(logits.shape(), (Shape{2, 4}));
  ASSERT_EQ(trace.sizes.size(), 4u);
  EXPECT_EQ(trace.sizes[1], (std::vector<std::size_t>{128, 128}));
  EXPECT_EQ(trace.sizes[2], (std::vector<std::size_t>{16, 16}));
  EXPECT_EQ(trace.sizes[3], (std::vector<std::size_t>{2, 2}));
  for (float v : logits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(AppNet, RejectsBadInput) {
  Rng rng(4);
  AppNetConfig cfg;
  cfg.num_classes = 4;
  AppNet<float> net(cfg, 3);
  EXPECT_THROW(net.forward({random_cloud<float>(64, 3, rng)}, Mode::Eval, 1), std::invalid_argument);
  EXPECT_THROW(net.forward({random_cloud<float>(7, 4, rng)}, Mode::Eval, 1), std::invalid_argument);
  EXPECT_THROW(net.forward({}, Mode::Eval, 1), std::invalid_argument);
  cfg.num_classes = 1;
  EXPECT_THROW(AppNet<float>(cfg, 1), std::invalid_argument);
}

TEST(AppNet, IdenticalCloudsGiveIdenticalLogits) {
  Rng rng(5);
  AppNetConfig cfg;
  cfg.num_classes = 5;
  cfg.dropout = 0.0;  // dropout masks differ per row
  AppNet<float> net(cfg, 7);
  const auto c = random_cloud<float>(512, 4, rng);
  for (auto mode : {Mode::Eval, Mode::Train}) {
    auto logits = net.forward({c, c, c}, mode, 9);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(logits.at(0, k), logits.at(1, k));
      EXPECT_EQ(logits.at(0, k), logits.at(2, k));
    }
  }
}

TEST(AppNet, CanonicalOrderMakesEvalLogitsPermutationInvariant) {
  Rng rng(6);
  AppNetConfig cfg;
  cfg.num_classes = 3;
  cfg.canonical_order = true;
  AppNet<double> net(cfg, 8);
  const auto c = random_cloud<double>(300, 4, rng);
  std::vector<std::size_t> perm(300);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 299; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  PointCloud<double> p = c;
  for (std::size_t i = 0; i < 300; ++i) {
    for (int d = 0; d < 3; ++d) p.positions[3 * i + d] = c.positions[3 * perm[i] + d];
    for (int k = 0; k < 4; ++k) p.features[4 * i + k] = c.features[4 * perm[i] + k];
  }
  auto a = net.forward({c}, Mode::Eval, 3);
  auto b = net.forward({p}, Mode::Eval, 3);
  EXPECT_LT(testutil::max_abs_diff(a.values(), b.values()), 1e-5);
}

TEST(AppNet, SeedsControlPartitionsAndDropout) {
  Rng rng(7);
  AppNetConfig cfg;
  cfg.num_classes = 4;
  AppNet<float> net(cfg, 2);
  std::vector<PointCloud<float>> batch{random_cloud<float>(256, 4, rng), random_cloud<float>(256, 4, rng)};
  auto a = net.forward(batch, Mode::Train, 11);
  auto b = net.forward(batch, Mode::Train, 11);
  auto c = net.forward(batch, Mode::Train, 12);
  EXPECT_EQ(values(a), values(b));
  EXPECT_NE(values(a), values(c));
  AppNet<float> same_init(cfg, 2), other_init(cfg, 3);
  EXPECT_EQ(values(same_init.named_parameters()[0].tensor), values(net.named_parameters()[0].tensor));
  EXPECT_NE(values(other_init.named_parameters()[0].tensor), values(net.named_parameters()[0].tensor));
}

TEST(AppNet, RecordsRoundTripThroughCheckpointBytes) {
  Rng rng(8);
  AppNetConfig cfg;
  cfg.num_classes = 6;
  cfg.set_depth(2);
  AppNet<float> net(cfg, 4);
  std::vector<PointCloud<float>> batch{random_cloud<float>(200, 4, rng), random_cloud<float>(200, 4, rng)};
  net.forward(batch, Mode::Train, 1);  // moves the running statistics away from their initial values
  auto bytes = encode_checkpoint(net.to_records());
  AppNet<float> fresh(cfg, 99);
  fresh.load_records(decode_checkpoint(bytes));
  EXPECT_EQ(values(net.forward(batch, Mode::Eval, 2)), values(fresh.forward(batch, Mode::Eval, 2)));
  EXPECT_EQ(encode_checkpoint(fresh.to_records()), bytes);

  auto recs = net.to_records();
  recs.pop_back();
  EXPECT_THROW(fresh.load_records(recs), std::runtime_error);
  recs = net.to_records();
  recs[0].values.push_back(0.0f);
  EXPECT_THROW(fresh.load_records(recs), std::runtime_error);
}

TEST(AppNet, CostReportCoversEveryStage) {
  Rng rng(9);
  AppNetConfig cfg;
  cfg.num_classes = 4;
  AppNet<float> net(cfg, 4);
  CostReport cost;
  net.forward({random_cloud<float>(1024, 4, rng)}, Mode::Eval, 1, &cost);
  for (const char* step : {"embedding", "position_encoding", "relation", "push", "pull", "channel_mixing", "classifier"})
    EXPECT_GT(cost.macs(step), 0u) << step;
  EXPECT_EQ(cost.macs("embedding"), 1024u * 4 * 32);
  EXPECT_EQ(cost.floats("block_pool"), 128u * 96 + 16u * 192 + 2u * 384);
}

TEST(AppNet, SmallNetworkGradientsMatchFiniteDifferences) {
  Rng rng(10);
  AppNetConfig cfg;
  cfg.embed_channels = 4;
  cfg.block_channels = {6, 8};
  cfg.r_a = {4, 4};
  cfg.r_d = {2, 2};
  cfg.classifier_hidden = {8};
  cfg.num_classes = 2;
  for (auto fam : kAllFamilies)
    for (auto style : {Style::AdaptiveWeight, Style::PointwiseMLP}) {
      cfg.family = fam;
      cfg.style = style;
      SCOPED_TRACE(std::string(family_name(fam)) + std::string(style_name(style)));
      AppNet<double> net(cfg, 5);
      std::vector<PointCloud<double>> batch{random_cloud<double>(32, 4, rng, 0), random_cloud<double>(32, 4, rng, 1)};
      const std::vector<int> labels{0, 1};
      auto loss = [&](const std::vector<Tensor<double>>&) {
        return cross_entropy(net.forward(batch, Mode::Train, 17), labels);
      };
      EXPECT_LT(testutil::gradient_error(net.parameters(), loss), 1e-4);
    }
}
