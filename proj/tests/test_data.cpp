#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "appnet/data.hpp"

using namespace appnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("appnet_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(GenerateShape, SphereOnUnitRadius) {
  for (std::size_t n : {8u, 9u, 1024u}) {
    ShapeSpec s;
    s.n_points = n;
    s.seed = 3;
    const auto c = generate_shape<double>(s);
    ASSERT_EQ(c.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = c.point(i);
      EXPECT_NEAR(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]), 1.0, 1e-6);
    }
  }
}

TEST(GenerateShape, CubePointsLieOnFaces) {
  ShapeSpec s;
  s.kind = ShapeKind::Cube;
  s.rotate = false;
  s.n_points = 999;
  const auto c = generate_shape<double>(s);
  double half = 0.0;
  for (double v : c.positions) half = std::max(half, std::abs(v));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto p = c.point(i);
    const double m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    EXPECT_NEAR(m, half, 1e-6);
  }
}

TEST(GenerateShape, CenteredNormalizedAndDeterministic) {
  for (auto kind : kAllShapes)
    for (double noise : {0.0, 0.05}) {
      ShapeSpec s;
      s.kind = kind;
      s.noise_sigma = noise;
      s.seed = 11;
      s.n_points = 517;
      const auto c = generate_shape<double>(s);
      double mean[3] = {0, 0, 0}, max_r = 0;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const auto p = c.point(i);
        for (int d = 0; d < 3; ++d) mean[d] += p[d] / static_cast<double>(c.size());
        max_r = std::max(max_r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
      }
      for (double m : mean) EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_NEAR(max_r, 1.0, 1e-12);
      EXPECT_EQ(c.label, static_cast<int>(kind));
      EXPECT_EQ(generate_shape<double>(s).positions, c.positions);
      s.seed = 12;
      EXPECT_NE(generate_shape<double>(s).positions, c.positions);
    }
  ShapeSpec bad;
  bad.n_points = 7;
  EXPECT_THROW(generate_shape<double>(bad), std::invalid_argument);
}

TEST(Xyz, RoundTrip) {
  Rng rng(1);
  PointCloud<double> c;
  c.positions.resize(3 * 50);
  for (auto& v : c.positions) v = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-3.0, 3.0));
  auto back = parse_xyz<double>(format_xyz(c)).cloud;
  ASSERT_EQ(back.size(), 50u);
  EXPECT_EQ(back.feature_channels, 0u);
  for (std::size_t i = 0; i < c.positions.size(); ++i)
    EXPECT_NEAR(back.positions[i], c.positions[i], 1e-8 * std::abs(c.positions[i]));

  c.feature_channels = 4;
  c.features.resize(4 * 50);
  for (auto& v : c.features) v = rng.uniform(-1.0, 1.0);
  const auto dir = fresh_dir("xyz");
  write_xyz(dir / "a.xyz", c);
  auto f = read_xyz<float>(dir / "a.xyz");
  EXPECT_TRUE(f.warnings.empty());
  EXPECT_EQ(f.cloud.feature_channels, 4u);
  for (std::size_t i = 0; i < c.features.size(); ++i) EXPECT_NEAR(f.cloud.features[i], c.features[i], 1e-7);
  fs::remove_all(dir);
}

TEST(Xyz, MalformedInput) {
  try {
    parse_xyz<double>("1 2\n", "f.xyz");
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  EXPECT_THROW(parse_xyz<double>("1 2 3\n4 5 x\n"), std::runtime_error);
  EXPECT_THROW(parse_xyz<double>("1 2 3\n1 2 3 4 5 6 7\n"), std::runtime_error);
  EXPECT_THROW(parse_xyz<double>("# only a comment\n\n"), std::runtime_error);
  EXPECT_THROW(parse_xyz<double>(""), std::runtime_error);
  EXPECT_THROW(parse_xyz<double>("1 2 nan\n"), std::runtime_error);
  EXPECT_THROW(read_xyz<double>("/nonexistent/file.xyz"), std::runtime_error);
}

TEST(Xyz, ExtraColumnsWarnAndCommentsSkip) {
  auto f = parse_xyz<double>("# header\n1 2 3 0 0 1 0.1 9 9\n\n-1 -2 +3 0 1 0 0.2\r\n");
  EXPECT_EQ(f.cloud.size(), 2u);
  EXPECT_EQ(f.cloud.feature_channels, 4u);
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_NE(f.warnings[0].find("line 2"), std::string::npos);
  EXPECT_EQ(f.cloud.positions[5], 3.0);
  EXPECT_EQ(f.cloud.features[7], 0.2);
}

TEST(Dataset, BuildCountsIdsAndReproducibility) {
  const auto a = fresh_dir("ds_a"), b = fresh_dir("ds_b");
  DatasetSpec spec;
  spec.train_per_class = 6;
  spec.test_per_class = 3;
  spec.points = 64;
  spec.seed = 9;
  const auto [train, test] = build_dataset(spec, a);
  EXPECT_EQ(train.entries.size(), 24u);
  EXPECT_EQ(test.entries.size(), 12u);
  std::set<std::string> train_files;
  for (const auto& e : train.entries) {
    EXPECT_GE(e.class_id, 0);
    EXPECT_LE(e.class_id, 3);
    EXPECT_TRUE(fs::exists(a / e.path));
    train_files.insert(slurp(a / e.path));
  }
  for (const auto& e : test.entries) EXPECT_EQ(train_files.count(slurp(a / e.path)), 0u);

  build_dataset(spec, b);
  EXPECT_EQ(slurp(a / "train.txt"), slurp(b / "train.txt"));
  EXPECT_EQ(slurp(a / "test.txt"), slurp(b / "test.txt"));
  for (const auto& e : train.entries) EXPECT_EQ(slurp(a / e.path), slurp(b / e.path));

  const auto m = read_manifest(a / "train.txt");
  EXPECT_EQ(m.entries, train.entries);
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"sphere", "cube", "cylinder", "cone"}));
  EXPECT_EQ(read_xyz<float>(m.root / m.entries[5].path).cloud.size(), 64u);

  spec.train_per_class = 200;
  spec.test_per_class = 50;
  spec.classes = 5;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, ManifestErrors) {
  const auto d = fresh_dir("manifest");
  {
    std::ofstream(d / "m.txt") << "a.xyz 1\n";
  }
  EXPECT_THROW(read_manifest(d / "m.txt"), std::runtime_error);
  {
    std::ofstream(d / "m.txt") << "a.xyz\t-1\n";
  }
  EXPECT_THROW(read_manifest(d / "m.txt"), std::runtime_error);
  {
    std::ofstream(d / "m.txt") << "a.xyz\t0\nb.xyz\t2\n";
  }
  EXPECT_EQ(read_manifest(d / "m.txt").num_classes(), 3u);
  EXPECT_THROW(read_manifest(d / "missing.txt"), std::runtime_error);
  fs::remove_all(d);
}
