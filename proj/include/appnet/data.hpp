#pragma once

// Synthetic primitive shapes, plain-text point files and dataset manifests.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "appnet/geometry.hpp"
#include "appnet/rng.hpp"

namespace appnet {

enum class ShapeKind { Sphere, Cube, Cylinder, Cone };

inline constexpr ShapeKind kAllShapes[] = {ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Cone};

inline std::string_view shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Cone: return "cone";
  }
  return "?";
}

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Sphere;
  std::size_t n_points = 1024;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  bool rotate = true;  // random rotation about z

  void validate() const {
    if (n_points < 8) throw std::invalid_argument("ShapeSpec: n_points must be >= 8");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("ShapeSpec: noise_sigma must be >= 0");
  }
};

namespace detail {

using P3 = std::array<double, 3>;

inline P3 sample_sphere(Rng& rng) {
  for (;;) {
    P3 p{rng.normal(), rng.normal(), rng.normal()};
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (r > 1e-12) return {p[0] / r, p[1] / r, p[2] / r};
  }
}

inline P3 sample_cube(Rng& rng) {
  const auto face = rng.uniform_index(6);
  const double s = rng.uniform(-1.0, 1.0), t = rng.uniform(-1.0, 1.0);
  const double sign = face % 2 == 0 ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: return {sign, s, t};
    case 1: return {s, sign, t};
    default: return {s, t, sign};
  }
}

// radius 1, z in [-1, 1], with caps
inline P3 sample_cylinder(Rng& rng) {
  const double side = 4.0 * std::numbers::pi, cap = std::numbers::pi;
  const double pick = rng.uniform() * (side + 2.0 * cap);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (pick < side) return {std::cos(theta), std::sin(theta), rng.uniform(-1.0, 1.0)};
  const double r = std::sqrt(rng.uniform());
  return {r * std::cos(theta), r * std::sin(theta), pick < side + cap ? 1.0 : -1.0};
}

// apex at z = 1, base radius 1 at z = -1
inline P3 sample_cone(Rng& rng) {
  const double lateral = std::numbers::pi * std::sqrt(5.0), base = std::numbers::pi;
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(rng.uniform());
  if (rng.uniform() * (lateral + base) < lateral) return {r * std::cos(theta), r * std::sin(theta), 1.0 - 2.0 * r};
  return {r * std::cos(theta), r * std::sin(theta), -1.0};
}

}  // namespace detail

/// Uniform surface sample of a unit-scale primitive with Gaussian jitter,
/// optional rotation about z, then centered and scaled to the unit sphere.
/// Sphere and cube samples come in antipodal pairs (plus one zero-sum
/// triple for odd counts) so their noiseless mean is zero.
template <class T = double>
PointCloud<T> generate_shape(const ShapeSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0x5a4e, static_cast<std::uint64_t>(spec.kind)}));
  const std::size_t n = spec.n_points;
  std::vector<detail::P3> pts;
  pts.reserve(n);
  const bool symmetric = spec.kind == ShapeKind::Sphere || spec.kind == ShapeKind::Cube;
  if (symmetric) {
    if (n % 2 == 1) {
      if (spec.kind == ShapeKind::Sphere) {
        const double h = std::sqrt(3.0) / 2.0;
        pts.push_back({1.0, 0.0, 0.0});
        pts.push_back({-0.5, h, 0.0});
        pts.push_back({-0.5, -h, 0.0});
      } else {
        pts.push_back({1.0, -0.5, -0.5});
        pts.push_back({-0.5, 1.0, -0.5});
        pts.push_back({-0.5, -0.5, 1.0});
      }
    }
    while (pts.size() < n) {
      const auto p = spec.kind == ShapeKind::Sphere ? detail::sample_sphere(rng) : detail::sample_cube(rng);
      pts.push_back(p);
      pts.push_back({-p[0], -p[1], -p[2]});
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      pts.push_back(spec.kind == ShapeKind::Cylinder ? detail::sample_cylinder(rng) : detail::sample_cone(rng));
  }

  if (spec.noise_sigma > 0.0)
    for (auto& p : pts)
      for (auto& v : p) v += spec.noise_sigma * rng.normal();

  if (spec.rotate) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double c = std::cos(a), s = std::sin(a);
    for (auto& p : pts) p = {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
  }

  detail::P3 mean{0.0, 0.0, 0.0};
  for (const auto& p : pts)
    for (int d = 0; d < 3; ++d) mean[d] += p[d];
  for (auto& m : mean) m /= static_cast<double>(n);
  double max_r = 0.0;
  for (auto& p : pts) {
    for (int d = 0; d < 3; ++d) p[d] -= mean[d];
    max_r = std::max(max_r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }

  PointCloud<T> cloud;
  cloud.positions.reserve(3 * n);
  for (const auto& p : pts)
    for (int d = 0; d < 3; ++d) cloud.positions.push_back(static_cast<T>(p[d] / max_r));
  cloud.label = static_cast<int>(spec.kind);
  return cloud;
}

/// Points with their raw text-file columns: "x y z" or "x y z nx ny nz sigma".
template <class T>
struct XyzFile {
  PointCloud<T> cloud;  // feature_channels is 0 or 4
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

}  // namespace detail

template <class T>
std::string format_xyz(const PointCloud<T>& cloud) {
  cloud.validate();
  if (cloud.feature_channels != 0 && cloud.feature_channels != 4)
    throw std::invalid_argument("format_xyz: only 0 or 4 feature channels can be written");
  std::string out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      if (d) out += ' ';
      out += detail::format_number(static_cast<double>(cloud.positions[3 * i + d]));
    }
    for (std::size_t k = 0; k < cloud.feature_channels; ++k) {
      out += ' ';
      out += detail::format_number(static_cast<double>(cloud.features[i * 4 + k]));
    }
    out += '\n';
  }
  return out;
}

template <class T>
XyzFile<T> parse_xyz(std::string_view text, const std::string& source = "<input>") {
  XyzFile<T> res;
  std::size_t lineno = 0, columns = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    std::vector<double> vals;
    std::size_t i = 0;
    bool bad = false;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      if (line[i] == '#' && vals.empty()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      const char* first = line.data() + i;
      if (*first == '+') ++first;
      double v = 0.0;
      auto r = std::from_chars(first, line.data() + j, v);
      if (r.ec != std::errc() || r.ptr != line.data() + j || !std::isfinite(v)) {
        bad = true;
        break;
      }
      vals.push_back(v);
      i = j;
    }
    if (bad) throw std::runtime_error(source + ": line " + std::to_string(lineno) + ": not a number");
    if (vals.empty()) continue;
    if (vals.size() != 3 && vals.size() < 7)
      throw std::runtime_error(source + ": line " + std::to_string(lineno) + ": expected 3 or 7 columns, got " +
                               std::to_string(vals.size()));
    const std::size_t cols = vals.size() == 3 ? 3 : 7;
    if (vals.size() > 7)
      res.warnings.push_back(source + ": line " + std::to_string(lineno) + ": ignoring " +
                             std::to_string(vals.size() - 7) + " extra column(s)");
    if (columns == 0) columns = cols;
    if (cols != columns)
      throw std::runtime_error(source + ": line " + std::to_string(lineno) + ": column count differs from line 1");
    for (int d = 0; d < 3; ++d) res.cloud.positions.push_back(static_cast<T>(vals[d]));
    for (std::size_t k = 3; k < cols; ++k) res.cloud.features.push_back(static_cast<T>(vals[k]));
  }
  if (res.cloud.positions.empty()) throw std::runtime_error(source + ": no points");
  res.cloud.feature_channels = columns == 7 ? 4 : 0;
  return res;
}

template <class T>
void write_xyz(const std::filesystem::path& path, const PointCloud<T>& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << format_xyz(cloud);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
XyzFile<T> read_xyz(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_xyz<T>(ss.str(), path.string());
}

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int class_id = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
};

struct DatasetSpec {
  std::size_t classes = 4;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t points = 1024;
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2 || classes > std::size(kAllShapes))
      throw std::invalid_argument("DatasetSpec: classes must be between 2 and 4");
    if (train_per_class < 1 || test_per_class < 1) throw std::invalid_argument("DatasetSpec: need >= 1 sample per split");
    if (points < 8) throw std::invalid_argument("DatasetSpec: points must be >= 8");
    if (!(noise >= 0.0)) throw std::invalid_argument("DatasetSpec: noise must be >= 0");
  }
};

inline std::string manifest_text(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries) out += e.path + "\t" + std::to_string(e.class_id) + "\n";
  return out;
}

/// Reads "path<TAB>class_id" lines; class names come from classes.txt next
/// to the manifest (or default to the id).
inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  int lineno = 0, max_id = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw std::runtime_error(file.string() + ": line " + std::to_string(lineno) + ": missing tab");
    ManifestEntry e;
    e.path = line.substr(0, tab);
    const auto id = std::string_view(line).substr(tab + 1);
    auto r = std::from_chars(id.data(), id.data() + id.size(), e.class_id);
    if (r.ec != std::errc() || r.ptr != id.data() + id.size() || e.class_id < 0)
      throw std::runtime_error(file.string() + ": line " + std::to_string(lineno) + ": bad class id");
    max_id = std::max(max_id, e.class_id);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw std::runtime_error(file.string() + ": empty manifest");
  std::ifstream cf(m.root / "classes.txt");
  for (std::string name; std::getline(cf, name);)
    if (!name.empty()) m.class_names.push_back(name);
  if (m.class_names.empty())
    for (int c = 0; c <= max_id; ++c) m.class_names.push_back(std::to_string(c));
  if (static_cast<int>(m.class_names.size()) <= max_id)
    throw std::runtime_error(file.string() + ": class id beyond classes.txt");
  return m;
}

/// Writes <out>/train/*.xyz, <out>/test/*.xyz, train.txt, test.txt and
/// classes.txt. Every file's seed is derived from (seed, split, class, index).
inline std::pair<DatasetManifest, DatasetManifest> build_dataset(const DatasetSpec& spec,
                                                                 const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::pair<DatasetManifest, DatasetManifest> res;
  std::string classes_txt;
  for (std::size_t c = 0; c < spec.classes; ++c) classes_txt += std::string(shape_name(kAllShapes[c])) + "\n";
  for (int split = 0; split < 2; ++split) {
    auto& m = split == 0 ? res.first : res.second;
    const std::string dir = split == 0 ? "train" : "test";
    const std::size_t per_class = split == 0 ? spec.train_per_class : spec.test_per_class;
    fs::create_directories(out_dir / dir);
    m.root = out_dir;
    for (std::size_t c = 0; c < spec.classes; ++c) m.class_names.emplace_back(shape_name(kAllShapes[c]));
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t i = 0; i < per_class; ++i) {
        ShapeSpec s;
        s.kind = kAllShapes[c];
        s.n_points = spec.points;
        s.noise_sigma = spec.noise;
        s.seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(split), c, i});
        char name[64];
        std::snprintf(name, sizeof name, "%s_%04zu.xyz", std::string(shape_name(s.kind)).c_str(), i);
        const std::string rel = dir + "/" + name;
        write_xyz(out_dir / rel, generate_shape<double>(s));
        m.entries.push_back({rel, static_cast<int>(c)});
      }
    std::ofstream f(out_dir / (dir + ".txt"), std::ios::binary);
    f << manifest_text(m);
    if (!f) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  }
  std::ofstream cf(out_dir / "classes.txt", std::ios::binary);
  cf << classes_txt;
  if (!cf) throw std::runtime_error("cannot write classes.txt in " + out_dir.string());
  return res;
}

}  // namespace appnet
