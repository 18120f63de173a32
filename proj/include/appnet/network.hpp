#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "appnet/appblock.hpp"
#include "appnet/checkpoint.hpp"
#include "appnet/counters.hpp"
#include "appnet/geometry.hpp"
#include "appnet/layers.hpp"
#include "appnet/rng.hpp"
#include "appnet/tensor_ops.hpp"

namespace appnet {

enum class InputMode { Xyz, Normal, NormalCurvature };
enum class Pooling { AvgMax, Max, Avg, PositionAdaptive };

inline std::size_t input_channels(InputMode m) { return m == InputMode::NormalCurvature ? 4 : 3; }

inline std::string_view input_mode_name(InputMode m) {
  switch (m) {
    case InputMode::Xyz: return "xyz";
    case InputMode::Normal: return "normal";
    case InputMode::NormalCurvature: return "normal+curvature";
  }
  return "?";
}
inline InputMode parse_input_mode(std::string_view s) {
  if (s == "xyz") return InputMode::Xyz;
  if (s == "normal") return InputMode::Normal;
  if (s == "normal+curvature" || s == "nc") return InputMode::NormalCurvature;
  throw std::invalid_argument("unknown input mode '" + std::string(s) + "'");
}

inline std::string_view pooling_name(Pooling p) {
  switch (p) {
    case Pooling::AvgMax: return "avgmax";
    case Pooling::Max: return "max";
    case Pooling::Avg: return "avg";
    case Pooling::PositionAdaptive: return "adaptive";
  }
  return "?";
}
inline Pooling parse_pooling(std::string_view s) {
  if (s == "avgmax") return Pooling::AvgMax;
  if (s == "max") return Pooling::Max;
  if (s == "avg") return Pooling::Avg;
  if (s == "adaptive") return Pooling::PositionAdaptive;
  throw std::invalid_argument("unknown pooling '" + std::string(s) + "'");
}

struct AppNetConfig {
  InputMode input = InputMode::NormalCurvature;
  std::size_t embed_channels = 32;
  std::vector<std::size_t> block_channels{96, 192, 384};
  std::vector<std::size_t> r_a{64, 64, 64};
  std::vector<std::size_t> r_d{8, 8, 8};
  std::vector<std::size_t> classifier_hidden{512, 256};
  double dropout = 0.5;
  std::size_t num_classes = 40;
  Family family = Family::Exponential;
  Style style = Style::AdaptiveWeight;
  UpdateStyle update_style = UpdateStyle::Concat;
  PullMode pull_mode = PullMode::FeatureDifference;
  PosEncMode posenc = PosEncMode::Global;
  Sampler sampler = Sampler::Random;
  Pooling pooling = Pooling::AvgMax;
  // Sort each sample's points lexicographically before partitioning, which
  // makes eval-mode logits independent of input point order.
  bool canonical_order = false;

  std::size_t depth() const { return block_channels.size(); }

  /// Rate/width presets for depth 2, 3 and 4.
  void set_depth(std::size_t d) {
    switch (d) {
      case 2:
        block_channels = {96, 192};
        r_a = {64, 64};
        r_d = {8, 8};
        break;
      case 3:
        block_channels = {96, 192, 384};
        r_a = {64, 64, 64};
        r_d = {8, 8, 8};
        break;
      case 4:
        block_channels = {96, 192, 384, 384};
        r_a = {64, 64, 16, 16};
        r_d = {4, 4, 8, 8};
        break;
      default: throw std::invalid_argument("AppNetConfig: supported depths are 2, 3 and 4");
    }
  }

  AppBlockConfig block(std::size_t layer, std::size_t c_in) const {
    AppBlockConfig b;
    b.c_in = c_in;
    b.c_out = block_channels[layer];
    b.r_a = r_a[layer];
    b.r_d = r_d[layer];
    b.family = family;
    b.style = style;
    b.update_style = update_style;
    b.pull_mode = pull_mode;
    b.posenc = posenc;
    b.sampler = sampler;
    return b;
  }

  void validate() const {
    if (block_channels.empty() || r_a.size() != depth() || r_d.size() != depth())
      throw std::invalid_argument("AppNetConfig: channel and rate lists must share one non-zero length");
    if (num_classes < 2) throw std::invalid_argument("AppNetConfig: need at least 2 classes");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("AppNetConfig: dropout must lie in [0,1)");
  }
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoul(item));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// "key = value" lines.
inline std::string config_to_text(const AppNetConfig& c) {
  std::ostringstream o;
  o << "input = " << input_mode_name(c.input) << "\n"
    << "embed_channels = " << c.embed_channels << "\n"
    << "block_channels = " << detail::join_sizes(c.block_channels) << "\n"
    << "r_a = " << detail::join_sizes(c.r_a) << "\n"
    << "r_d = " << detail::join_sizes(c.r_d) << "\n"
    << "classifier_hidden = " << detail::join_sizes(c.classifier_hidden) << "\n"
    << "dropout = " << c.dropout << "\n"
    << "num_classes = " << c.num_classes << "\n"
    << "family = " << family_name(c.family) << "\n"
    << "style = " << style_name(c.style) << "\n"
    << "update_style = " << update_style_name(c.update_style) << "\n"
    << "pull_mode = " << pull_mode_name(c.pull_mode) << "\n"
    << "posenc = " << posenc_name(c.posenc) << "\n"
    << "sampler = " << sampler_name(c.sampler) << "\n"
    << "pooling = " << pooling_name(c.pooling) << "\n"
    << "canonical_order = " << (c.canonical_order ? 1 : 0) << "\n";
  return o.str();
}

inline AppNetConfig config_from_text(const std::string& text) {
  AppNetConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(t.substr(0, eq));
    const auto val = detail::trim(t.substr(eq + 1));
    if (key == "input") c.input = parse_input_mode(val);
    else if (key == "embed_channels") c.embed_channels = std::stoul(val);
    else if (key == "block_channels") c.block_channels = detail::split_sizes(val);
    else if (key == "r_a") c.r_a = detail::split_sizes(val);
    else if (key == "r_d") c.r_d = detail::split_sizes(val);
    else if (key == "classifier_hidden") c.classifier_hidden = detail::split_sizes(val);
    else if (key == "dropout") c.dropout = std::stod(val);
    else if (key == "num_classes") c.num_classes = std::stoul(val);
    else if (key == "family") c.family = parse_family(val);
    else if (key == "style") c.style = parse_style(val);
    else if (key == "update_style") c.update_style = parse_update_style(val);
    else if (key == "pull_mode") c.pull_mode = parse_pull_mode(val);
    else if (key == "posenc") c.posenc = parse_posenc(val);
    else if (key == "sampler") c.sampler = parse_sampler(val);
    else if (key == "pooling") c.pooling = parse_pooling(val);
    else if (key == "canonical_order") c.canonical_order = val == "1" || val == "true";
    else throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

/// Channel-wise pooling of each sample's rows into one global vector.
template <class T>
Tensor<T> global_pool(const Tensor<T>& features, const CloudBatch<T>& cloud, Pooling mode) {
  if (features.rows() != cloud.total() || cloud.sizes.empty())
    throw std::invalid_argument("global_pool: features do not match the batch");
  std::vector<std::size_t> group;
  group.reserve(cloud.total());
  for (std::size_t s = 0; s < cloud.sizes.size(); ++s) {
    if (cloud.sizes[s] == 0) throw std::invalid_argument("global_pool: empty sample");
    group.insert(group.end(), cloud.sizes[s], s);
  }
  const std::size_t b = cloud.sizes.size();
  switch (mode) {
    case Pooling::AvgMax:
      return concat_cols<T>({segment_reduce<T>(features, group, b, Reduce::Mean),
                             segment_reduce<T>(features, group, b, Reduce::Max)});
    case Pooling::Max: return segment_reduce<T>(features, group, b, Reduce::Max);
    case Pooling::Avg: return segment_reduce<T>(features, group, b, Reduce::Mean);
    case Pooling::PositionAdaptive: {
      // weights 1 / (distance to the sample centroid), normalized per sample
      std::vector<T> w(cloud.total());
      std::size_t off = 0;
      for (std::size_t s = 0; s < b; ++s) {
        const std::size_t n = cloud.sizes[s];
        T centroid[3] = {T(0), T(0), T(0)};
        for (std::size_t i = off; i < off + n; ++i)
          for (int d = 0; d < 3; ++d) centroid[d] += cloud.positions[3 * i + d] / static_cast<T>(n);
        T total = T(0);
        for (std::size_t i = off; i < off + n; ++i) {
          w[i] = T(1) / (std::sqrt(squared_distance(&cloud.positions[3 * i], centroid)) + T(1e-6));
          total += w[i];
        }
        for (std::size_t i = off; i < off + n; ++i) w[i] /= total;
        off += n;
      }
      return segment_reduce<T>(row_scale(features, std::move(w)), group, b, Reduce::Sum);
    }
  }
  throw std::logic_error("global_pool: bad mode");
}

/// Per-layer point counts and partitions from one forward pass.
template <class T>
struct ForwardTrace {
  std::vector<std::vector<std::size_t>> sizes;  // sizes per stage: input, after block 1, ...
  std::vector<BlockPartition<T>> auxiliary;
  std::vector<BlockPartition<T>> downsample;
};

template <class T>
class AppNet {
 public:
  AppNet() = default;

  AppNet(AppNetConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, {0x1417}));
    embed_ = DenseUnit<T>(input_channels(cfg_.input), cfg_.embed_channels, rng);
    std::size_t c = cfg_.embed_channels;
    for (std::size_t l = 0; l < cfg_.depth(); ++l) {
      auto bc = cfg_.block(l, c);
      blocks_.emplace_back(bc, rng);
      block_cfgs_.push_back(bc);
      c = bc.out_channels();
    }
    std::size_t d = cfg_.pooling == Pooling::AvgMax ? 2 * c : c;
    for (auto h : cfg_.classifier_hidden) {
      hidden_.emplace_back(d, h, rng);
      d = h;
    }
    head_ = LinearLayer<T>(d, cfg_.num_classes, rng);
  }

  const AppNetConfig& config() const { return cfg_; }
  const std::vector<AppBlockConfig>& block_configs() const { return block_cfgs_; }
  std::vector<AppBlockParams<T>>& blocks() { return blocks_; }
  DenseUnit<T>& embedding() { return embed_; }

  Tensor<T> embed(const Tensor<T>& inputs, Mode mode) {
    if (inputs.cols() != input_channels(cfg_.input))
      throw std::invalid_argument("embed: expected " + std::to_string(input_channels(cfg_.input)) + " input channels");
    return embed_(inputs, mode);
  }

  /// Logits (B x num_classes) for a batch of clouds whose feature rows hold
  /// the per-point network input.
  Tensor<T> forward(const std::vector<PointCloud<T>>& samples, Mode mode, std::uint64_t seed,
                    CostReport* cost = nullptr, ForwardTrace<T>* trace = nullptr) {
    if (samples.empty()) throw std::invalid_argument("forward: empty batch");
    const std::size_t in_c = input_channels(cfg_.input);
    CloudBatch<T> cloud;
    std::vector<T> inputs;
    for (const auto& s : samples) {
      s.validate();
      if (s.size() < 8) throw std::invalid_argument("forward: clouds need at least 8 points");
      if (s.feature_channels != in_c)
        throw std::invalid_argument("forward: sample has " + std::to_string(s.feature_channels) +
                                    " feature channels, network expects " + std::to_string(in_c));
      std::vector<std::size_t> order(s.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (cfg_.canonical_order)
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.point(a) < s.point(b); });
      for (auto i : order) {
        cloud.positions.insert(cloud.positions.end(), s.positions.begin() + 3 * i, s.positions.begin() + 3 * i + 3);
        inputs.insert(inputs.end(), s.features.begin() + in_c * i, s.features.begin() + in_c * (i + 1));
      }
      cloud.sizes.push_back(s.size());
    }
    auto x = Tensor<T>({cloud.total(), in_c}, std::move(inputs));
    auto f = embed(x, mode);
    if (cost) cost->add("embedding", cloud.total() * in_c * cfg_.embed_channels, f.numel());
    if (trace) trace->sizes.push_back(cloud.sizes);

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      auto out = app_block_forward(cloud, f, block_cfgs_[l], blocks_[l], mode, seed, l, cost);
      cloud = std::move(out.cloud);
      f = std::move(out.features);
      if (trace) {
        trace->sizes.push_back(cloud.sizes);
        trace->auxiliary.push_back(std::move(out.auxiliary));
        trace->downsample.push_back(std::move(out.downsample));
      }
    }

    auto h = global_pool(f, cloud, cfg_.pooling);
    Rng drop(derive_seed(seed, {0xd50u}));
    for (auto& unit : hidden_) {
      if (cost) cost->add("classifier", h.rows() * unit.in_channels() * unit.out_channels(), 0);
      h = unit(h, mode);
      if (mode == Mode::Train && cfg_.dropout > 0.0) {
        const T keep = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
        std::vector<T> mask(h.numel());
        for (auto& m : mask) m = drop.uniform() < cfg_.dropout ? T(0) : keep;
        h = apply_mask(h, std::move(mask));
      }
    }
    if (cost) cost->add("classifier", h.rows() * head_.in_channels() * head_.out_channels(), 0);
    return head_(h);
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    embed_.collect("embed", out);
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect("block" + std::to_string(l), out);
    for (std::size_t k = 0; k < hidden_.size(); ++k) hidden_[k].collect("classifier" + std::to_string(k), out);
    head_.collect("head", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  std::vector<std::pair<std::string, BatchNormState<T>*>> norms() {
    std::vector<std::pair<std::string, BatchNormState<T>*>> out;
    out.emplace_back("embed.bn", &embed_.norm);
    for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect_norms("block" + std::to_string(l), out);
    for (std::size_t k = 0; k < hidden_.size(); ++k)
      out.emplace_back("classifier" + std::to_string(k) + ".bn", &hidden_[k].norm);
    return out;
  }

  std::vector<CheckpointRecord> to_records() {
    std::vector<CheckpointRecord> recs;
    for (const auto& p : named_parameters())
      recs.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.values().begin(), p.tensor.values().end())});
    for (auto& [name, bn] : norms()) {
      recs.push_back({name + ".running_mean", {bn->channels()},
                      std::vector<float>(bn->running_mean.begin(), bn->running_mean.end())});
      recs.push_back({name + ".running_var", {bn->channels()},
                      std::vector<float>(bn->running_var.begin(), bn->running_var.end())});
    }
    return recs;
  }

  void load_records(const std::vector<CheckpointRecord>& recs) {
    std::map<std::string, const CheckpointRecord*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    auto fetch = [&](const std::string& name, std::size_t numel) -> const CheckpointRecord& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
      if (it->second->values.size() != numel)
        throw std::runtime_error("checkpoint: tensor '" + name + "' has the wrong size");
      return *it->second;
    };
    for (auto& p : named_parameters()) {
      const auto& r = fetch(p.name, p.tensor.numel());
      auto dst = p.tensor.node()->value.begin();
      std::copy(r.values.begin(), r.values.end(), dst);
    }
    for (auto& [name, bn] : norms()) {
      const auto& m = fetch(name + ".running_mean", bn->channels());
      const auto& v = fetch(name + ".running_var", bn->channels());
      std::copy(m.values.begin(), m.values.end(), bn->running_mean.begin());
      std::copy(v.values.begin(), v.values.end(), bn->running_var.begin());
    }
  }

 private:
  AppNetConfig cfg_;
  DenseUnit<T> embed_;
  std::vector<AppBlockParams<T>> blocks_;
  std::vector<AppBlockConfig> block_cfgs_;
  std::vector<DenseUnit<T>> hidden_;
  LinearLayer<T> head_;
};

}  // namespace appnet
