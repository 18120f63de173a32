#pragma once

// One APP block: position encoding, push to auxiliary points, pull back,
// channel mixing and block-based max-pool downsampling.
//
// The pull result never depends on where the auxiliary points sit: every
// relation term is built from a difference d_i = phi_i - phi_A(i), and push
// and pull use operator families whose combination cancels phi_A exactly.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "appnet/counters.hpp"
#include "appnet/geometry.hpp"
#include "appnet/layers.hpp"
#include "appnet/ops.hpp"
#include "appnet/rng.hpp"
#include "appnet/tensor_ops.hpp"

namespace appnet {

enum class Style { PointwiseMLP, AdaptiveWeight };
enum class UpdateStyle { Concat, NoConcat, Residual, Identity };
enum class PullMode { FeatureDifference, ZeroFeature };
enum class PosEncMode { Global, Local, None };
enum class Sampler { Random, Fps };

inline std::string_view style_name(Style s) { return s == Style::PointwiseMLP ? "pw" : "aw"; }
inline Style parse_style(std::string_view s) {
  if (s == "pw") return Style::PointwiseMLP;
  if (s == "aw") return Style::AdaptiveWeight;
  throw std::invalid_argument("unknown aggregator style '" + std::string(s) + "'");
}

inline std::string_view update_style_name(UpdateStyle u) {
  switch (u) {
    case UpdateStyle::Concat: return "concat";
    case UpdateStyle::NoConcat: return "noconcat";
    case UpdateStyle::Residual: return "residual";
    case UpdateStyle::Identity: return "identity";
  }
  return "?";
}
inline UpdateStyle parse_update_style(std::string_view s) {
  if (s == "concat") return UpdateStyle::Concat;
  if (s == "noconcat") return UpdateStyle::NoConcat;
  if (s == "residual") return UpdateStyle::Residual;
  if (s == "identity") return UpdateStyle::Identity;
  throw std::invalid_argument("unknown update style '" + std::string(s) + "'");
}

inline std::string_view pull_mode_name(PullMode p) { return p == PullMode::FeatureDifference ? "diff" : "zero"; }
inline PullMode parse_pull_mode(std::string_view s) {
  if (s == "diff") return PullMode::FeatureDifference;
  if (s == "zero") return PullMode::ZeroFeature;
  throw std::invalid_argument("unknown pull mode '" + std::string(s) + "'");
}

inline std::string_view posenc_name(PosEncMode p) {
  switch (p) {
    case PosEncMode::Global: return "global";
    case PosEncMode::Local: return "local";
    case PosEncMode::None: return "none";
  }
  return "?";
}
inline PosEncMode parse_posenc(std::string_view s) {
  if (s == "global") return PosEncMode::Global;
  if (s == "local") return PosEncMode::Local;
  if (s == "none") return PosEncMode::None;
  throw std::invalid_argument("unknown position encoding '" + std::string(s) + "'");
}

inline std::string_view sampler_name(Sampler s) { return s == Sampler::Random ? "random" : "fps"; }
inline Sampler parse_sampler(std::string_view s) {
  if (s == "random" || s == "rs") return Sampler::Random;
  if (s == "fps") return Sampler::Fps;
  throw std::invalid_argument("unknown sampler '" + std::string(s) + "'");
}

struct AppBlockConfig {
  std::size_t c_in = 32;
  std::size_t c_out = 64;
  std::size_t r_a = 64;
  std::size_t r_d = 8;
  Family family = Family::Exponential;
  Style style = Style::AdaptiveWeight;
  UpdateStyle update_style = UpdateStyle::Concat;
  PullMode pull_mode = PullMode::FeatureDifference;
  PosEncMode posenc = PosEncMode::Global;
  Sampler sampler = Sampler::Random;

  // Point-wise style with a non-linear family returns [feature part, relation part].
  bool split_pull() const { return style == Style::PointwiseMLP && family != Family::Linear; }
  std::size_t pull_channels() const { return split_pull() ? 2 * c_in : c_in; }
  std::size_t relation_in() const {
    return style == Style::PointwiseMLP && family == Family::Linear ? 2 * c_in : c_in;
  }
  std::size_t mixer_in() const {
    return update_style == UpdateStyle::Concat ? pull_channels() + c_in : pull_channels();
  }
  std::size_t out_channels() const { return update_style == UpdateStyle::Identity ? pull_channels() : c_out; }

  void validate() const {
    if (r_a < 1 || r_d < 1) throw std::invalid_argument("AppBlockConfig: ratios must be >= 1");
    if (c_in < 1 || c_out < 1) throw std::invalid_argument("AppBlockConfig: channels must be >= 1");
    if (posenc == PosEncMode::None && c_in < 3)
      throw std::invalid_argument("AppBlockConfig: raw-coordinate relations need c_in >= 3");
    if (update_style == UpdateStyle::Residual && c_out != c_in)
      throw std::invalid_argument("AppBlockConfig: residual update requires c_out == c_in");
  }
};

template <class T>
struct AppBlockParams {
  DenseUnit<T> posenc;        // 3 -> c_in (unused with PosEncMode::None)
  LinearLayer<T> relation;    // relation_in -> c_in, bias-free (a bias cancels in every family)
  DenseUnit<T> mixer;         // mixer_in -> c_out (unused with UpdateStyle::Identity)

  AppBlockParams() = default;
  AppBlockParams(const AppBlockConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.posenc != PosEncMode::None) posenc = DenseUnit<T>(3, cfg.c_in, rng);
    relation = LinearLayer<T>(cfg.relation_in(), cfg.c_in, rng, false);
    if (cfg.update_style != UpdateStyle::Identity) mixer = DenseUnit<T>(cfg.mixer_in(), cfg.c_out, rng);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    if (posenc.linear.weight.defined()) posenc.collect(prefix + ".posenc", out);
    relation.collect(prefix + ".relation", out);
    if (mixer.linear.weight.defined()) mixer.collect(prefix + ".mixer", out);
  }

  void collect_norms(const std::string& prefix, std::vector<std::pair<std::string, BatchNormState<T>*>>& out) {
    if (posenc.linear.weight.defined()) out.emplace_back(prefix + ".posenc.bn", &posenc.norm);
    if (mixer.linear.weight.defined()) out.emplace_back(prefix + ".mixer.bn", &mixer.norm);
  }
};

/// Stacked points of several samples; sizes[s] rows belong to sample s.
template <class T>
struct CloudBatch {
  std::vector<T> positions;
  std::vector<std::size_t> sizes;

  std::size_t total() const { return positions.size() / 3; }
  std::span<const T> sample(std::size_t s, std::size_t offset) const {
    return std::span<const T>(positions).subspan(3 * offset, 3 * sizes[s]);
  }
};

template <class T>
CloudBatch<T> single_cloud(std::vector<T> positions) {
  CloudBatch<T> b;
  b.sizes = {positions.size() / 3};
  b.positions = std::move(positions);
  return b;
}

enum class PartitionStage : std::uint64_t { Auxiliary = 1, Downsample = 2 };

/// Seed for one partition; identical for every sample of a batch so that
/// identical clouds get identical partitions.
inline std::uint64_t partition_seed(std::uint64_t seed, std::size_t layer, PartitionStage stage) {
  return derive_seed(seed, {static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(stage)});
}

/// Per-sample subsample + 1-NN, merged over the batch. Also returns the
/// per-sample anchor counts.
template <class T>
std::pair<BlockPartition<T>, std::vector<std::size_t>> partition_batch(const CloudBatch<T>& batch, std::size_t ratio,
                                                                       Sampler sampler, std::uint64_t seed) {
  std::vector<BlockPartition<T>> parts;
  std::vector<std::size_t> counts;
  std::size_t off = 0;
  for (std::size_t s = 0; s < batch.sizes.size(); ++s) {
    auto pts = batch.sample(s, off);
    const std::size_t n = batch.sizes[s];
    std::vector<std::size_t> idx;
    if (sampler == Sampler::Fps)
      idx = fps_subsample<T>(pts, std::max<std::size_t>(1, ceil_div(n, ratio)), seed);
    else
      idx = random_subsample(n, ratio, seed);
    const auto anchors = select_points<T>(pts, idx);
    parts.push_back(one_nn_assign<T>(pts, anchors));
    counts.push_back(idx.size());
    off += n;
  }
  return {merge_partitions(parts), counts};
}

namespace detail {

template <class T>
Tensor<T> pad_coordinates(std::span<const T> xyz, std::size_t width) {
  const std::size_t n = xyz.size() / 3;
  std::vector<T> v(n * width, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d) v[i * width + d] = xyz[3 * i + d];
  return Tensor<T>({n, width}, std::move(v));
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& x) {
  return Tensor<T>::zeros(x.shape());
}

}  // namespace detail

/// Position encodings of the points and of the auxiliary points.
template <class T>
struct Encoding {
  Tensor<T> points;   // N x c_in, differentiable
  Tensor<T> anchors;  // M x c_in, constant
};

/// phi(p) per point. Global encodes raw coordinates, Local encodes p - A(p),
/// None passes coordinates zero-padded to c_in.
template <class T>
Encoding<T> position_encode(std::span<const T> points, const BlockPartition<T>& part, const AppBlockConfig& cfg,
                            AppBlockParams<T>& params, Mode mode, CostReport* cost = nullptr) {
  const std::size_t n = points.size() / 3, m = part.num_blocks(), c = cfg.c_in;
  Encoding<T> enc;
  switch (cfg.posenc) {
    case PosEncMode::Global: {
      enc.points = params.posenc(Tensor<T>({n, 3}, std::vector<T>(points.begin(), points.end())), mode);
      enc.anchors = params.posenc.apply_detached(Tensor<T>({m, 3}, part.anchors), mode);
      break;
    }
    case PosEncMode::Local: {
      std::vector<T> local(3 * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < 3; ++d) local[3 * i + d] = points[3 * i + d] - part.anchors[3 * part.assignment[i] + d];
      enc.points = params.posenc(Tensor<T>({n, 3}, std::move(local)), mode);
      enc.anchors = params.posenc.apply_detached(Tensor<T>::zeros({m, 3}), mode);
      break;
    }
    case PosEncMode::None: {
      enc.points = detail::pad_coordinates<T>(points, c);
      enc.anchors = detail::pad_coordinates<T>(part.anchors, c);
      break;
    }
  }
  if (cost && cfg.posenc != PosEncMode::None) {
    cost->add("position_encoding", n * 3 * c, n * c);
    cost->add("anchor_encoding", m * 3 * c, m * c);
  }
  return enc;
}

/// What the push step leaves on the auxiliary points, plus the per-point
/// relation terms that the pull step reuses.
template <class T>
struct PushState {
  std::vector<Tensor<T>> accumulators;  // each M x c_in
  Tensor<T> feature_mean;               // M x c_in, split point-wise only
  ops::Components<Tensor<T>> alpha;     // per-point alpha components
  Tensor<T> relation_diff;              // d_i = phi_i - phi_A(i)
};

template <class T>
PushState<T> push(const Tensor<T>& features, const Encoding<T>& enc, const BlockPartition<T>& part,
                  const AppBlockConfig& cfg, const AppBlockParams<T>& params, CostReport* cost = nullptr) {
  const std::size_t n = features.rows(), m = part.num_blocks(), c = cfg.c_in;
  if (features.cols() != c || enc.points.cols() != c)
    throw std::invalid_argument("push: feature/encoding width differs from c_in");
  if (part.num_points() != n) throw std::invalid_argument("push: partition does not match point count");

  PushState<T> st;
  st.relation_diff = enc.points - gather(enc.anchors, part);
  std::size_t payload = 0, products = 0;

  if (cfg.style == Style::PointwiseMLP && cfg.family == Family::Linear) {
    auto u = matmul_add(concat_cols<T>({features, st.relation_diff}), params.relation.weight);
    st.alpha = ops::alpha(Family::Linear, u);
    st.accumulators.push_back(scatter_mean(st.alpha[0], part));
    payload = 1;
  } else {
    auto u = matmul_add(st.relation_diff, params.relation.weight);
    st.alpha = ops::alpha(cfg.family, u);
    if (cfg.style == Style::AdaptiveWeight) {
      for (const auto& a : st.alpha) st.accumulators.push_back(scatter_mean(features * a, part));
      products = st.alpha.size();
      if (cfg.family == Family::Linear) st.accumulators.push_back(scatter_mean(features, part));
      payload = st.accumulators.size();
    } else {
      for (const auto& a : st.alpha) st.accumulators.push_back(scatter_mean(a, part));
      st.feature_mean = scatter_mean(features, part);
      payload = st.accumulators.size() + 1;
    }
  }
  if (cost) {
    cost->add("relation", n * cfg.relation_in() * c, n * c);
    cost->add("push", n * c * products + m * c * payload, n * c * products + m * c * payload);
  }
  return st;
}

/// g_i from the auxiliary accumulators and point i's own relation term.
template <class T>
Tensor<T> pull(const PushState<T>& st, const Tensor<T>& features, const BlockPartition<T>& part,
               const AppBlockConfig& cfg, const AppBlockParams<T>& params, CostReport* cost = nullptr) {
  const std::size_t n = features.rows(), c = cfg.c_in;
  if (part.num_points() != n || st.accumulators.empty() || st.accumulators.front().rows() != part.num_blocks())
    throw std::invalid_argument("pull: partition does not match the push state");
  std::vector<Tensor<T>> pulled;
  for (const auto& a : st.accumulators) pulled.push_back(gather(a, part));

  Tensor<T> g;
  std::size_t products = 0, extra = 0;
  if (cfg.style == Style::PointwiseMLP && cfg.family == Family::Linear) {
    ops::Components<Tensor<T>> beta;
    if (cfg.pull_mode == PullMode::FeatureDifference) {
      beta = ops::beta_from_alpha(Family::Linear, st.alpha);
    } else {
      // W x [0, phi_A - phi_i]; no reuse possible
      auto arg = concat_cols<T>({detail::zeros_like(features), -st.relation_diff});
      beta = {matmul_add(arg, params.relation.weight)};
      extra = n * 2 * c * c;
    }
    g = ops::epsilon_combine(Family::Linear, ops::Components<Tensor<T>>{pulled[0]}, beta);
  } else if (cfg.style == Style::AdaptiveWeight) {
    auto beta = ops::beta_from_alpha(cfg.family, st.alpha);
    if (cfg.family == Family::Linear) {
      // f_j (alpha_j + beta_i) summed over the block: mean(f*alpha) + mean(f) * beta_i
      g = pulled[0] + pulled[1] * beta[0];
    } else {
      g = ops::epsilon_combine(cfg.family, pulled, beta);
    }
    products = beta.size();
  } else {
    auto beta = ops::beta_from_alpha(cfg.family, st.alpha);
    auto rel = ops::epsilon_combine(cfg.family, pulled, beta);
    auto feat = gather(st.feature_mean, part);
    if (cfg.pull_mode == PullMode::FeatureDifference) feat = feat - features;
    g = concat_cols<T>({feat, rel});
    products = beta.size();
  }
  if (cost) cost->add("pull", n * c * products + extra, n * cfg.pull_channels());
  return g;
}

template <class T>
Tensor<T> channel_mix(const Tensor<T>& g, const Tensor<T>& f, AppBlockParams<T>& params, const AppBlockConfig& cfg,
                      Mode mode, CostReport* cost = nullptr) {
  Tensor<T> out;
  switch (cfg.update_style) {
    case UpdateStyle::Concat: out = params.mixer(concat_cols<T>({g, f}), mode); break;
    case UpdateStyle::NoConcat: out = params.mixer(g, mode); break;
    case UpdateStyle::Residual:
      if (f.cols() != cfg.c_out) throw std::invalid_argument("channel_mix: residual update needs c_out == c_in");
      out = params.mixer(g, mode) + f;
      break;
    case UpdateStyle::Identity: out = g; break;
  }
  if (cost) {
    const std::size_t macs =
        cfg.update_style == UpdateStyle::Identity ? 0 : g.rows() * cfg.mixer_in() * cfg.c_out;
    cost->add("channel_mixing", macs, out.numel());
  }
  return out;
}

template <class T>
struct Downsampled {
  CloudBatch<T> cloud;
  Tensor<T> features;
  BlockPartition<T> partition;
};

/// Second, independent partition with channel-wise max pooling; the anchors
/// become the new points.
template <class T>
Downsampled<T> block_downsample(const CloudBatch<T>& cloud, const Tensor<T>& features, std::size_t r_d,
                                Sampler sampler, std::uint64_t seed, CostReport* cost = nullptr) {
  if (r_d < 1) throw std::invalid_argument("block_downsample: r_d must be >= 1");
  auto [part, counts] = partition_batch(cloud, r_d, sampler, seed);
  Downsampled<T> out;
  out.features = scatter_max(features, part);
  out.cloud.positions = part.anchors;
  out.cloud.sizes = std::move(counts);
  out.partition = std::move(part);
  if (cost) cost->add("block_pool", 0, out.features.numel());
  return out;
}

template <class T>
struct BlockOutput {
  CloudBatch<T> cloud;
  Tensor<T> features;
  BlockPartition<T> auxiliary;
  BlockPartition<T> downsample;
};

/// Full block: partition, encode, push, pull, mix, downsample.
template <class T>
BlockOutput<T> app_block_forward(const CloudBatch<T>& cloud, const Tensor<T>& features, const AppBlockConfig& cfg,
                                 AppBlockParams<T>& params, Mode mode, std::uint64_t seed, std::size_t layer = 0,
                                 CostReport* cost = nullptr) {
  cfg.validate();
  if (features.rows() != cloud.total()) throw std::invalid_argument("app_block_forward: feature rows != point count");
  auto aux = partition_batch(cloud, cfg.r_a, Sampler::Random, partition_seed(seed, layer, PartitionStage::Auxiliary)).first;
  auto enc = position_encode<T>(cloud.positions, aux, cfg, params, mode, cost);
  auto st = push(features, enc, aux, cfg, params, cost);
  auto g = pull(st, features, aux, cfg, params, cost);
  auto mixed = channel_mix(g, features, params, cfg, mode, cost);
  auto down = block_downsample(cloud, mixed, cfg.r_d, cfg.sampler, partition_seed(seed, layer, PartitionStage::Downsample),
                               cost);
  return {std::move(down.cloud), std::move(down.features), std::move(aux), std::move(down.partition)};
}

}  // namespace appnet
