#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "appnet/rng.hpp"
#include "appnet/tensor.hpp"
#include "appnet/tensor_ops.hpp"

namespace appnet {

/// Positions (N x 3, row-major) with optional per-point features and label.
template <class T>
struct PointCloud {
  std::vector<T> positions;
  std::size_t feature_channels = 0;
  std::vector<T> features;
  std::optional<int> label;

  std::size_t size() const { return positions.size() / 3; }
  std::array<T, 3> point(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }

  void validate() const {
    if (positions.empty() || positions.size() % 3 != 0)
      throw std::invalid_argument("PointCloud: positions must be a non-empty N x 3 array");
    for (T v : positions)
      if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite coordinate");
    if (feature_channels > 0 && features.size() != size() * feature_channels)
      throw std::invalid_argument("PointCloud: feature rows do not match point count");
  }

  template <class U>
  PointCloud<U> cast() const {
    PointCloud<U> out;
    out.positions.assign(positions.begin(), positions.end());
    out.feature_channels = feature_channels;
    out.features.assign(features.begin(), features.end());
    out.label = label;
    return out;
  }
};

/// Anchor set plus per-point nearest-anchor assignment.
template <class T>
struct BlockPartition {
  std::vector<T> anchors;  // M x 3
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> block_sizes;

  std::size_t num_points() const { return assignment.size(); }
  std::size_t num_blocks() const { return block_sizes.size(); }
};

template <class T>
inline T squared_distance(const T* a, const T* b) {
  const T dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline std::size_t ceil_div(std::size_t n, std::size_t r) { return (n + r - 1) / r; }

/// Picks ceil(N / ratio) distinct indices with a seeded partial Fisher-Yates shuffle.
inline std::vector<std::size_t> random_subsample(std::size_t n, std::size_t ratio, std::uint64_t seed) {
  if (ratio < 1) throw std::invalid_argument("random_subsample: ratio must be >= 1");
  if (n == 0) throw std::invalid_argument("random_subsample: empty cloud");
  const std::size_t m = std::max<std::size_t>(1, ceil_div(n, ratio));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

/// Farthest point sampling from a seeded start index.
template <class T>
std::vector<std::size_t> fps_subsample(std::span<const T> points, std::size_t count, std::uint64_t seed) {
  const std::size_t n = points.size() / 3;
  if (count < 1 || count > n) throw std::invalid_argument("fps_subsample: count out of range [1, N]");
  std::vector<std::size_t> picked;
  picked.reserve(count);
  Rng rng(seed);
  picked.push_back(static_cast<std::size_t>(rng.uniform_index(n)));
  std::vector<T> dist(n, std::numeric_limits<T>::infinity());
  while (picked.size() < count) {
    const T* last = points.data() + 3 * picked.back();
    std::size_t best = 0;
    T best_d = T(-1);
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], squared_distance(points.data() + 3 * i, last));
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

template <class T>
std::vector<T> select_points(std::span<const T> points, std::span<const std::size_t> idx) {
  std::vector<T> out(idx.size() * 3);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int d = 0; d < 3; ++d) out[3 * i + d] = points[3 * idx[i] + d];
  return out;
}

namespace detail {

template <class T>
BlockPartition<T> finish_partition(std::span<const T> anchors, std::vector<std::size_t> assignment) {
  BlockPartition<T> part;
  part.anchors.assign(anchors.begin(), anchors.end());
  part.block_sizes.assign(anchors.size() / 3, 0);
  for (auto a : assignment) ++part.block_sizes[a];
  part.assignment = std::move(assignment);
  return part;
}

// Uniform grid over the anchors for exact nearest-anchor queries. Cells are
// visited in growing Chebyshev rings until no unvisited cell can hold a
// closer anchor; candidates are ranked by (distance, index).
template <class T>
class AnchorGrid {
 public:
  explicit AnchorGrid(std::span<const T> anchors) : anchors_(anchors) {
    const std::size_t m = anchors.size() / 3;
    lo_ = {anchors[0], anchors[1], anchors[2]};
    std::array<T, 3> hi = lo_;
    for (std::size_t i = 0; i < m; ++i)
      for (int d = 0; d < 3; ++d) {
        lo_[d] = std::min(lo_[d], anchors[3 * i + d]);
        hi[d] = std::max(hi[d], anchors[3 * i + d]);
      }
    T extent = T(0);
    for (int d = 0; d < 3; ++d) extent = std::max(extent, hi[d] - lo_[d]);
    const double per_axis = std::clamp(std::ceil(std::sqrt(static_cast<double>(m) / 2.0)), 1.0, 128.0);
    cell_ = extent > T(0) ? static_cast<T>(extent / per_axis) : T(1);
    for (int d = 0; d < 3; ++d)
      dims_[d] = std::max<long>(1, std::min<long>(static_cast<long>((hi[d] - lo_[d]) / cell_) + 1, 130));
    const std::size_t cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(m);
    for (std::size_t i = 0; i < m; ++i) {
      cell_of[i] = flat(cell_coords(anchors.data() + 3 * i));
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    items_.resize(m);
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < m; ++i) items_[fill[cell_of[i]]++] = i;
  }

  std::size_t nearest(const T* p) const {
    const auto c = cell_coords(p);
    std::size_t best = std::numeric_limits<std::size_t>::max();
    T best_d = std::numeric_limits<T>::infinity();
    const long max_r = std::max({dims_[0], dims_[1], dims_[2]});
    for (long r = 0; r <= max_r; ++r) {
      for (long x = c[0] - r; x <= c[0] + r; ++x) {
        if (x < 0 || x >= dims_[0]) continue;
        for (long y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims_[1]) continue;
          const bool edge_xy = std::abs(x - c[0]) == r || std::abs(y - c[1]) == r;
          for (long z = c[2] - r; z <= c[2] + r; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            if (!edge_xy && std::abs(z - c[2]) != r) continue;
            const std::size_t cell = flat({x, y, z});
            for (std::size_t k = start_[cell]; k < start_[cell + 1]; ++k) {
              const std::size_t a = items_[k];
              const T d = squared_distance(p, anchors_.data() + 3 * a);
              if (d < best_d || (d == best_d && a < best)) {
                best_d = d;
                best = a;
              }
            }
          }
        }
      }
      if (best != std::numeric_limits<std::size_t>::max() && r >= 1) {
        const T reach = (static_cast<T>(r) - T(0.001)) * cell_;
        if (best_d < reach * reach) break;
      }
    }
    return best;
  }

 private:
  std::array<long, 3> cell_coords(const T* p) const {
    std::array<long, 3> c{};
    for (int d = 0; d < 3; ++d) {
      const double v = std::floor(static_cast<double>((p[d] - lo_[d]) / cell_));
      c[d] = static_cast<long>(std::clamp(v, 0.0, static_cast<double>(dims_[d] - 1)));
    }
    return c;
  }
  std::size_t flat(std::array<long, 3> c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  std::span<const T> anchors_;
  std::array<T, 3> lo_{};
  T cell_ = T(1);
  std::array<long, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> items_;
};

}  // namespace detail

/// Nearest anchor per point (lowest anchor index on ties), exhaustive O(N*M).
template <class T>
BlockPartition<T> one_nn_assign_exhaustive(std::span<const T> points, std::span<const T> anchors) {
  const std::size_t n = points.size() / 3, m = anchors.size() / 3;
  if (m == 0) throw std::invalid_argument("one_nn_assign: no anchors");
  std::vector<std::size_t> assignment(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    T best_d = squared_distance(points.data() + 3 * i, anchors.data());
    for (std::size_t j = 1; j < m; ++j) {
      const T d = squared_distance(points.data() + 3 * i, anchors.data() + 3 * j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    assignment[i] = best;
  }
  return detail::finish_partition(anchors, std::move(assignment));
}

/// Nearest anchor per point (lowest anchor index on ties). Same result as the
/// exhaustive scan; large anchor sets go through a uniform grid.
template <class T>
BlockPartition<T> one_nn_assign(std::span<const T> points, std::span<const T> anchors) {
  const std::size_t n = points.size() / 3, m = anchors.size() / 3;
  if (m == 0) throw std::invalid_argument("one_nn_assign: no anchors");
  for (T v : anchors)
    if (!std::isfinite(v)) throw std::invalid_argument("one_nn_assign: non-finite anchor");
  if (m <= 32) return one_nn_assign_exhaustive(points, anchors);
  detail::AnchorGrid<T> grid(anchors);
  std::vector<std::size_t> assignment(n);
  for (std::size_t i = 0; i < n; ++i) assignment[i] = grid.nearest(points.data() + 3 * i);
  return detail::finish_partition(anchors, std::move(assignment));
}

/// k nearest source indices per center, ascending distance, index tie-break.
/// Returns a row-major M x k index matrix.
template <class T>
std::vector<std::size_t> knn(std::span<const T> points, std::span<const T> centers, std::size_t k) {
  const std::size_t n = points.size() / 3, m = centers.size() / 3;
  if (k > n) throw std::invalid_argument("knn: k=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  std::vector<std::size_t> out(m * k);
  std::vector<std::pair<T, std::size_t>> cand(n);
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) cand[i] = {squared_distance(centers.data() + 3 * c, points.data() + 3 * i), i};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out[c * k + j] = cand[j].second;
  }
  return out;
}

/// Mean of the rows in each block; empty blocks yield zero rows.
template <class T>
Tensor<T> scatter_mean(const Tensor<T>& features, const BlockPartition<T>& part) {
  return segment_reduce(features, std::span<const std::size_t>(part.assignment), part.num_blocks(), Reduce::Mean);
}

/// Channel-wise max per block; empty blocks yield zero rows. The gradient goes
/// to the lowest-index argmax.
template <class T>
Tensor<T> scatter_max(const Tensor<T>& features, const BlockPartition<T>& part) {
  return segment_reduce(features, std::span<const std::size_t>(part.assignment), part.num_blocks(), Reduce::Max);
}

/// out[i] = anchor_features[assignment[i]].
template <class T>
Tensor<T> gather(const Tensor<T>& anchor_features, const BlockPartition<T>& part) {
  if (anchor_features.rows() != part.num_blocks()) throw std::invalid_argument("gather: row count differs from block count");
  return gather_rows(anchor_features, part.assignment);
}

/// Concatenates per-sample partitions into one over the stacked batch.
template <class T>
BlockPartition<T> merge_partitions(const std::vector<BlockPartition<T>>& parts) {
  BlockPartition<T> out;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    out.anchors.insert(out.anchors.end(), p.anchors.begin(), p.anchors.end());
    for (auto a : p.assignment) out.assignment.push_back(a + offset);
    out.block_sizes.insert(out.block_sizes.end(), p.block_sizes.begin(), p.block_sizes.end());
    offset += p.num_blocks();
  }
  return out;
}

}  // namespace appnet
