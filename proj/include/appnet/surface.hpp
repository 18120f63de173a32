#pragma once

// PCA normals and curvature from k-nearest-neighbor covariances.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "appnet/geometry.hpp"

namespace appnet {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

struct Eigen3 {
  Vec3 values;   // ascending
  Mat3 vectors;  // column j is the eigenvector of values[j]
  bool converged = true;
};

template <class T>
struct SurfaceDescriptor {
  std::vector<T> normals;    // N x 3
  std::vector<T> curvature;  // N
  std::vector<bool> degenerate;

  std::size_t size() const { return curvature.size(); }
};

/// C_i = (1/k) sum_j (p_j - p_i)(p_j - p_i)^T over the k neighbors of point i.
template <class T>
std::vector<Mat3> local_covariance(std::span<const T> points, std::span<const std::size_t> neighbors, std::size_t k) {
  if (k < 3) throw std::invalid_argument("local_covariance: k must be >= 3");
  const std::size_t n = points.size() / 3;
  if (neighbors.size() != n * k) throw std::invalid_argument("local_covariance: neighbor table must be N x k");
  std::vector<Mat3> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Mat3 c{};
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t q = neighbors[i * k + j];
      const double d[3] = {static_cast<double>(points[3 * q]) - points[3 * i],
                           static_cast<double>(points[3 * q + 1]) - points[3 * i + 1],
                           static_cast<double>(points[3 * q + 2]) - points[3 * i + 2]};
      for (int r = 0; r < 3; ++r)
        for (int s = 0; s < 3; ++s) c[r][s] += d[r] * d[s];
    }
    for (auto& row : c)
      for (auto& v : row) v /= static_cast<double>(k);
    out[i] = c;
  }
  return out;
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix.
/// Sweeps until the off-diagonal mass falls below 1e-12 (relative to the
/// Frobenius norm) or 32 sweeps have run.
inline Eigen3 sym3_eigen(const Mat3& input) {
  double scale = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s) scale = std::max(scale, std::abs(input[r][s]));
  for (int r = 0; r < 3; ++r)
    for (int s = r + 1; s < 3; ++s)
      if (std::abs(input[r][s] - input[s][r]) > 1e-9 * std::max(1.0, scale))
        throw std::invalid_argument("sym3_eigen: matrix is not symmetric");

  Mat3 a = input;
  Mat3 v{};
  for (int i = 0; i < 3; ++i) v[i][i] = 1.0;
  Eigen3 res;
  res.converged = false;
  double frob = 0.0;
  for (const auto& row : a)
    for (double x : row) frob += x * x;
  const double tol = 1e-12 * std::max(std::sqrt(frob), 1e-300);

  for (int sweep = 0; sweep < 32; ++sweep) {
    const double off = std::sqrt(a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]);
    if (off <= tol) {
      res.converged = true;
      break;
    }
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  if (!res.converged) {
    const double off = std::sqrt(a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]);
    res.converged = off <= tol;
  }

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x][x] < a[y][y]; });
  for (int j = 0; j < 3; ++j) {
    res.values[j] = a[order[j]][order[j]];
    for (int r = 0; r < 3; ++r) res.vectors[r][j] = v[r][order[j]];
  }
  return res;
}

/// Normals (eigenvector of the smallest eigenvalue, oriented toward the
/// viewpoint) and curvature lambda0 / (lambda0 + lambda1 + lambda2).
/// A neighborhood with trace below 1e-12 gets normal (0,0,1) and curvature 0.
template <class T>
SurfaceDescriptor<T> estimate_surface(std::span<const T> points, std::size_t k, Vec3 viewpoint = {0.0, 0.0, 0.0}) {
  const std::size_t n = points.size() / 3;
  if (k < 3) throw std::invalid_argument("estimate_surface: k must be >= 3");
  if (n <= k) throw std::invalid_argument("estimate_surface: need more than k points");
  const auto nbrs = knn<T>(points, points, k);
  const auto covs = local_covariance<T>(points, nbrs, k);
  SurfaceDescriptor<T> out;
  out.normals.resize(3 * n);
  out.curvature.resize(n);
  out.degenerate.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = covs[i];
    const double trace = c[0][0] + c[1][1] + c[2][2];
    Vec3 nrm{0.0, 0.0, 1.0};
    double sigma = 0.0;
    if (trace < 1e-12) {
      out.degenerate[i] = true;
    } else {
      const auto eig = sym3_eigen(c);
      const Vec3 lam{std::max(eig.values[0], 0.0), std::max(eig.values[1], 0.0), std::max(eig.values[2], 0.0)};
      sigma = std::clamp(lam[0] / (lam[0] + lam[1] + lam[2]), 0.0, 1.0 / 3.0);
      nrm = {eig.vectors[0][0], eig.vectors[1][0], eig.vectors[2][0]};
      const double len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
      for (auto& x : nrm) x /= len;
    }
    double facing = 0.0;
    for (int d = 0; d < 3; ++d) facing += nrm[d] * (viewpoint[d] - static_cast<double>(points[3 * i + d]));
    if (facing < 0.0)
      for (auto& x : nrm) x = -x;
    for (int d = 0; d < 3; ++d) out.normals[3 * i + d] = static_cast<T>(nrm[d]);
    out.curvature[i] = static_cast<T>(sigma);
  }
  return out;
}

}  // namespace appnet
