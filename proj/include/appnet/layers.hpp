#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "appnet/rng.hpp"
#include "appnet/tensor.hpp"
#include "appnet/tensor_ops.hpp"

namespace appnet {

enum class Mode { Train, Eval };

inline constexpr double kLeakySlope = 0.01;

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Fully connected layer; weight is C_in x C_out.
template <class T>
struct LinearLayer {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer is bias-free

  LinearLayer() = default;

  // Weights uniform in +-sqrt(1/C_in), bias zero.
  LinearLayer(std::size_t c_in, std::size_t c_out, Rng& rng, bool with_bias = true) {
    if (c_in == 0 || c_out == 0) throw std::invalid_argument("LinearLayer: channel widths must be positive");
    const double bound = std::sqrt(1.0 / static_cast<double>(c_in));
    std::vector<T> w(c_in * c_out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    weight = Tensor<T>::matrix(c_in, c_out, std::move(w), true);
    if (with_bias) bias = Tensor<T>::zeros({c_out}, true);
  }

  std::size_t in_channels() const { return weight.rows(); }
  std::size_t out_channels() const { return weight.cols(); }
  std::size_t macs(std::size_t rows) const { return rows * in_channels() * out_channels(); }

  Tensor<T> operator()(const Tensor<T>& x) const { return matmul_add(x, weight, bias); }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct BatchNormState {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  // Batch statistics of the most recent train-mode call; reused to encode
  // auxiliary coordinates consistently with the points of the same pass.
  std::vector<T> last_mean, last_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma({channels}, std::vector<T>(channels, T(1)), true),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  std::size_t channels() const { return running_mean.size(); }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
  }
};

/// Per-channel normalization over the row axis.
///
/// Train mode uses (biased) batch statistics and folds the unbiased variance
/// into the running estimate; eval mode uses the running statistics.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& st, Mode mode) {
  detail::require_matrix(x, "batchnorm");
  const std::size_t n = x.rows(), c = x.cols();
  if (c != st.channels()) throw std::invalid_argument("batchnorm: channel mismatch");
  if (!(st.eps > T(0))) throw std::invalid_argument("batchnorm: eps must be positive");
  auto xv = x.values();
  std::vector<T> mean(c, T(0)), var(c, T(0));
  if (mode == Mode::Train) {
    if (n < 2) throw std::invalid_argument("batchnorm: train mode needs at least 2 rows, got " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[i * c + j];
    for (auto& m : mean) m /= static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xv[i * c + j] - mean[j];
        var[j] += d * d;
      }
    for (auto& v : var) v /= static_cast<T>(n);
    for (std::size_t j = 0; j < c; ++j) {
      const T unbiased = var[j] * static_cast<T>(n) / static_cast<T>(n - 1);
      st.running_mean[j] = (T(1) - st.momentum) * st.running_mean[j] + st.momentum * mean[j];
      st.running_var[j] = (T(1) - st.momentum) * st.running_var[j] + st.momentum * unbiased;
    }
    st.last_mean = mean;
    st.last_var = var;
  } else {
    mean = st.running_mean;
    var = st.running_var;
  }

  std::vector<T> inv_std(c), xhat(n * c), out(n * c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = T(1) / std::sqrt(var[j] + st.eps);
  auto g = st.gamma.values();
  auto b = st.beta.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[i * c + j] - mean[j]) * inv_std[j];
      xhat[i * c + j] = h;
      out[i * c + j] = g[j] * h + b[j];
    }

  const bool train = mode == Mode::Train;
  return detail::make_result<T>(
      "batchnorm", {n, c}, std::move(out), {x, st.gamma, st.beta},
      [n, c, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node<T>& self) {
        auto& xin = detail::parent(self, 0);
        auto& gam = detail::parent(self, 1);
        auto& bet = detail::parent(self, 2);
        std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            sum_dy[j] += self.grad[i * c + j];
            sum_dy_xhat[j] += self.grad[i * c + j] * xhat[i * c + j];
          }
        if (gam.requires_grad) {
          auto& gg = gam.ensure_grad();
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_dy_xhat[j];
        }
        if (bet.requires_grad) {
          auto& gb = bet.ensure_grad();
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_dy[j];
        }
        if (!xin.requires_grad) return;
        auto& gx = xin.ensure_grad();
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const T dxhat = self.grad[i * c + j] * gam.value[j];
            if (train) {
              const T mean_dxhat = sum_dy[j] * gam.value[j] * inv_n;
              const T mean_dxhat_xhat = sum_dy_xhat[j] * gam.value[j] * inv_n;
              gx[i * c + j] += inv_std[j] * (dxhat - mean_dxhat - xhat[i * c + j] * mean_dxhat_xhat);
            } else {
              gx[i * c + j] += inv_std[j] * dxhat;
            }
          }
      });
}

/// Applies fixed statistics (no history through the statistics themselves).
template <class T>
Tensor<T> batchnorm_with_stats(const Tensor<T>& x, const BatchNormState<T>& st, const std::vector<T>& mean,
                               const std::vector<T>& var) {
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<T> out(n * c);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] =
          st.gamma.values()[j] * (xv[i * c + j] - mean[j]) / std::sqrt(var[j] + st.eps) + st.beta.values()[j];
  return Tensor<T>({n, c}, std::move(out));
}

/// [Linear + BatchNorm + LeakyReLU], the unit used for embeddings, position
/// encodings, channel mixing and classifier layers.
template <class T>
struct DenseUnit {
  LinearLayer<T> linear;
  BatchNormState<T> norm;

  DenseUnit() = default;
  DenseUnit(std::size_t c_in, std::size_t c_out, Rng& rng) : linear(c_in, c_out, rng), norm(c_out) {}

  std::size_t in_channels() const { return linear.in_channels(); }
  std::size_t out_channels() const { return linear.out_channels(); }

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    return leaky_relu(batchnorm(linear(x), norm, mode), T(kLeakySlope));
  }

  // Same unit on a side input, normalized with the statistics of the last
  // train pass (or the running ones in eval mode); result carries no history.
  Tensor<T> apply_detached(const Tensor<T>& x, Mode mode) const {
    auto z = matmul_add(x.detach(), linear.weight.detach(), linear.bias.defined() ? linear.bias.detach() : Tensor<T>{});
    const bool use_last = mode == Mode::Train && !norm.last_mean.empty();
    auto y = batchnorm_with_stats(z, norm, use_last ? norm.last_mean : norm.running_mean,
                                  use_last ? norm.last_var : norm.running_var);
    return leaky_relu(y, T(kLeakySlope)).detach();
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params) const {
    linear.collect(prefix + ".fc", params);
    norm.collect(prefix + ".bn", params);
  }
};

}  // namespace appnet
