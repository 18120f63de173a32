#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "appnet/tensor.hpp"

namespace appnet {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

template <class T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <class T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D dfdx) {
  std::vector<T> y(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(y), {x}, [dfdx](Node<T>& self) {
    auto& in = parent(self, 0);
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
  });
}

}  // namespace detail

/// out = x * weight (+ bias). x: N x C_in, weight: C_in x C_out, bias: C_out or undefined.
template <class T>
Tensor<T> matmul_add(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  detail::require_matrix(x, "matmul_add");
  detail::require_matrix(weight, "matmul_add");
  if (x.cols() != weight.rows())
    throw std::invalid_argument("matmul_add: inner dimensions differ " + shape_str(x.shape()) + " x " +
                                shape_str(weight.shape()));
  const std::size_t n = x.rows(), cin = x.cols(), cout = weight.cols();
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != cout) throw std::invalid_argument("matmul_add: bias width mismatch");

  std::vector<T> out(n * cout);
  detail::MapMat<T> y(out.data(), n, cout);
  y.noalias() = detail::CMapMat<T>(x.values().data(), n, cin) * detail::CMapMat<T>(weight.values().data(), cin, cout);
  if (has_bias) {
    auto b = bias.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < cout; ++o) out[i * cout + o] += b[o];
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result<T>("matmul_add", {n, cout}, std::move(out), std::move(inputs),
                                [n, cin, cout, has_bias](detail::Node<T>& self) {
                                  auto& xin = detail::parent(self, 0);
                                  auto& w = detail::parent(self, 1);
                                  detail::CMapMat<T> dy(self.grad.data(), n, cout);
                                  if (xin.requires_grad) {
                                    detail::MapMat<T> dx(xin.ensure_grad().data(), n, cin);
                                    dx.noalias() += dy * detail::CMapMat<T>(w.value.data(), cin, cout).transpose();
                                  }
                                  if (w.requires_grad) {
                                    detail::MapMat<T> dw(w.ensure_grad().data(), cin, cout);
                                    dw.noalias() += detail::CMapMat<T>(xin.value.data(), n, cin).transpose() * dy;
                                  }
                                  if (has_bias) {
                                    auto& b = detail::parent(self, 2);
                                    if (b.requires_grad) {
                                      auto& db = b.ensure_grad();
                                      for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t o = 0; o < cout; ++o) db[o] += self.grad[i * cout + o];
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = detail::parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return detail::unary<T>("reciprocal", x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>("sin", x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary<T>("cos", x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

template <class T>
T max_abs(const Tensor<T>& x) {
  T m = T(0);
  for (T v : x.values()) {
    if (std::isnan(v)) return v;
    m = std::max(m, std::abs(v));
  }
  return m;
}

/// Elementwise x if x >= 0, slope * x otherwise. The derivative at 0 is slope.
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
  if (!(slope > T(0) && slope < T(1))) throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  return detail::unary<T>(
      "leaky_relu", x, [slope](T v) { return v >= T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

/// Sum of all elements as a 1-element tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return detail::make_result<T>("sum", {1}, {s}, {x}, [](detail::Node<T>& self) {
    auto& p = detail::parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// Horizontal concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(n * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return detail::make_result<T>("concat_cols", {n, total}, std::move(out), parts,
                                [n, total, widths](detail::Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& p = detail::parent(self, k);
                                    if (p.requires_grad) {
                                      auto& g = p.ensure_grad();
                                      for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t c = 0; c < widths[k]; ++c)
                                          g[i * widths[k] + c] += self.grad[i * total + off + c];
                                    }
                                    off += widths[k];
                                  }
                                });
}

/// Multiplies row i of x by the constant weights[i].
template <class T>
Tensor<T> row_scale(const Tensor<T>& x, std::vector<T> weights) {
  detail::require_matrix(x, "row_scale");
  if (weights.size() != x.rows()) throw std::invalid_argument("row_scale: weight count mismatch");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.values()[i * c + j] * weights[i];
  return detail::make_result<T>("row_scale", x.shape(), std::move(out), {x},
                                [n, c, w = std::move(weights)](detail::Node<T>& self) {
                                  auto& p = detail::parent(self, 0);
                                  if (!p.requires_grad) return;
                                  auto& g = p.ensure_grad();
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * w[i];
                                });
}

/// out[i] = x[index[i]]; gradient scatters back with accumulation.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t m = x.rows(), c = x.cols();
  std::vector<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(x.values().data() + index[i] * c, c, out.data() + i * c);
  }
  const std::size_t n = index.size();
  return detail::make_result<T>("gather_rows", {n, c}, std::move(out), {x},
                                [c, idx = std::move(index)](detail::Node<T>& self) {
                                  auto& p = detail::parent(self, 0);
                                  if (!p.requires_grad) return;
                                  auto& g = p.ensure_grad();
                                  for (std::size_t i = 0; i < idx.size(); ++i)
                                    for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
                                });
}

/// Segment sum/mean/max over rows, keyed by group[i] in [0, groups).
/// Rows are accumulated in ascending index order. Empty groups yield zero rows
/// and receive no gradient.
enum class Reduce { Sum, Mean, Max };

template <class T>
Tensor<T> segment_reduce(const Tensor<T>& x, std::span<const std::size_t> group, std::size_t groups, Reduce mode) {
  detail::require_matrix(x, "segment_reduce");
  const std::size_t n = x.rows(), c = x.cols();
  if (group.size() != n) throw std::invalid_argument("segment_reduce: group vector length differs from row count");
  std::vector<std::size_t> counts(groups, 0);
  for (auto gi : group) {
    if (gi >= groups) throw std::out_of_range("segment_reduce: group index out of range");
    ++counts[gi];
  }
  std::vector<std::size_t> grp(group.begin(), group.end());
  auto xv = x.values();
  std::vector<T> out(groups * c, T(0));

  if (mode == Reduce::Max) {
    // argmax row per (group, channel); lowest index wins ties
    std::vector<std::size_t> arg(groups * c, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t gi = grp[i];
      for (std::size_t j = 0; j < c; ++j) {
        auto& a = arg[gi * c + j];
        if (a == n || xv[i * c + j] > xv[a * c + j]) a = i;
      }
    }
    for (std::size_t k = 0; k < groups * c; ++k)
      if (arg[k] != n) out[k] = xv[arg[k] * c + k % c];
    return detail::make_result<T>("scatter_max", {groups, c}, std::move(out), {x},
                                  [n, c, arg = std::move(arg)](detail::Node<T>& self) {
                                    auto& p = detail::parent(self, 0);
                                    if (!p.requires_grad) return;
                                    auto& g = p.ensure_grad();
                                    for (std::size_t k = 0; k < arg.size(); ++k)
                                      if (arg[k] != n) g[arg[k] * c + k % c] += self.grad[k];
                                  });
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[grp[i] * c + j] += xv[i * c + j];
  std::vector<T> scale(groups, T(1));
  if (mode == Reduce::Mean) {
    for (std::size_t m = 0; m < groups; ++m) {
      if (counts[m] == 0) continue;
      scale[m] = T(1) / static_cast<T>(counts[m]);
      for (std::size_t j = 0; j < c; ++j) out[m * c + j] *= scale[m];
    }
  }
  return detail::make_result<T>(mode == Reduce::Mean ? "scatter_mean" : "scatter_sum", {groups, c}, std::move(out),
                                {x},
                                [c, grp = std::move(grp), scale = std::move(scale)](detail::Node<T>& self) {
                                  auto& p = detail::parent(self, 0);
                                  if (!p.requires_grad) return;
                                  auto& g = p.ensure_grad();
                                  for (std::size_t i = 0; i < grp.size(); ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      g[i * c + j] += self.grad[grp[i] * c + j] * scale[grp[i]];
                                });
}

/// Mean softmax cross-entropy over rows of logits (B x K).
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t b = logits.rows(), k = logits.cols();
  if (labels.size() != b) throw std::invalid_argument("cross_entropy: label count mismatch");
  std::vector<T> prob(b * k);
  T loss = T(0);
  auto lv = logits.values();
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("cross_entropy: label outside class range");
    T mx = lv[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += std::exp(lv[i * k + j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(lv[i * k + j] - mx) / z;
    loss += -(lv[i * k + labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<T>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result<T>("cross_entropy", {1}, {loss}, {logits},
                                [b, k, prob = std::move(prob), lab = std::move(lab)](detail::Node<T>& self) {
                                  auto& p = detail::parent(self, 0);
                                  if (!p.requires_grad) return;
                                  auto& g = p.ensure_grad();
                                  const T s = self.grad[0] / static_cast<T>(b);
                                  for (std::size_t i = 0; i < b; ++i)
                                    for (std::size_t j = 0; j < k; ++j)
                                      g[i * k + j] +=
                                          s * (prob[i * k + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
                                });
}

/// Multiplies by a fixed 0 / (1/(1-p)) mask.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, std::vector<T> mask) {
  if (mask.size() != x.numel()) throw std::invalid_argument("apply_mask: mask size mismatch");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return detail::make_result<T>("dropout", x.shape(), std::move(out), {x},
                                [m = std::move(mask)](detail::Node<T>& self) {
                                  auto& p = detail::parent(self, 0);
                                  if (!p.requires_grad) return;
                                  auto& g = p.ensure_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * m[i];
                                });
}

}  // namespace appnet
