#pragma once

// Reducible operator families.
//
// Each family supplies alpha (push side), beta (pull side), their combination
// epsilon and the direct map gamma, such that
//   epsilon(alpha(W(x - a)), beta(W(a - y))) == gamma(W(x - y))
// for any auxiliary point a. The functions are generic over the value type:
// std::valarray for plain vectors and Tensor for the differentiable path.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <valarray>
#include <vector>

namespace appnet {

enum class Family { Linear, Exponential, Sine, Cosine };

inline constexpr double kExpArgumentLimit = 30.0;

inline constexpr int component_count(Family f) { return f == Family::Sine || f == Family::Cosine ? 2 : 1; }

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::Linear: return "lin";
    case Family::Exponential: return "exp";
    case Family::Sine: return "sin";
    case Family::Cosine: return "cos";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "lin" || s == "linear") return Family::Linear;
  if (s == "exp" || s == "exponential") return Family::Exponential;
  if (s == "sin" || s == "sine") return Family::Sine;
  if (s == "cos" || s == "cosine") return Family::Cosine;
  throw std::invalid_argument("unknown operator family '" + std::string(s) + "'");
}

inline constexpr Family kAllFamilies[] = {Family::Linear, Family::Exponential, Family::Sine, Family::Cosine};

template <class T>
std::valarray<T> reciprocal(const std::valarray<T>& v) {
  return T(1) / v;
}

template <class T>
T max_abs(const std::valarray<T>& v) {
  T m = T(0);
  for (T x : v) {
    if (std::isnan(x)) return x;
    m = std::max(m, std::abs(x));
  }
  return m;
}

namespace ops {

template <class V>
using Components = std::vector<V>;

template <class V>
void check_exp_argument(const V& u) {
  if (!(static_cast<double>(max_abs(u)) <= kExpArgumentLimit))
    throw std::domain_error("exponential family: relation argument outside +-30");
}

/// Linear: (u); Exponential: (e^u); Cosine: (cos u, sin u); Sine: (sin u, cos u).
template <class V>
Components<V> alpha(Family f, const V& u) {
  using std::cos;
  using std::exp;
  using std::sin;
  switch (f) {
    case Family::Linear: return {u};
    case Family::Exponential:
      check_exp_argument(u);
      return {V(exp(u))};
    case Family::Cosine: return {V(cos(u)), V(sin(u))};
    case Family::Sine: return {V(sin(u)), V(cos(u))};
  }
  throw std::logic_error("alpha: bad family");
}

/// beta evaluated at -u, derived from alpha(u) without re-evaluating the map.
template <class V>
Components<V> beta_from_alpha(Family f, const Components<V>& a) {
  if (a.size() != static_cast<std::size_t>(component_count(f)))
    throw std::invalid_argument("beta_from_alpha: wrong component count");
  switch (f) {
    case Family::Linear: return {V(-a[0])};
    case Family::Exponential: return {V(reciprocal(a[0]))};
    case Family::Cosine: return {a[0], V(-a[1])};
    case Family::Sine: return {V(-a[0]), a[1]};
  }
  throw std::logic_error("beta_from_alpha: bad family");
}

/// beta for an explicit argument v (the pull-side relation W(a - y)).
template <class V>
Components<V> beta(Family f, const V& v) {
  return alpha(f, v);
}

/// Linear: a+b; Exponential: a*b; Cosine: a0 b0 - a1 b1; Sine: a0 b1 + a1 b0.
template <class V>
V epsilon_combine(Family f, const Components<V>& a, const Components<V>& b) {
  const auto want = static_cast<std::size_t>(component_count(f));
  if (a.size() != want || b.size() != want) throw std::invalid_argument("epsilon_combine: component count mismatch");
  switch (f) {
    case Family::Linear: return V(a[0] + b[0]);
    case Family::Exponential: return V(a[0] * b[0]);
    case Family::Cosine: return V(a[0] * b[0] - a[1] * b[1]);
    case Family::Sine: return V(a[0] * b[1] + a[1] * b[0]);
  }
  throw std::logic_error("epsilon_combine: bad family");
}

/// Linear: w; Exponential: e^w; Cosine: cos w; Sine: sin w.
template <class V>
V gamma_direct(Family f, const V& w) {
  using std::cos;
  using std::exp;
  using std::sin;
  switch (f) {
    case Family::Linear: return w;
    case Family::Exponential: return V(exp(w));
    case Family::Cosine: return V(cos(w));
    case Family::Sine: return V(sin(w));
  }
  throw std::logic_error("gamma_direct: bad family");
}

}  // namespace ops
}  // namespace appnet
