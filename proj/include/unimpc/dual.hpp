#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace unimpc {

/// Maximum number of simultaneously seeded tangent directions.
inline constexpr int kMaxDirections = 16;

/**
 * @brief Forward-mode dual number with a fixed-capacity tangent vector.
 *
 * `Dual<double>` carries first derivatives; `Dual<Dual<double>>` carries
 * second derivatives (dual-over-dual). The number of active directions is
 * runtime, bounded by kMaxDirections, so no heap allocation happens during
 * model evaluation.
 */
template <typename T>
struct Dual {
  T v{};
  std::array<T, kMaxDirections> d{};
  int n = 0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit constants are intended
  template <typename U = T, typename = std::enable_if_t<!std::is_same_v<U, double>>>
  Dual(const T& value) : v(value) {}  // NOLINT
  Dual(const T& value, int dirs) : v(value), n(dirs) {}

  /// Variable seeded along direction `k` out of `dirs`.
  static Dual variable(const T& value, int k, int dirs) {
    assert(dirs <= kMaxDirections && k < dirs);
    Dual r(value, dirs);
    r.d[k] = T(1.0);
    return r;
  }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
};

template <typename T>
struct is_dual : std::false_type {};
template <typename T>
struct is_dual<Dual<T>> : std::true_type {};

/// Innermost real value of a (possibly nested) dual.
inline double value_of(double x) { return x; }
template <typename T>
double value_of(const Dual<T>& x) {
  return value_of(x.v);
}

namespace detail {

// Chain rule for a scalar function with value `fv` and derivative `df`.
template <typename T>
Dual<T> chain(const Dual<T>& a, const T& fv, const T& df) {
  Dual<T> r(fv, a.n);
  for (int k = 0; k < a.n; ++k) r.d[k] = df * a.d[k];
  return r;
}

inline int dirs(int a, int b) { return a > b ? a : b; }

}  // namespace detail

template <typename T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  const int n = detail::dirs(a.n, b.n);
  Dual<T> r(a.v + b.v, n);
  for (int k = 0; k < n; ++k) r.d[k] = a.d[k] + b.d[k];
  return r;
}

template <typename T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  const int n = detail::dirs(a.n, b.n);
  Dual<T> r(a.v - b.v, n);
  for (int k = 0; k < n; ++k) r.d[k] = a.d[k] - b.d[k];
  return r;
}

template <typename T>
Dual<T> operator-(const Dual<T>& a) {
  Dual<T> r(-a.v, a.n);
  for (int k = 0; k < a.n; ++k) r.d[k] = -a.d[k];
  return r;
}

template <typename T>
Dual<T> operator+(const Dual<T>& a) {
  return a;
}

template <typename T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  const int n = detail::dirs(a.n, b.n);
  Dual<T> r(a.v * b.v, n);
  for (int k = 0; k < n; ++k) r.d[k] = a.v * b.d[k] + a.d[k] * b.v;
  return r;
}

template <typename T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  const int n = detail::dirs(a.n, b.n);
  const T inv = T(1.0) / b.v;
  const T q = a.v * inv;
  Dual<T> r(q, n);
  for (int k = 0; k < n; ++k) r.d[k] = (a.d[k] - q * b.d[k]) * inv;
  return r;
}

// Mixed operations with plain doubles.
template <typename T>
Dual<T> operator+(const Dual<T>& a, double b) {
  Dual<T> r = a;
  r.v = r.v + b;
  return r;
}
template <typename T>
Dual<T> operator+(double a, const Dual<T>& b) {
  return b + a;
}
template <typename T>
Dual<T> operator-(const Dual<T>& a, double b) {
  Dual<T> r = a;
  r.v = r.v - b;
  return r;
}
template <typename T>
Dual<T> operator-(double a, const Dual<T>& b) {
  return -b + a;
}
template <typename T>
Dual<T> operator*(const Dual<T>& a, double b) {
  Dual<T> r(a.v * b, a.n);
  for (int k = 0; k < a.n; ++k) r.d[k] = a.d[k] * b;
  return r;
}
template <typename T>
Dual<T> operator*(double a, const Dual<T>& b) {
  return b * a;
}
template <typename T>
Dual<T> operator/(const Dual<T>& a, double b) {
  return a * (1.0 / b);
}
template <typename T>
Dual<T> operator/(double a, const Dual<T>& b) {
  return Dual<T>(a) / b;
}

// Comparisons look at the real value only.
template <typename T>
bool operator<(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) < value_of(b);
}
template <typename T>
bool operator>(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) > value_of(b);
}
template <typename T>
bool operator<=(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) <= value_of(b);
}
template <typename T>
bool operator>=(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) >= value_of(b);
}
template <typename T>
bool operator==(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) == value_of(b);
}
template <typename T>
bool operator!=(const Dual<T>& a, const Dual<T>& b) {
  return value_of(a) != value_of(b);
}
template <typename T>
bool operator<(const Dual<T>& a, double b) {
  return value_of(a) < b;
}
template <typename T>
bool operator>(const Dual<T>& a, double b) {
  return value_of(a) > b;
}

// Elementary functions. Nested duals recurse through the same overloads, so
// every function is written in terms of operations valid for T.
using std::atan;
using std::atan2;
using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;
using std::tanh;

template <typename T>
Dual<T> sin(const Dual<T>& a) {
  return detail::chain(a, T(sin(a.v)), T(cos(a.v)));
}
template <typename T>
Dual<T> cos(const Dual<T>& a) {
  return detail::chain(a, T(cos(a.v)), T(-sin(a.v)));
}
template <typename T>
Dual<T> exp(const Dual<T>& a) {
  const T e = exp(a.v);
  return detail::chain(a, e, e);
}
template <typename T>
Dual<T> log(const Dual<T>& a) {
  return detail::chain(a, T(log(a.v)), T(1.0 / a.v));
}
template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  const T s = sqrt(a.v);
  return detail::chain(a, s, T(0.5 / s));
}
template <typename T>
Dual<T> atan(const Dual<T>& a) {
  return detail::chain(a, T(atan(a.v)), T(1.0 / (1.0 + a.v * a.v)));
}
template <typename T>
Dual<T> tanh(const Dual<T>& a) {
  const T t = tanh(a.v);
  return detail::chain(a, t, T(1.0 - t * t));
}
template <typename T>
Dual<T> atan2(const Dual<T>& y, const Dual<T>& x) {
  const int n = detail::dirs(y.n, x.n);
  const T r2 = x.v * x.v + y.v * y.v;
  Dual<T> r(T(atan2(y.v, x.v)), n);
  for (int k = 0; k < n; ++k) r.d[k] = (x.v * y.d[k] - y.v * x.d[k]) / r2;
  return r;
}
template <typename T>
Dual<T> atan2(const Dual<T>& y, double x) {
  return atan2(y, Dual<T>(x));
}
template <typename T>
Dual<T> atan2(double y, const Dual<T>& x) {
  return atan2(Dual<T>(y), x);
}
template <typename T>
Dual<T> abs(const Dual<T>& a) {
  return value_of(a) < 0.0 ? -a : a;
}

inline bool isfinite_all(double x) { return std::isfinite(x); }
template <typename T>
bool isfinite_all(const Dual<T>& a) {
  if (!isfinite_all(a.v)) return false;
  for (int k = 0; k < a.n; ++k)
    if (!isfinite_all(a.d[k])) return false;
  return true;
}

}  // namespace unimpc

namespace Eigen {

template <typename T>
struct NumTraits<unimpc::Dual<T>> : GenericNumTraits<unimpc::Dual<T>> {
  using Real = unimpc::Dual<T>;
  using NonInteger = unimpc::Dual<T>;
  using Nested = unimpc::Dual<T>;
  using Literal = unimpc::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 4,
    MulCost = 8
  };
  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<unimpc::Dual<T>, double, BinaryOp> {
  using ReturnType = unimpc::Dual<T>;
};
template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<double, unimpc::Dual<T>, BinaryOp> {
  using ReturnType = unimpc::Dual<T>;
};

}  // namespace Eigen
