#pragma once

#include <Eigen/Core>

#include <type_traits>

namespace scorelab {

/// Forward-mode dual number v + d*eps with eps^2 = 0. Nesting Dual<Dual<T>>
/// gives mixed second derivatives, and so on for higher orders.
template <typename T>
struct Dual {
  T v{};
  T d{};

  Dual() = default;
  Dual(T value, T tangent) : v(value), d(tangent) {}
  template <typename A, typename = std::enable_if_t<std::is_arithmetic_v<A>>>
  Dual(A value) : v(static_cast<T>(value)), d(static_cast<T>(0)) {}  // NOLINT(implicit)

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    const T inv = T(1) / b.v;
    return {a.v * inv, (a.d * b.v - a.v * b.d) * inv * inv};
  }
  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
  friend bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.d == b.d; }
  friend bool operator!=(const Dual& a, const Dual& b) { return !(a == b); }
};

template <typename T>
struct is_dual : std::false_type {};
template <typename T>
struct is_dual<Dual<T>> : std::true_type {};

/// Dual nested `Order` times over double (Order 0 is double itself).
template <int Order>
struct NestedDualT {
  using type = Dual<typename NestedDualT<Order - 1>::type>;
};
template <>
struct NestedDualT<0> {
  using type = double;
};
template <int Order>
using NestedDual = typename NestedDualT<Order>::type;

/// Primal part of a (possibly nested) dual.
inline double primal(double x) { return x; }
template <typename T>
double primal(const Dual<T>& x) {
  return primal(x.v);
}

/// Coefficient of eps_1 eps_2 ... eps_Order, i.e. the fully mixed derivative.
inline double top_tangent(double x) { return x; }
template <typename T>
double top_tangent(const Dual<T>& x) {
  return top_tangent(x.d);
}

/// A value x seeded with unit tangents at the levels listed in `active`
/// (bit j set means level j, innermost first, carries tangent 1).
template <int Order>
NestedDual<Order> seed_dual(double x, unsigned active) {
  if constexpr (Order == 0) {
    return x;
  } else {
    using Inner = NestedDual<Order - 1>;
    const bool on = (active >> (Order - 1)) & 1U;
    const Inner value = seed_dual<Order - 1>(x, active);
    const Inner tangent = on ? Inner(1.0) : Inner(0.0);
    return {value, tangent};
  }
}

}  // namespace scorelab

namespace Eigen {

template <typename T>
struct NumTraits<scorelab::Dual<T>> : NumTraits<double> {
  using Real = scorelab::Dual<T>;
  using NonInteger = scorelab::Dual<T>;
  using Nested = scorelab::Dual<T>;
  using Literal = scorelab::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost + NumTraits<T>::AddCost
  };
};

}  // namespace Eigen
