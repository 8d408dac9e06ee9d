#pragma once

// Forward-mode automatic differentiation with fixed-width dual numbers.
//
// Dual<T, N> carries a value and N directional derivatives. T may itself be a
// Dual, so Dual<Dual<double, N>, M> yields mixed second derivatives and a
// third nesting level yields third derivatives. All laminate and constitutive
// kernels in this library are templated on the scalar type so that Jacobians
// and Hessians come out of the same code path that computes the values.

#include <array>
#include <cmath>
#include <concepts>
#include <type_traits>

namespace vdmn::ad {

template <class T, int N>
struct Dual;

template <class X>
struct is_dual : std::false_type {};
template <class T, int N>
struct is_dual<Dual<T, N>> : std::true_type {};
template <class X>
inline constexpr bool is_dual_v = is_dual<X>::value;

template <class T, int N>
struct Dual {
  static_assert(N > 0);
  using value_type = T;
  static constexpr int size = N;

  T v{};
  std::array<T, N> d{};

  constexpr Dual() = default;
  constexpr Dual(const T& value) : v(value) {}  // NOLINT(google-explicit-constructor)
  template <class U>
    requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)
  constexpr Dual(U value) : v(static_cast<double>(value)) {}  // NOLINT(google-explicit-constructor)

  /// A variable with unit derivative in direction k.
  static constexpr Dual variable(const T& value, int k) {
    Dual r(value);
    r.d[k] = T(1.0);
    return r;
  }

  constexpr Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const T inv = T(1.0) / o.v;
    v *= inv;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * o.d[i]) * inv;
    return *this;
  }
  constexpr Dual& operator+=(const T& s) {
    v += s;
    return *this;
  }
  constexpr Dual& operator-=(const T& s) {
    v -= s;
    return *this;
  }
  constexpr Dual& operator*=(const T& s) {
    v *= s;
    for (auto& x : d) x *= s;
    return *this;
  }
  constexpr Dual& operator/=(const T& s) {
    const T inv = T(1.0) / s;
    return *this *= inv;
  }
};

// Recursive access to the innermost double.
constexpr double primal(double x) { return x; }
template <class T, int N>
constexpr double primal(const Dual<T, N>& x) {
  return primal(x.v);
}

template <class T, int N>
constexpr Dual<T, N> operator-(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = -a.v;
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}

#define VDMN_DUAL_BINARY(OP)                                                          \
  template <class T, int N>                                                           \
  constexpr Dual<T, N> operator OP(Dual<T, N> a, const Dual<T, N>& b) {               \
    a OP## = b;                                                                       \
    return a;                                                                         \
  }                                                                                   \
  template <class T, int N>                                                           \
  constexpr Dual<T, N> operator OP(Dual<T, N> a, const T& b) {                        \
    a OP## = b;                                                                       \
    return a;                                                                         \
  }                                                                                   \
  template <class T, int N, class U>                                                  \
    requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)                        \
  constexpr Dual<T, N> operator OP(Dual<T, N> a, U b) {                               \
    a OP## = T(static_cast<double>(b));                                               \
    return a;                                                                         \
  }

VDMN_DUAL_BINARY(+)
VDMN_DUAL_BINARY(-)
VDMN_DUAL_BINARY(*)
VDMN_DUAL_BINARY(/)
#undef VDMN_DUAL_BINARY

template <class T, int N>
constexpr Dual<T, N> operator+(const T& a, Dual<T, N> b) {
  b += a;
  return b;
}
template <class T, int N, class U>
  requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)
constexpr Dual<T, N> operator+(U a, Dual<T, N> b) {
  b += T(static_cast<double>(a));
  return b;
}
template <class T, int N>
constexpr Dual<T, N> operator-(const T& a, const Dual<T, N>& b) {
  Dual<T, N> r = -b;
  r.v += a;
  return r;
}
template <class T, int N, class U>
  requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)
constexpr Dual<T, N> operator-(U a, const Dual<T, N>& b) {
  return T(static_cast<double>(a)) - b;
}
template <class T, int N>
constexpr Dual<T, N> operator*(const T& a, Dual<T, N> b) {
  b *= a;
  return b;
}
template <class T, int N, class U>
  requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)
constexpr Dual<T, N> operator*(U a, Dual<T, N> b) {
  b *= T(static_cast<double>(a));
  return b;
}
template <class T, int N>
constexpr Dual<T, N> operator/(const T& a, const Dual<T, N>& b) {
  return Dual<T, N>(a) / b;
}
template <class T, int N, class U>
  requires(std::is_arithmetic_v<U> && !std::is_same_v<U, T>)
constexpr Dual<T, N> operator/(U a, const Dual<T, N>& b) {
  return Dual<T, N>(T(static_cast<double>(a))) / b;
}

// Comparisons look only at the innermost value; they exist for branching.
template <class T, int N>
constexpr bool operator<(const Dual<T, N>& a, const Dual<T, N>& b) {
  return primal(a) < primal(b);
}
template <class T, int N>
constexpr bool operator>(const Dual<T, N>& a, const Dual<T, N>& b) {
  return primal(a) > primal(b);
}

// Chain rule helper: f(a) with f'(a) = df.
template <class T, int N>
constexpr Dual<T, N> chain(const Dual<T, N>& a, const T& fa, const T& dfa) {
  Dual<T, N> r(fa);
  for (int i = 0; i < N; ++i) r.d[i] = dfa * a.d[i];
  return r;
}

template <class T, int N>
Dual<T, N> sin(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  return chain(a, T(sin(a.v)), T(cos(a.v)));
}
template <class T, int N>
Dual<T, N> cos(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  return chain(a, T(cos(a.v)), T(-sin(a.v)));
}
template <class T, int N>
Dual<T, N> exp(const Dual<T, N>& a) {
  using std::exp;
  const T e = exp(a.v);
  return chain(a, e, e);
}
template <class T, int N>
Dual<T, N> log(const Dual<T, N>& a) {
  using std::log;
  return chain(a, T(log(a.v)), T(T(1.0) / a.v));
}
template <class T, int N>
Dual<T, N> log1p(const Dual<T, N>& a) {
  using std::log1p;
  return chain(a, T(log1p(a.v)), T(T(1.0) / (T(1.0) + a.v)));
}
template <class T, int N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  return chain(a, s, T(T(0.5) / s));
}
template <class T, int N>
Dual<T, N> pow(const Dual<T, N>& a, double p) {
  using std::pow;
  return chain(a, T(pow(a.v, p)), T(p * pow(a.v, p - 1.0)));
}
template <class T, int N>
Dual<T, N> abs(const Dual<T, N>& a) {
  return primal(a) < 0.0 ? -a : a;
}

}  // namespace vdmn::ad

namespace vdmn {
using ad::Dual;
using ad::primal;
}  // namespace vdmn
