#pragma once

// 2D plane-strain stiffness in Voigt notation. Component order is
// (xx, yy, xy) with engineering shear, so C33 is the shear modulus.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "vdmn/dual.hpp"
#include "vdmn/errors.hpp"

namespace vdmn {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Distinct entries of a symmetric 3x3 matrix, ordered (11, 22, 33, 12, 13, 23).
inline constexpr std::array<std::pair<int, int>, 6> kSymPairs{{{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}}};
inline constexpr int kSymIndex[3][3] = {{0, 3, 4}, {3, 1, 5}, {4, 5, 2}};
inline constexpr std::array<const char*, 6> kSymNames{"C11", "C22", "C33", "C12", "C13", "C23"};

/// Symmetric 3x3 matrix stored by its six distinct entries.
template <class S>
struct Sym3 {
  std::array<S, 6> c{};

  S& operator()(int i, int j) { return c[kSymIndex[i][j]]; }
  const S& operator()(int i, int j) const { return c[kSymIndex[i][j]]; }
  S& operator[](int p) { return c[p]; }
  const S& operator[](int p) const { return c[p]; }

  Sym3& operator+=(const Sym3& o) {
    for (int p = 0; p < 6; ++p) c[p] += o.c[p];
    return *this;
  }
  Sym3& operator-=(const Sym3& o) {
    for (int p = 0; p < 6; ++p) c[p] -= o.c[p];
    return *this;
  }
  Sym3& operator*=(const S& s) {
    for (auto& x : c) x *= s;
    return *this;
  }
  friend Sym3 operator+(Sym3 a, const Sym3& b) { return a += b; }
  friend Sym3 operator-(Sym3 a, const Sym3& b) { return a -= b; }
  friend Sym3 operator*(Sym3 a, const S& s) { return a *= s; }
  friend Sym3 operator*(const S& s, Sym3 a) { return a *= s; }
  bool operator==(const Sym3&) const = default;
};

/// Plane-strain stiffness; the working currency of the laminate code.
using Stiffness = Sym3<double>;

template <class S, class U>
Sym3<S> cast_sym(const Sym3<U>& a) {
  Sym3<S> r;
  for (int p = 0; p < 6; ++p) r.c[p] = S(a.c[p]);
  return r;
}

template <class S>
Sym3<double> primal(const Sym3<S>& a) {
  Sym3<double> r;
  for (int p = 0; p < 6; ++p) r.c[p] = vdmn::primal(a.c[p]);
  return r;
}

inline Mat3 to_matrix(const Stiffness& a) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = a(i, j);
  return m;
}

inline Vec6 to_vec(const Stiffness& a) {
  Vec6 v;
  for (int p = 0; p < 6; ++p) v(p) = a.c[p];
  return v;
}

inline Stiffness from_vec(const Vec6& v) {
  Stiffness a;
  for (int p = 0; p < 6; ++p) a.c[p] = v(p);
  return a;
}

/// Takes the distinct entries of a symmetric matrix; rejects asymmetry beyond 1e-12 relative.
inline Stiffness from_matrix(const Mat3& m) {
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw DegenerateInputError("stiffness matrix is not symmetric");
  Stiffness a;
  for (int p = 0; p < 6; ++p) {
    const auto [i, j] = kSymPairs[p];
    a.c[p] = 0.5 * (m(i, j) + m(j, i));
  }
  return a;
}

inline Stiffness identity_stiffness() {
  Stiffness a;
  a.c = {1, 1, 1, 0, 0, 0};
  return a;
}

/// Eigenvalues in ascending order.
inline Vec3 eigenvalues(const Stiffness& a) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(to_matrix(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// PSD with smallest eigenvalue >= -1e-10 x largest.
inline bool is_valid_stiffness(const Stiffness& a) {
  for (double x : a.c)
    if (!std::isfinite(x)) return false;
  const Vec3 ev = eigenvalues(a);
  return ev(2) >= 0.0 && ev(0) >= -1e-10 * std::max(ev(2), 0.0);
}

inline void require_valid_stiffness(const Stiffness& a, const std::string& what) {
  if (!is_valid_stiffness(a)) throw DegenerateInputError(what + ": not a valid (PSD) stiffness");
}

struct IsoElastic {
  double youngs_modulus = 1.0;
  double poisson_ratio = 0.3;
};

/// Plane-strain isotropic stiffness. Templated so derivatives w.r.t. E can flow through.
template <class S>
Sym3<S> isotropic_stiffness(const S& E, double nu) {
  if (!(nu > -1.0 && nu < 0.5)) throw ConfigError("Poisson ratio must lie in (-1, 0.5)");
  if (std::abs(nu - 0.5) < 1e-9) throw ConfigError("incompressible Poisson ratio");
  if (!(primal(E) > 0.0)) throw ConfigError("Young's modulus must be positive");
  const double denom = (1.0 + nu) * (1.0 - 2.0 * nu);
  Sym3<S> c;
  c(0, 0) = E * ((1.0 - nu) / denom);
  c(1, 1) = c(0, 0);
  c(0, 1) = E * (nu / denom);
  c(2, 2) = E * (0.5 / (1.0 + nu));
  c(0, 2) = S(0.0);
  c(1, 2) = S(0.0);
  return c;
}

inline Stiffness isotropic_stiffness(const IsoElastic& m) {
  return isotropic_stiffness<double>(m.youngs_modulus, m.poisson_ratio);
}

}  // namespace vdmn
