#pragma once

// Geometry of the positive-definite cone for 3x3 stiffness matrices: affine
// invariant log/exp maps, tangent vectorization, and the Gaussian likelihood
// used as the training loss.

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "vdmn/voigt.hpp"

namespace vdmn {

/// Mean stiffness plus 6x6 covariance over distinct-entry coordinates.
struct GaussianStiffness {
  Stiffness mean;
  Mat6 cov = Mat6::Zero();
};

enum class NllMode { riemannian, euclidean };

inline const char* to_string(NllMode m) { return m == NllMode::riemannian ? "riemannian" : "euclidean"; }

inline NllMode parse_nll_mode(const std::string& s) {
  if (s == "riemannian") return NllMode::riemannian;
  if (s == "euclidean") return NllMode::euclidean;
  throw ConfigError("unknown loss mode '" + s + "'");
}

/// Distinct entries (11, 22, 33, 12, 13, 23) of a symmetric matrix.
inline Vec6 sym_to_vec(const Mat3& m) {
  Vec6 v;
  for (int p = 0; p < 6; ++p) v(p) = m(kSymPairs[p].first, kSymPairs[p].second);
  return v;
}

inline Mat3 vec_to_sym(const Vec6& v) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = v(kSymIndex[i][j]);
  return m;
}

namespace detail {

struct SymEig {
  Vec3 lam;
  Mat3 u;
};

inline SymEig eig(const Mat3& a) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (a + a.transpose()));
  return {es.eigenvalues(), es.eigenvectors()};
}

template <class F>
Mat3 apply(const SymEig& e, F f) {
  Vec3 fl;
  for (int i = 0; i < 3; ++i) fl(i) = f(e.lam(i));
  return e.u * fl.asDiagonal() * e.u.transpose();
}

/// Directional derivative of a spectral function: U (Gamma o (U^T E U)) U^T,
/// with Gamma the first divided differences of f.
template <class DD>
Mat3 frechet(const SymEig& e, const Mat3& dir, DD divided) {
  Mat3 g = e.u.transpose() * dir * e.u;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g(i, j) *= divided(e.lam(i), e.lam(j));
  return e.u * g * e.u.transpose();
}

inline double dd_sqrt(double a, double b) { return 1.0 / (std::sqrt(a) + std::sqrt(b)); }
inline double dd_invsqrt(double a, double b) {
  const double sa = std::sqrt(a), sb = std::sqrt(b);
  return -1.0 / (sa * sb * (sa + sb));
}
inline double dd_log(double a, double b) {
  const double x = (b - a) / a;
  if (std::abs(x) < 1e-6) return (1.0 - x / 2.0 + x * x / 3.0 - x * x * x / 4.0) / a;
  return std::log1p(x) / (b - a);
}

inline void require_pd(const SymEig& e, const char* what) {
  const double lmax = e.lam(2);
  if (!(e.lam(0) > 1e-12 * std::max(lmax, 0.0)) || !(lmax > 0.0))
    throw GeometryError(std::string(what) + " is not positive definite", e.lam(0));
}

}  // namespace detail

/// log_A(B) = A^{1/2} log(A^{-1/2} B A^{-1/2}) A^{1/2}.
inline Mat3 log_map(const Stiffness& a, const Stiffness& b) {
  const auto ea = detail::eig(to_matrix(a));
  detail::require_pd(ea, "log_map base point");
  const auto eb = detail::eig(to_matrix(b));
  detail::require_pd(eb, "log_map argument");
  const Mat3 r = detail::apply(ea, [](double x) { return std::sqrt(x); });
  const Mat3 w = detail::apply(ea, [](double x) { return 1.0 / std::sqrt(x); });
  const auto ex = detail::eig(w * to_matrix(b) * w);
  const Mat3 l = detail::apply(ex, [](double x) { return std::log(x); });
  const Mat3 out = r * l * r;
  return 0.5 * (out + out.transpose());
}

inline Stiffness exp_map(const Stiffness& a, const Mat3& v) {
  const auto ea = detail::eig(to_matrix(a));
  detail::require_pd(ea, "exp_map base point");
  const Mat3 r = detail::apply(ea, [](double x) { return std::sqrt(x); });
  const Mat3 w = detail::apply(ea, [](double x) { return 1.0 / std::sqrt(x); });
  const auto ex = detail::eig(w * v * w);
  const Mat3 out = r * detail::apply(ex, [](double x) { return std::exp(x); }) * r;
  return from_matrix(0.5 * (out + out.transpose()));
}

/// Jacobian of vec(log_mu(b)) w.r.t. the distinct entries of mu.
inline Mat6 log_map_jacobian_base(const Stiffness& mu, const Stiffness& b) {
  const auto ea = detail::eig(to_matrix(mu));
  detail::require_pd(ea, "log_map base point");
  const Mat3 bm = to_matrix(b);
  const Mat3 r = detail::apply(ea, [](double x) { return std::sqrt(x); });
  const Mat3 w = detail::apply(ea, [](double x) { return 1.0 / std::sqrt(x); });
  const auto ex = detail::eig(w * bm * w);
  detail::require_pd(ex, "whitened log_map argument");
  const Mat3 l = detail::apply(ex, [](double x) { return std::log(x); });
  Mat6 jac;
  for (int q = 0; q < 6; ++q) {
    Mat3 e = Mat3::Zero();
    const auto [i, j] = kSymPairs[q];
    e(i, j) = 1.0;
    e(j, i) = 1.0;
    const Mat3 dr = detail::frechet(ea, e, detail::dd_sqrt);
    const Mat3 dw = detail::frechet(ea, e, detail::dd_invsqrt);
    const Mat3 dx = dw * bm * w + w * bm * dw;
    const Mat3 dl = detail::frechet(ex, dx, detail::dd_log);
    const Mat3 dv = dr * l * r + r * dl * r + r * l * dr;
    jac.col(q) = sym_to_vec(0.5 * (dv + dv.transpose()));
  }
  return jac;
}

/// Fourth-order tensor with 81 entries, index ((i*3+j)*3+k)*3+l.
using Tensor4 = std::array<double, 81>;
inline constexpr int t4(int i, int j, int k, int l) { return ((i * 3 + j) * 3 + k) * 3 + l; }

/// Reshapes a tensor with minor and major symmetries into distinct-entry coordinates.
inline Mat6 cov_to_tangent_basis(const Tensor4& s) {
  double scale = 1.0;
  for (double x : s) scale = std::max(scale, std::abs(x));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          const double x = s[t4(i, j, k, l)];
          if (std::abs(x - s[t4(j, i, k, l)]) > 1e-9 * scale || std::abs(x - s[t4(i, j, l, k)]) > 1e-9 * scale ||
              std::abs(x - s[t4(k, l, i, j)]) > 1e-9 * scale)
            throw DegenerateInputError("covariance tensor lacks minor/major symmetry");
        }
  Mat6 m;
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q)
      m(p, q) = s[t4(kSymPairs[p].first, kSymPairs[p].second, kSymPairs[q].first, kSymPairs[q].second)];
  return 0.5 * (m + m.transpose());
}

inline Tensor4 tangent_basis_to_cov(const Mat6& m) {
  Tensor4 s{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) s[t4(i, j, k, l)] = m(kSymIndex[i][j], kSymIndex[k][l]);
  return s;
}

inline constexpr double kCovJitter = 1e-10;

/// Residual vector between observation and mean in the chosen geometry.
inline Vec6 nll_residual(const Stiffness& mean, const Stiffness& obs, NllMode mode) {
  if (mode == NllMode::riemannian) return sym_to_vec(log_map(mean, obs));
  return to_vec(obs) - to_vec(mean);
}

struct NllGrad {
  double value = 0.0;
  Vec6 d_mean = Vec6::Zero();
  Mat6 d_cov = Mat6::Zero();
};

/// Negative log density and (optionally) its gradient w.r.t. mean and covariance.
inline NllGrad gaussian_nll_grad(const GaussianStiffness& g, const Stiffness& obs, NllMode mode, bool with_grad) {
  const Vec6 v = nll_residual(g.mean, obs, mode);
  const Mat6 sym = 0.5 * (g.cov + g.cov.transpose());
  const double jit = kCovJitter * sym.trace() / 6.0;
  const Mat6 sj = sym + jit * Mat6::Identity();
  Eigen::LLT<Mat6> llt(sj);
  if (llt.info() != Eigen::Success || !sj.allFinite())
    throw ConditioningError("predicted covariance is not invertible after jitter");
  double logdet = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double d = llt.matrixLLT()(i, i);
    if (!(d > 0.0)) throw ConditioningError("predicted covariance is not invertible after jitter");
    logdet += 2.0 * std::log(d);
  }
  const Vec6 alpha = llt.solve(v);
  NllGrad out;
  out.value = 0.5 * (6.0 * std::log(2.0 * std::numbers::pi) + logdet + v.dot(alpha));
  if (!with_grad) return out;
  const Mat6 inv = llt.solve(Mat6::Identity());
  Mat6 dsj = 0.5 * (inv - alpha * alpha.transpose());
  out.d_cov = dsj + (kCovJitter / 6.0) * dsj.trace() * Mat6::Identity();
  if (mode == NllMode::riemannian)
    out.d_mean = log_map_jacobian_base(g.mean, obs).transpose() * alpha;
  else
    out.d_mean = -alpha;
  return out;
}

inline double gaussian_nll(const GaussianStiffness& g, const Stiffness& obs, NllMode mode) {
  return gaussian_nll_grad(g, obs, mode, false).value;
}

}  // namespace vdmn
