#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

using namespace vdmn;

namespace {
Stiffness diag3(double a, double b, double c) {
  Stiffness s;
  s.c = {a, b, c, 0.0, 0.0, 0.0};
  return s;
}
}  // namespace

TEST(LogMap, KnownValues) {
  std::mt19937_64 rng(1);
  const Stiffness a = vdmn::testing::random_spd(rng);
  EXPECT_LT(log_map(a, a).norm(), 1e-12);
  const Mat3 l = log_map(identity_stiffness(), diag3(std::exp(1.0), 1.0, 1.0));
  Mat3 expect = Mat3::Zero();
  expect(0, 0) = 1.0;
  EXPECT_LT((l - expect).norm(), 1e-14);
  const Stiffness e = exp_map(identity_stiffness(), expect);
  EXPECT_LT(vdmn::testing::rel_diff(e, diag3(std::exp(1.0), 1.0, 1.0)), 1e-14);
  EXPECT_LT(vdmn::testing::rel_diff(exp_map(a, Mat3::Zero()), a), 1e-14);
}

TEST(LogMap, RoundTripAndAffineInvariance) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const Stiffness a = vdmn::testing::random_spd(rng), b = vdmn::testing::random_spd(rng);
    const Mat3 v = log_map(a, b);
    EXPECT_LT((v - v.transpose()).norm(), 1e-14 * (1.0 + v.norm()));
    EXPECT_LT(vdmn::testing::rel_diff(exp_map(a, v), b), 1e-10);
    EXPECT_LT((log_map(a, exp_map(a, v)) - v).norm(), 1e-10 * (1.0 + v.norm()));
    const double s = 3.7;
    EXPECT_LT((log_map(a * s, b * s) - s * v).norm(), 1e-10 * s * (1.0 + v.norm()));
  }
}

TEST(LogMap, NonPositiveDefiniteRaisesWithEigenvalue) {
  const Stiffness bad = diag3(1.0, -0.5, 1.0);
  try {
    log_map(bad, identity_stiffness());
    FAIL();
  } catch (const GeometryError& e) {
    EXPECT_NEAR(e.eigenvalue(), -0.5, 1e-14);
  }
  EXPECT_THROW(log_map(identity_stiffness(), bad), GeometryError);
  EXPECT_THROW(exp_map(bad, Mat3::Zero()), GeometryError);
}

TEST(LogMap, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Stiffness mu = vdmn::testing::random_spd(rng), b = vdmn::testing::random_spd(rng);
    const Mat6 jac = log_map_jacobian_base(mu, b);
    for (int q = 0; q < 6; ++q) {
      const double h = 1e-6;
      Stiffness p = mu, m = mu;
      p.c[q] += h;
      m.c[q] -= h;
      const Vec6 fd = (sym_to_vec(log_map(p, b)) - sym_to_vec(log_map(m, b))) / (2 * h);
      EXPECT_LT((fd - jac.col(q)).norm(), 1e-6 * (1.0 + fd.norm()));
    }
  }
  // repeated eigenvalues exercise the divided-difference limits
  const Mat6 jac = log_map_jacobian_base(identity_stiffness(), identity_stiffness());
  EXPECT_LT((jac + Mat6::Identity()).norm(), 1e-12);
}

TEST(TangentBasis, ZeroKroneckerAndRoundTrip) {
  Tensor4 z{};
  EXPECT_TRUE(cov_to_tangent_basis(z).isZero(0.0));
  Tensor4 k{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          k[t4(i, j, a, b)] = 0.5 * ((i == a && j == b ? 1.0 : 0.0) + (i == b && j == a ? 1.0 : 0.0));
  const Mat6 m = cov_to_tangent_basis(k);
  Vec6 expect_diag;
  expect_diag << 1, 1, 1, 0.5, 0.5, 0.5;
  EXPECT_LT((m - Mat6(expect_diag.asDiagonal())).norm(), 1e-15);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat6 r;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) r(i, j) = n(rng);
  const Mat6 sym = r * r.transpose();
  const Tensor4 s = tangent_basis_to_cov(sym);
  EXPECT_LT((cov_to_tangent_basis(s) - sym).norm(), 1e-14);
  // quadratic form: off-diagonal tensor entries of V carry half the coordinate
  const Vec6 v = Vec6::Random();
  Mat3 vm = vec_to_sym(v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) vm(i, j) *= 0.5;
  double contraction = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) contraction += s[t4(i, j, a, b)] * vm(i, j) * vm(a, b);
  EXPECT_NEAR(v.dot(sym * v), contraction, 1e-12 * (1.0 + std::abs(contraction)));

  Tensor4 bad = s;
  bad[t4(0, 1, 0, 0)] += 1e-3;
  EXPECT_THROW(cov_to_tangent_basis(bad), DegenerateInputError);
}

TEST(GaussianNll, ZeroResidual) {
  GaussianStiffness g;
  g.mean = isotropic_stiffness({1.0, 0.3});
  const double s2 = 0.01;
  g.cov = s2 * Mat6::Identity();
  const double expect = 0.5 * (6 * std::log(2 * std::numbers::pi) + 6 * std::log(s2));
  // the jitter shifts log det by 6 log(1 + 1e-10)
  EXPECT_NEAR(gaussian_nll(g, g.mean, NllMode::riemannian), expect, 1e-8);
  EXPECT_NEAR(gaussian_nll(g, g.mean, NllMode::euclidean), expect, 1e-8);
}

TEST(GaussianNll, DirectDensityOracle) {
  GaussianStiffness g;
  g.mean = isotropic_stiffness({1.0, 0.3});
  Vec6 d;
  d << 1, 2, 3, 4, 5, 6;
  g.cov = d.asDiagonal();
  Stiffness obs = g.mean;
  obs.c[0] += 1.0;
  // independent evaluation: product of univariate normal densities
  double logpdf = 0.0;
  const double jit = 1e-10 * d.sum() / 6.0;
  for (int i = 0; i < 6; ++i) {
    const double var = d(i) + jit;
    const double x = i == 0 ? 1.0 : 0.0;
    logpdf += -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * x * x / var;
  }
  EXPECT_NEAR(gaussian_nll(g, obs, NllMode::euclidean), -logpdf, 1e-12);
}

TEST(GaussianNll, ModesAgreeToFirstOrder) {
  std::mt19937_64 rng(5);
  GaussianStiffness g;
  g.mean = vdmn::testing::random_spd(rng);
  g.cov = 1e-2 * Mat6::Identity();
  const Vec6 dir = Vec6::Random().normalized();
  double prev = 0.0;
  for (double eps : {1e-2, 5e-3, 2.5e-3}) {
    Stiffness obs = from_vec(to_vec(g.mean) + eps * dir);
    const double diff = (nll_residual(g.mean, obs, NllMode::riemannian) - nll_residual(g.mean, obs, NllMode::euclidean)).norm();
    if (prev > 0.0) EXPECT_NEAR(prev / diff, 4.0, 0.2);
    prev = diff;
  }
}

TEST(GaussianNll, MinimizedAtMean) {
  std::mt19937_64 rng(6);
  GaussianStiffness g;
  g.mean = vdmn::testing::random_spd(rng);
  Mat6 r = Mat6::Random();
  g.cov = r * r.transpose() * 1e-2 + 1e-3 * Mat6::Identity();
  const double at = gaussian_nll(g, g.mean, NllMode::riemannian);
  for (int k = 0; k < 12; ++k) {
    const Vec6 dir = Vec6::Random().normalized();
    const Stiffness obs = exp_map(g.mean, vec_to_sym(1e-3 * dir));
    EXPECT_GT(gaussian_nll(g, obs, NllMode::riemannian), at);
  }
}

TEST(GaussianNll, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (NllMode mode : {NllMode::riemannian, NllMode::euclidean}) {
    GaussianStiffness g;
    g.mean = vdmn::testing::random_spd(rng);
    Mat6 r = Mat6::Random();
    g.cov = r * r.transpose() * 1e-2 + 1e-2 * Mat6::Identity();
    const Stiffness obs = exp_map(g.mean, vec_to_sym(0.05 * Vec6::Random()));
    const NllGrad ng = gaussian_nll_grad(g, obs, mode, true);
    for (int q = 0; q < 6; ++q) {
      const double h = 1e-6;
      GaussianStiffness p = g, m = g;
      p.mean.c[q] += h;
      m.mean.c[q] -= h;
      const double fd = (gaussian_nll(p, obs, mode) - gaussian_nll(m, obs, mode)) / (2 * h);
      EXPECT_NEAR(ng.d_mean(q), fd, 1e-5 * (1.0 + std::abs(fd)));
    }
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const double h = 1e-7;
        GaussianStiffness p = g, m = g;
        p.cov(i, j) += h;
        m.cov(i, j) -= h;
        // cov is symmetrized internally, so a one-sided entry perturbation sees half of the symmetric gradient
        const double fd = (gaussian_nll(p, obs, mode) - gaussian_nll(m, obs, mode)) / (2 * h);
        EXPECT_NEAR(0.5 * (ng.d_cov(i, j) + ng.d_cov(j, i)), fd, 1e-5 * (1.0 + std::abs(fd)));
      }
  }
}

TEST(GaussianNll, SingularCovarianceRaises) {
  GaussianStiffness g;
  g.mean = identity_stiffness();
  g.cov = Mat6::Zero();
  EXPECT_THROW(gaussian_nll(g, g.mean, NllMode::euclidean), ConditioningError);
}
