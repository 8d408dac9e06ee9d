#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace vdmn;

namespace {

// Random predicted Gaussians with diagonal-dominant covariance and one draw from each.
void self_consistent(std::mt19937_64& rng, int n, std::vector<GaussianStiffness>& pred, std::vector<Stiffness>& obs) {
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  pred.clear();
  obs.clear();
  for (int l = 0; l < n; ++l) {
    GaussianStiffness g;
    g.mean = vdmn::testing::random_spd(rng, 10.0);
    Mat6 a = Mat6::Random() * 0.01;
    g.cov = a * a.transpose();
    for (int p = 0; p < 6; ++p) g.cov(p, p) += 1e-3 * u(rng);
    Vec6 e;
    for (int p = 0; p < 6; ++p) e(p) = nrm(rng);
    const Mat6 l6 = g.cov.llt().matrixL();
    obs.push_back(from_vec(to_vec(g.mean) + l6 * e));
    pred.push_back(g);
  }
}

std::vector<double> unit_normal(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::vector<double> z(n);
  for (auto& x : z) x = nrm(rng);
  return z;
}

double value_at(const MarginalCalibration& m, double x) {
  const auto it = std::lower_bound(m.rank.begin(), m.rank.end(), x - 1e-12);
  return m.ecdf[it - m.rank.begin()];
}

}  // namespace

TEST(Binomial, TableMatchesDirectCounts) {
  const auto t = detail::binomial_cdf_table(4, 0.5);
  const double expect[] = {1.0 / 16, 5.0 / 16, 11.0 / 16, 15.0 / 16, 1.0};
  for (int k = 0; k <= 4; ++k) EXPECT_NEAR(t[k], expect[k], 1e-15);
  // n = 3, x = 0.2: P(0) = 0.512, P(1) = 0.384, P(2) = 0.096
  const auto s = detail::binomial_cdf_table(3, 0.2);
  EXPECT_NEAR(s[0], 0.512, 1e-15);
  EXPECT_NEAR(s[1], 0.896, 1e-15);
  EXPECT_NEAR(s[2], 0.992, 1e-15);
  EXPECT_NEAR(detail::tail_prob(s, 0), 1.0, 1e-15);
  EXPECT_NEAR(detail::tail_prob(s, 3), 2 * 0.008, 1e-15);
}

TEST(Calibration, SimultaneousLevelIsDeterministicAndStricter) {
  const double g1 = simultaneous_gamma(100, 1000, 0.95, 3);
  EXPECT_EQ(g1, simultaneous_gamma(100, 1000, 0.95, 3));
  EXPECT_LT(g1, 0.05);
  EXPECT_GT(g1, 1e-4);
}

TEST(Calibration, FalseRejectionRateNearNominal) {
  // fresh uniform datasets, independent of the simulation stream that set gamma
  const int n = 80;
  const double gamma = simultaneous_gamma(n, 1000, 0.95, 1);
  std::mt19937_64 rng(99);
  int rejected = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t)
    if (!calibrate_scores(unit_normal(rng, n), gamma).pass) ++rejected;
  EXPECT_GT(rejected, 20);
  EXPECT_LT(rejected, 90);
}

TEST(Calibration, SelfConsistentDataPasses) {
  std::mt19937_64 rng(5);
  int passes = 0, total = 0;
  std::vector<GaussianStiffness> pred;
  std::vector<Stiffness> obs;
  for (int trial = 0; trial < 100; ++trial) {
    self_consistent(rng, 60, pred, obs);
    const auto rep = calibration_test(pred, obs, 1000, default_marginals(), 7);
    for (const auto& m : rep.marginals) {
      passes += m.pass;
      ++total;
    }
  }
  EXPECT_GE(passes, 0.9 * total);
}

TEST(Calibration, ObservedAtMeansFails) {
  std::mt19937_64 rng(6);
  std::vector<GaussianStiffness> pred;
  std::vector<Stiffness> obs;
  self_consistent(rng, 50, pred, obs);
  for (std::size_t l = 0; l < obs.size(); ++l) obs[l] = pred[l].mean;
  const auto rep = calibration_test(pred, obs, 500);
  EXPECT_FALSE(rep.pass);
  for (const auto& m : rep.marginals) {
    EXPECT_FALSE(m.pass);
    // everything sits at u = 0.5: a step from 0 to 1
    EXPECT_EQ(value_at(m, 0.4), 0.0);
    EXPECT_EQ(value_at(m, 0.6), 1.0);
  }
}

TEST(Calibration, UnitNormalScoresHugDiagonal) {
  std::mt19937_64 rng(8);
  const int n = 1000;
  const auto m = calibrate_scores(unit_normal(rng, n), simultaneous_gamma(n, 200, 0.95, 2));
  double dmax = 0.0;
  for (std::size_t i = 0; i < m.rank.size(); ++i) dmax = std::max(dmax, std::abs(m.ecdf[i] - m.rank[i]));
  // Kolmogorov 99% critical value 1.63 / sqrt(n)
  EXPECT_LT(dmax, 1.63 / std::sqrt(n));
  EXPECT_TRUE(m.pass);
}

TEST(Calibration, CurveAndBandInvariants) {
  std::mt19937_64 rng(9);
  const int n = 200;
  auto z = unit_normal(rng, n);
  for (auto& x : z) x = 1.3 * x + 0.2;
  const auto m = calibrate_scores(z, simultaneous_gamma(n, 300, 0.95, 4));
  ASSERT_EQ(m.rank.size(), static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < m.rank.size(); ++i) {
    EXPECT_GE(m.ecdf[i], 0.0);
    EXPECT_LE(m.ecdf[i], 1.0);
    EXPECT_LE(m.lower[i], m.rank[i] + 1e-12);
    EXPECT_GE(m.upper[i], m.rank[i] - 1e-12);
    if (i > 0) {
      EXPECT_GE(m.rank[i], m.rank[i - 1]);
      EXPECT_GE(m.ecdf[i], m.ecdf[i - 1]);
    }
  }
}

TEST(Calibration, MeanShiftBowsAndVarianceErrorsGiveSCurves) {
  std::mt19937_64 rng(10);
  const int n = 400;
  const auto base = unit_normal(rng, n);
  const double gamma = simultaneous_gamma(n, 300, 0.95, 5);
  auto transformed = [&](double scale, double shift) {
    std::vector<double> z(base);
    for (auto& x : z) x = scale * x + shift;
    return calibrate_scores(z, gamma);
  };
  // observations above the predicted mean: the whole curve bows below the diagonal
  const auto up = transformed(1.0, 0.8);
  EXPECT_FALSE(up.pass);
  for (double x : {0.1, 0.3, 0.5, 0.7, 0.9}) EXPECT_LT(value_at(up, x), x);
  const auto down = transformed(1.0, -0.8);
  EXPECT_FALSE(down.pass);
  for (double x : {0.1, 0.3, 0.5, 0.7, 0.9}) EXPECT_GT(value_at(down, x), x);
  // predicted variance too small: mass in the tails, curve above then below
  const auto wide = transformed(2.5, 0.0);
  EXPECT_FALSE(wide.pass);
  EXPECT_GT(value_at(wide, 0.2), 0.2);
  EXPECT_LT(value_at(wide, 0.8), 0.8);
  // predicted variance too large: the opposite S
  const auto narrow = transformed(0.4, 0.0);
  EXPECT_FALSE(narrow.pass);
  EXPECT_LT(value_at(narrow, 0.2), 0.2);
  EXPECT_GT(value_at(narrow, 0.8), 0.8);
}

TEST(Calibration, DegenerateVarianceSkipsMarginal) {
  std::mt19937_64 rng(11);
  std::vector<GaussianStiffness> pred;
  std::vector<Stiffness> obs;
  self_consistent(rng, 40, pred, obs);
  pred[3].cov(3, 3) = 0.0;
  log::quiet() = true;
  const auto rep = calibration_test(pred, obs, 300);
  log::quiet() = false;
  ASSERT_EQ(rep.marginals.size(), 4u);
  EXPECT_EQ(rep.marginals[1].name, "C12");
  EXPECT_TRUE(rep.marginals[1].skipped);
  EXPECT_FALSE(rep.marginals[0].skipped);
}

TEST(Calibration, InputValidation) {
  std::mt19937_64 rng(12);
  std::vector<GaussianStiffness> pred;
  std::vector<Stiffness> obs;
  self_consistent(rng, 19, pred, obs);
  EXPECT_THROW(calibration_test(pred, obs, 100), ConfigError);
  self_consistent(rng, 30, pred, obs);
  obs.pop_back();
  EXPECT_THROW(calibration_test(pred, obs, 100), ConfigError);
}
