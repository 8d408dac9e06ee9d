#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "test_support.hpp"

using namespace vdmn;

namespace {

// Kolmogorov statistic of a sample against U(lo, hi).
double ks_uniform(std::vector<double> x, double lo, double hi) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = (x[i] - lo) / (hi - lo);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

bool loewner_leq(const Mat3& a, const Mat3& b, double slack) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(b - a);
  return es.eigenvalues()(0) >= -slack * b.norm();
}

}  // namespace

TEST(Lhs, MidpointRatios) {
  std::array<double, kLhsDims> mid;
  mid.fill(0.5);
  const auto [c1, c2] = stiffness_pair(ratios_from_unit(mid));
  EXPECT_DOUBLE_EQ(c1(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(c1(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(c1(0, 1), 0.45);
  EXPECT_DOUBLE_EQ(c1(2, 2), 1.0);
  EXPECT_EQ(c1(0, 2), 0.0);
  EXPECT_EQ(c1(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(c2(0, 0), 1.0);
}

TEST(Lhs, StratifiedOnEveryAxis) {
  const int n = 97;
  const auto pts = latin_hypercube(n, 4);
  for (int d = 0; d < kLhsDims; ++d) {
    std::vector<int> seen(n, 0);
    for (const auto& p : pts) {
      ASSERT_GE(p[d], 0.0);
      ASSERT_LT(p[d], 1.0);
      ++seen[static_cast<int>(p[d] * n)];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Lhs, RatiosUniformAndMatricesPositiveDefinite) {
  const int n = 1655;
  const auto pairs = lhs_orthotropic(n, 17);
  ASSERT_EQ(pairs.size(), static_cast<std::size_t>(n));
  std::vector<std::vector<double>> r(7);
  for (const auto& [a, b] : pairs) {
    EXPECT_TRUE(is_valid_stiffness(a));
    EXPECT_TRUE(is_valid_stiffness(b));
    EXPECT_GT(eigenvalues(a).minCoeff(), 0.0);
    EXPECT_GT(eigenvalues(b).minCoeff(), 0.0);
    EXPECT_EQ(a(0, 0), 1.0);
    r[0].push_back(std::log(b(0, 0) / a(0, 0)));
    int k = 1;
    for (const Stiffness* c : {&a, &b}) {
      const double g = std::sqrt((*c)(0, 0) * (*c)(1, 1));
      r[k++].push_back(std::log((*c)(1, 1) / (*c)(0, 0)));
      r[k++].push_back((*c)(0, 1) / g);
      r[k++].push_back(std::log((*c)(2, 2) / g));
    }
  }
  const double crit = 1.63 / std::sqrt(n);  // p = 0.01
  EXPECT_LT(ks_uniform(r[0], -1, 1), crit);
  for (int ph = 0; ph < 2; ++ph) {
    EXPECT_LT(ks_uniform(r[1 + 3 * ph], -1, 1), crit);
    EXPECT_LT(ks_uniform(r[2 + 3 * ph], 0, 0.9), crit);
    EXPECT_LT(ks_uniform(r[3 + 3 * ph], -1, 1), crit);
  }
}

TEST(Lhs, SameSeedSameDesign) {
  const auto a = lhs_orthotropic(50, 3), b = lhs_orthotropic(50, 3), c = lhs_orthotropic(50, 4);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a[i].second.c, b[i].second.c);
  EXPECT_NE(a[0].second.c, c[0].second.c);
}

TEST(Ensemble, ZeroJitterGivesIdenticalMembers) {
  EnsembleConfig cfg;
  cfg.members = 5;
  cfg.angle_jitter = 0.0;
  cfg.weight_jitter = 0.0;
  const auto o = build_ensemble(cfg, 2);
  const auto c1 = isotropic_stiffness({1.0, 0.3}), c2 = isotropic_stiffness({3.0, 0.2});
  const Stiffness ref = o.homogenize(0, c1, c2);
  for (int m = 1; m < 5; ++m) EXPECT_EQ(o.homogenize(m, c1, c2).c, ref.c);
}

TEST(Ensemble, DefaultSpreadAndVolumeFractions) {
  const auto o = build_ensemble({}, 7);
  ASSERT_EQ(o.members.size(), 30u);
  const double vf0 = leaf_volume_fraction(o.base);
  for (const auto& m : o.members) {
    EXPECT_LE(std::abs(leaf_volume_fraction(m) - vf0), 0.05);
    EXPECT_EQ(m.depth, 5);
  }
  // contrast e between isotropic phases
  const auto c1 = isotropic_stiffness({1.0, 0.3}), c2 = isotropic_stiffness({std::exp(1.0), 0.3});
  double s = 0.0, s2 = 0.0;
  for (int m = 0; m < 30; ++m) {
    const double v = o.homogenize(m, c1, c2)(0, 0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / 30, sd = std::sqrt((s2 - 30 * mean * mean) / 29);
  EXPECT_GT(sd / mean, 1e-3);
  EXPECT_LT(sd / mean, 0.1);
}

TEST(Ensemble, RejectionFailureIsConfigError) {
  EnsembleConfig cfg;
  cfg.weight_jitter = 1.0;
  cfg.vf_tolerance = 1e-9;
  cfg.max_tries = 3;
  EXPECT_THROW(build_ensemble(cfg, 1), ConfigError);
  cfg = {};
  cfg.members = 1;
  EXPECT_THROW(build_ensemble(cfg, 1), ConfigError);
}

TEST(Dataset, SplitSizesAndDeterminism) {
  const auto o = build_ensemble({}, 11);
  const auto pairs = lhs_orthotropic(1655, 12);
  const auto d = generate_dataset(o, pairs, 13);
  EXPECT_EQ(d.train.size(), 1158u);
  EXPECT_EQ(d.val.size(), 248u);
  EXPECT_EQ(d.test.size(), 249u);
  std::ostringstream a, b;
  write_dataset(d, a);
  write_dataset(generate_dataset(o, pairs, 13), b);
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_dataset(generate_dataset(o, pairs, 14), c);
  EXPECT_NE(a.str(), c.str());
  // every member used, about n / M times
  std::map<int, int> counts;
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& t : d.get(s)) ++counts[t.member_id];
  EXPECT_EQ(counts.size(), 30u);
  for (const auto& [m, k] : counts) {
    EXPECT_GT(k, 25);
    EXPECT_LT(k, 95);
  }
}

TEST(Dataset, TripletsObeyVoigtReussBoundsAndRoundTrip) {
  const auto o = build_ensemble({}, 21);
  const auto d = generate_dataset(o, lhs_orthotropic(300, 22), 23);
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& t : d.get(s)) {
      EXPECT_EQ(t.scale, 1.0);
      const double f = leaf_volume_fraction(o.members[t.member_id]);
      const Mat3 a = to_matrix(t.c1), b = to_matrix(t.c2), h = to_matrix(t.ch);
      EXPECT_TRUE(loewner_leq(h, f * a + (1 - f) * b, 1e-9));
      EXPECT_TRUE(loewner_leq(h.inverse(), f * a.inverse() + (1 - f) * b.inverse(), 1e-9));
      EXPECT_LT(vdmn::testing::rel_diff(t.ch, tree_homogenize(o.members[t.member_id], t.c1, t.c2)), 1e-15);
    }
  std::stringstream ss;
  write_dataset(d, ss);
  const auto back = read_dataset(ss);
  ASSERT_EQ(back.size(), d.size());
  for (Split s : {Split::train, Split::val, Split::test})
    for (std::size_t i = 0; i < d.get(s).size(); ++i) {
      EXPECT_EQ(back.get(s)[i].ch.c, d.get(s)[i].ch.c);
      EXPECT_EQ(back.get(s)[i].member_id, d.get(s)[i].member_id);
    }
}

TEST(Dataset, EqualPhasesGiveInputBack) {
  const auto o = build_ensemble({}, 31);
  std::mt19937_64 rng(32);
  std::vector<std::pair<Stiffness, Stiffness>> pairs;
  for (int i = 0; i < 40; ++i) {
    Stiffness c = vdmn::testing::random_spd(rng);
    c = c * (1.0 / c(0, 0));
    pairs.push_back({c, c});
  }
  const auto d = generate_dataset(o, pairs, 33);
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& t : d.get(s)) EXPECT_LT(vdmn::testing::rel_diff(t.ch, t.c1), 1e-12);
}

TEST(Dataset, MemberAssignmentIndependentOfListLength) {
  // per-pair streams: extending the design does not change earlier assignments
  const auto o = build_ensemble({}, 41);
  const auto pairs = lhs_orthotropic(200, 42);
  const std::vector<std::pair<Stiffness, Stiffness>> head(pairs.begin(), pairs.begin() + 60);
  auto index = [](const Dataset& d) {
    std::map<double, int> m;
    for (Split s : {Split::train, Split::val, Split::test})
      for (const auto& t : d.get(s)) m[t.c2(0, 0)] = t.member_id;
    return m;
  };
  const auto full = index(generate_dataset(o, pairs, 43));
  for (const auto& [key, member] : index(generate_dataset(o, head, 43))) EXPECT_EQ(full.at(key), member);
}

TEST(Dataset, NormalizationScalesAllMatrices) {
  const auto o = build_ensemble({}, 51);
  auto pairs = lhs_orthotropic(30, 52);
  for (auto& [a, b] : pairs) {
    a = a * 2.5;
    b = b * 2.5;
  }
  const auto d = generate_dataset(o, pairs, 53);
  for (const auto& t : d.train) {
    EXPECT_DOUBLE_EQ(t.scale, 2.5);
    EXPECT_DOUBLE_EQ(t.c1(0, 0), 1.0);
    const auto back = denormalize(t);
    EXPECT_LT(vdmn::testing::rel_diff(back.ch, o.homogenize(t.member_id, back.c1, back.c2)), 1e-13);
  }
}
