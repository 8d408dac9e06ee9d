#include <gtest/gtest.h>

#include <chrono>

#include "test_support.hpp"

using namespace vdmn;

namespace {

const LatentConstitutiveModel kPlanted{1.0, std::log(0.05 * 0.05), 2.0, std::log(0.15 * 0.15)};

// VDMN whose hyper-distributions imitate the jittered oracle ensemble.
VdmnParams mimic(const EnsembleOracle& o) {
  VdmnParams p = VdmnParams::initial(o.base.depth, 0);
  double total = 0.0;
  for (double w : o.base.leaf_weights) total += w;
  for (std::size_t j = 0; j < p.weight_param.size(); ++j) p.weight_param[j] = softplus_inverse(o.base.leaf_weights[j] / total);
  p.angle_mean = o.base.angles;
  const double sa = o.config.angle_jitter, sw = o.config.weight_jitter;
  for (auto& x : p.angle_logvar) x = std::log(sa * sa);
  for (std::size_t j = 0; j < p.df_logvar.size(); ++j) {
    const double wa = o.base.leaf_weights[2 * j], wb = o.base.leaf_weights[2 * j + 1];
    const double f = wa / (wa + wb);
    p.df_logvar[j] = std::log(2.0 * sw * sw * f * f * (1 - f) * (1 - f));
  }
  return p;
}

// Specimens drawn from the VDMN's own sampling mode.
std::vector<Stiffness> vdmn_specimens(const VdmnParams& p, const LatentConstitutiveModel& lm, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::vector<Stiffness> out;
  for (int i = 0; i < n; ++i) {
    const double e1 = lm.mu_e1 + std::sqrt(std::exp(lm.log_var_e1)) * nrm(rng);
    const double e2 = lm.mu_e2 + std::sqrt(std::exp(lm.log_var_e2)) * nrm(rng);
    Stiffness c = tree_homogenize(sample_dmn(p, rng()), isotropic_stiffness({e1, lm.nu1}), isotropic_stiffness({e2, lm.nu2}));
    for (double& x : c.c) x += std::sqrt(lm.noise_var) * nrm(rng);
    out.push_back(c);
  }
  return out;
}

struct Fixture {
  EnsembleOracle oracle = build_ensemble({}, 7);
  VdmnParams params = mimic(oracle);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

double param_error(const LatentConstitutiveModel& a, const LatentConstitutiveModel& b) {
  return 10.0 * (std::abs(a.mu_e1 / b.mu_e1 - 1) + std::abs(a.mu_e2 / b.mu_e2 - 1)) +
         std::abs(a.log_var_e1 - b.log_var_e1) + std::abs(a.log_var_e2 - b.log_var_e2);
}

}  // namespace

TEST(TotalUncertainty, ZeroLatentVarianceIsPropagateTree) {
  const auto& p = fixture().params;
  LatentConstitutiveModel lm = kPlanted;
  lm.log_var_e1 = lm.log_var_e2 = -700.0;
  const auto g = total_uncertainty_model(p, lm);
  const auto ref = propagate_tree(p, isotropic_stiffness({1.0, lm.nu1}), isotropic_stiffness({2.0, lm.nu2}));
  EXPECT_LT(vdmn::testing::rel_diff(g.mean, ref.mean), 1e-14);
  EXPECT_LT((g.cov - ref.cov).norm(), 1e-12 * ref.cov.norm());
}

TEST(TotalUncertainty, NoiseAddsIdentityAndIsMonotone) {
  const auto& p = fixture().params;
  LatentConstitutiveModel lm = kPlanted;
  const auto g0 = total_uncertainty_model(p, lm);
  Mat6 prev = g0.cov;
  for (double s2 : {1e-6, 1e-4, 1e-2}) {
    lm.noise_var = s2;
    const auto g = total_uncertainty_model(p, lm);
    EXPECT_EQ(g.mean.c, g0.mean.c);
    EXPECT_LT((g.cov - g0.cov - s2 * Mat6::Identity()).norm(), 1e-15 * (1.0 + g.cov.norm()));
    Eigen::SelfAdjointEigenSolver<Mat6> es(g.cov - prev);
    EXPECT_GE(es.eigenvalues()(0), -1e-15);
    prev = g.cov;
  }
}

TEST(TotalUncertainty, MatchesMonteCarlo) {
  const auto& p = fixture().params;
  LatentConstitutiveModel lm = kPlanted;
  lm.noise_var = 1e-4;
  const auto g = total_uncertainty_model(p, lm);
  const int n = 100000;
  const auto draws = vdmn_specimens(p, lm, n, 3);
  Vec6 mean = Vec6::Zero();
  for (const auto& c : draws) mean += to_vec(c);
  mean /= n;
  Mat6 cov = Mat6::Zero();
  for (const auto& c : draws) cov += (to_vec(c) - mean) * (to_vec(c) - mean).transpose();
  cov /= n - 1;
  for (int q : {0, 1, 2, 3}) EXPECT_NEAR(g.mean.c[q], mean(q), 0.005 * std::abs(mean(q)));
  EXPECT_LT((g.cov - cov).norm(), 0.1 * cov.norm());
}

TEST(Measurements, ParseComponentsAndSingleProtocol) {
  EXPECT_EQ(parse_components("C11,C12"), (std::vector<int>{0, 3}));
  EXPECT_EQ(parse_components("{C22, C33}"), (std::vector<int>{1, 2}));
  EXPECT_THROW(parse_components("C14"), ConfigError);
  EXPECT_THROW(parse_components("C11,C11"), ConfigError);
  EXPECT_THROW(parse_components(""), ConfigError);
  const std::vector<Stiffness> obs(50, isotropic_stiffness({1.0, 0.3}));
  const auto ms = make_measurements(obs, {0, 3}, true, 5);
  int c11 = 0;
  for (const auto& m : ms) {
    ASSERT_EQ(m.components.size(), 1u);
    c11 += m.components[0] == 0;
  }
  EXPECT_GT(c11, 10);
  EXPECT_LT(c11, 40);
}

TEST(Measurements, NllMatchesScalarGaussian) {
  GaussianStiffness g;
  g.mean = isotropic_stiffness({1.0, 0.3});
  g.cov = Mat6::Identity() * 0.01;
  g.cov(0, 3) = g.cov(3, 0) = 0.005;
  Stiffness obs = g.mean;
  obs.c[0] += 0.1;
  obs.c[3] -= 0.05;
  const double jit = kCovJitter * 0.01;
  // single component: 0.5 (r^2 / s + log s + log 2 pi)
  const double one = measurement_nll(g, {{obs, {0}}});
  EXPECT_NEAR(one, 0.5 * (0.01 / (0.01 + jit) + std::log(0.01 + jit) + std::log(2 * M_PI)), 1e-13);
  // joint pair via explicit 2x2 inverse
  const double a = 0.01 + jit, b = 0.005, d = 0.01 + jit, det = a * d - b * b;
  const double r0 = 0.1, r1 = -0.05;
  const double quad = (d * r0 * r0 - 2 * b * r0 * r1 + a * r1 * r1) / det;
  EXPECT_NEAR(measurement_nll(g, {{obs, {0, 3}}}), 0.5 * (quad + std::log(det) + 2 * std::log(2 * M_PI)), 1e-12);
}

TEST(NelderMead, RosenbrockAndStall) {
  auto rosen = [](const std::vector<double>& x) {
    return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2);
  };
  const auto r = nelder_mead(rosen, {-1.2, 1.0}, {0.12, 0.1}, 1e-14, 5000);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1.0, 1e-3);
  EXPECT_NEAR(r.x[1], 1.0, 2e-3);
  // nonsmooth minimum with an unreachable spread tolerance: the simplex collapses first
  auto kink = [](const std::vector<double>& x) { return std::abs(x[0] - 1.0 / 3) + std::abs(x[1] - 1.0 / 7); };
  const auto s = nelder_mead(kink, {1.0, 1.0}, {0.1, 0.1}, 1e-30, 5000);
  EXPECT_FALSE(s.converged);
  EXPECT_FALSE(s.message.empty());
}

TEST(ConjugateGradient, Quadratic) {
  auto q = [](const std::vector<double>& x) {
    return 3 * x[0] * x[0] + x[0] * x[1] + 2 * x[1] * x[1] - x[0] + 4 * x[1];
  };
  const auto r = conjugate_gradient(q, {5.0, -3.0}, 1e-14, 500);
  // gradient zero: 6x + y = 1, x + 4y = -4
  const double det = 23.0;
  EXPECT_NEAR(r.x[0], (4.0 + 4.0) / det, 1e-5);
  EXPECT_NEAR(r.x[1], (-24.0 - 1.0) / det, 1e-5);
}

TEST(InverseFit, StaysAtGeneratorWithManySpecimens) {
  const auto& p = fixture().params;
  const auto data = make_measurements(vdmn_specimens(p, kPlanted, 3000, 9), {0, 3});
  log::quiet() = true;
  const auto r = inverse_fit(data, p, kPlanted);
  log::quiet() = false;
  EXPECT_NEAR(r.model.mu_e1, 1.0, 0.01);
  EXPECT_NEAR(r.model.mu_e2, 2.0, 0.02);
  EXPECT_NEAR(r.model.log_var_e1, kPlanted.log_var_e1, 0.2);
  EXPECT_NEAR(r.model.log_var_e2, kPlanted.log_var_e2, 0.2);
}

TEST(InverseFit, RecoversPlantedModelFromOracleSpecimens) {
  const auto& f = fixture();
  const auto data = make_measurements(oracle_specimens(f.oracle, kPlanted, 300, 11), {0, 3});
  LatentConstitutiveModel init = kPlanted;
  init.mu_e1 = 1.2;
  init.mu_e2 = 1.7;
  init.log_var_e1 = -5.0;
  init.log_var_e2 = -5.0;
  const auto t0 = std::chrono::steady_clock::now();
  log::quiet() = true;
  const auto r = inverse_fit(data, f.params, init);
  log::quiet() = false;
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.model.mu_e1, 1.0, 0.05);
  EXPECT_NEAR(r.model.mu_e2, 2.0, 0.1);
  EXPECT_NEAR(r.model.log_var_e1, kPlanted.log_var_e1, 0.5);
  EXPECT_NEAR(r.model.log_var_e2, kPlanted.log_var_e2, 0.5);
  EXPECT_EQ(r.model.nu1, 0.3);
  EXPECT_EQ(r.model.noise_var, 0.0);
}

TEST(InverseFit, InvariantToMeasurementOrder) {
  const auto& f = fixture();
  auto data = make_measurements(oracle_specimens(f.oracle, kPlanted, 30, 12), {0, 3});
  log::quiet() = true;
  const auto a = inverse_fit(data, f.params, kPlanted);
  std::mt19937_64 rng(1);
  std::shuffle(data.begin(), data.end(), rng);
  const auto b = inverse_fit(data, f.params, kPlanted);
  log::quiet() = false;
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(get_latent(a.model, k), get_latent(b.model, k), 1e-10);
  EXPECT_EQ(a.nll, b.nll);
}

TEST(InverseFit, JointMeasurementsBeatSingleComponents) {
  const auto& f = fixture();
  LatentConstitutiveModel init = kPlanted;
  init.mu_e1 = 1.2;
  init.mu_e2 = 1.7;
  init.log_var_e1 = init.log_var_e2 = -5.0;
  double joint = 0.0, c11 = 0.0, c12 = 0.0;
  log::quiet() = true;
  for (std::uint64_t seed : {13, 14, 15}) {
    const auto specimens = oracle_specimens(f.oracle, kPlanted, 60, seed);
    joint += param_error(inverse_fit(make_measurements(specimens, {0, 3}), f.params, init).model, kPlanted);
    c11 += param_error(inverse_fit(make_measurements(specimens, {0}), f.params, init).model, kPlanted);
    c12 += param_error(inverse_fit(make_measurements(specimens, {3}), f.params, init).model, kPlanted);
  }
  log::quiet() = false;
  EXPECT_LE(joint, c11);
  EXPECT_LE(joint, c12);
}

TEST(InverseFit, ConjugateGradientAgreesWithNelderMead) {
  const auto& f = fixture();
  const auto data = make_measurements(oracle_specimens(f.oracle, kPlanted, 200, 14), {0, 1});
  EXPECT_EQ(default_optimizer({0, 1}), Optimizer::conjugate_gradient);
  EXPECT_EQ(default_optimizer({0, 3}), Optimizer::nelder_mead);
  InverseOptions cg;
  cg.optimizer = Optimizer::conjugate_gradient;
  log::quiet() = true;
  const auto a = inverse_fit(data, f.params, kPlanted, cg);
  const auto b = inverse_fit(data, f.params, kPlanted);
  log::quiet() = false;
  EXPECT_NEAR(a.nll, b.nll, 1e-3 * std::abs(b.nll) + 1e-3);
  EXPECT_NEAR(a.model.mu_e1, b.model.mu_e1, 5e-3);
  EXPECT_NEAR(a.model.mu_e2, b.model.mu_e2, 1e-2);
}

TEST(InverseFit, NoiseFitFlagAndValidation) {
  const auto& f = fixture();
  LatentConstitutiveModel lm = kPlanted;
  lm.noise_var = 1e-3;
  const auto data = make_measurements(oracle_specimens(f.oracle, lm, 400, 15), {0, 3});
  InverseOptions opt;
  opt.fit_noise = true;
  log::quiet() = true;
  const auto r = inverse_fit(data, f.params, lm, opt);
  log::quiet() = false;
  EXPECT_NEAR(std::log(r.model.noise_var), std::log(1e-3), 0.5);
  EXPECT_THROW(inverse_fit({data.begin(), data.begin() + 9}, f.params, lm), ConfigError);
  lm.noise_var = 0.0;
  EXPECT_THROW(inverse_fit(data, f.params, lm, opt), ConfigError);
}

TEST(Landscape, MinimumNearFitAndSensitivity) {
  const auto& f = fixture();
  const auto data = make_measurements(oracle_specimens(f.oracle, kPlanted, 30, 16), {0, 3});
  log::quiet() = true;
  const auto fit = inverse_fit(data, f.params, kPlanted);
  log::quiet() = false;
  const auto& opt = fit.model;
  // local probe: every axis direction increases the NLL
  const double h[4] = {0.01 * opt.mu_e1, 0.2, 0.01 * opt.mu_e2, 0.2};
  const double f0 = measurement_nll(total_uncertainty_model(f.params, opt), data);
  double curv[4];
  for (int k = 0; k < 4; ++k) {
    double side[2];
    for (int s = 0; s < 2; ++s) {
      LatentConstitutiveModel m = opt;
      set_latent(m, k, get_latent(opt, k) + (s ? h[k] : -h[k]));
      side[s] = measurement_nll(total_uncertainty_model(f.params, m), data);
      EXPECT_GT(side[s], f0 - 1e-6) << kLatentNames[k];
    }
    curv[k] = (side[0] + side[1] - 2 * f0) / (h[k] * h[k]);
  }
  for (int k = 1; k < 4; ++k) EXPECT_GT(curv[0], curv[k]) << kLatentNames[k];

  LandscapeAxis ax{0, opt.mu_e1 - 0.05, opt.mu_e1 + 0.05, 21}, ay{1, opt.log_var_e1 - 1.0, opt.log_var_e1 + 1.0, 21};
  const auto l = likelihood_landscape(data, f.params, opt, ax, ay);
  int bi = 0, bj = 0;
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j)
      if (l.at(i, j) < l.at(bi, bj)) {
        bi = i;
        bj = j;
      }
  EXPECT_LE(std::abs(l.xs[bi] - opt.mu_e1), l.xs[1] - l.xs[0]);
  EXPECT_LE(std::abs(l.ys[bj] - opt.log_var_e1), l.ys[1] - l.ys[0]);
}

TEST(Landscape, FailedPointsAreMissing) {
  const auto& f = fixture();
  const auto data = make_measurements(oracle_specimens(f.oracle, kPlanted, 12, 17), {0});
  LandscapeAxis ax{0, -0.5, 1.5, 5}, ay{2, 1.5, 2.5, 3};
  const auto l = likelihood_landscape(data, f.params, kPlanted, ax, ay);
  for (int j = 0; j < 3; ++j) {
    EXPECT_TRUE(std::isnan(l.at(0, j)));  // mu_E1 = -0.5
    EXPECT_TRUE(std::isnan(l.at(1, j)));  // mu_E1 = 0
    EXPECT_FALSE(std::isnan(l.at(4, j)));
  }
  std::ostringstream os;
  write_landscape_csv(l, os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "mu_E1,mu_E2,nll");
  EXPECT_THROW(likelihood_landscape(data, f.params, kPlanted, ax, ax), ConfigError);
}

TEST(Specimens, CsvRoundTripAndErrors) {
  const auto& f = fixture();
  const auto v = oracle_specimens(f.oracle, kPlanted, 7, 3);
  std::stringstream ss;
  write_specimens(v, ss);
  const auto back = read_specimens(ss);
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back[i].c, v[i].c);
  std::istringstream bad("C11,C22,C33,C12,C13,C23\n1,2,3,4,5\n");
  try {
    read_specimens(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), 24u);
  }
  std::istringstream nohdr("1,2,3,4,5,6\n");
  EXPECT_THROW(read_specimens(nohdr), ParseError);
}
