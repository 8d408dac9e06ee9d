#pragma once

// Graphical calibration test on predicted marginals.
//
// Each observed marginal is whitened with the predicted mean and standard
// deviation, mapped through the unit-normal CDF, and the ECDF of those values
// is compared with the diagonal on the rank grid i/N. The 95% band is
// simultaneous: binomial tail probabilities at every grid point, with the
// level adjusted by simulating uniform datasets of the same size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "vdmn/dataset.hpp"

namespace vdmn {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct MarginalCalibration {
  std::string name;
  int component = 0;  // distinct-entry index into Stiffness::c
  bool skipped = false;
  std::vector<double> z;     // in input order
  std::vector<double> rank;  // i/N, i = 1..N
  std::vector<double> ecdf;  // fraction of PIT values <= rank
  std::vector<double> lower, upper;
  double min_tail_prob = 0.0;
  bool pass = false;
};

struct CalibrationReport {
  std::vector<MarginalCalibration> marginals;
  double level = 0.95;
  double adjusted_gamma = 0.0;  // per-point two-sided tail threshold
  int n_sim = 0;
  bool pass = false;
};

namespace detail {

/// Binomial(n, x) CDF table: out[k] = P(X <= k), k = 0..n.
inline std::vector<double> binomial_cdf_table(int n, double x) {
  std::vector<double> cdf(n + 1);
  if (x <= 0.0) {
    std::fill(cdf.begin(), cdf.end(), 1.0);
    return cdf;
  }
  if (x >= 1.0) {
    std::fill(cdf.begin(), cdf.end(), 0.0);
    cdf[n] = 1.0;
    return cdf;
  }
  const double lx = std::log(x), l1x = std::log1p(-x), lgn = std::lgamma(n + 1.0);
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    acc += std::exp(lgn - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * lx + (n - k) * l1x);
    cdf[k] = std::min(acc, 1.0);
  }
  return cdf;
}

/// Two-sided tail probability of count k under the table.
inline double tail_prob(const std::vector<double>& cdf, int k) {
  const double lo = cdf[k];
  const double hi = 1.0 - (k > 0 ? cdf[k - 1] : 0.0);
  return std::min(1.0, 2.0 * std::min(lo, hi));
}

/// Counts of values <= i/N for i = 1..N-1 (values need not be sorted).
inline std::vector<int> grid_counts(std::vector<double> u) {
  const int n = static_cast<int>(u.size());
  std::sort(u.begin(), u.end());
  std::vector<int> out(n - 1);
  int k = 0;
  for (int i = 1; i < n; ++i) {
    const double x = static_cast<double>(i) / n;
    while (k < n && u[k] <= x) ++k;
    out[i - 1] = k;
  }
  return out;
}

}  // namespace detail

/// Per-point tail threshold giving a simultaneous band at `level` for
/// datasets of size n. Deterministic in seed.
inline double simultaneous_gamma(int n, int n_sim, double level = 0.95, std::uint64_t seed = 0) {
  if (n < 2) throw ConfigError("calibration needs at least 2 samples");
  if (n_sim < 10) throw ConfigError("n_sim must be >= 10");
  std::vector<std::vector<double>> tables;
  tables.reserve(n - 1);
  for (int i = 1; i < n; ++i) tables.push_back(detail::binomial_cdf_table(n, static_cast<double>(i) / n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> mins(n_sim);
  std::vector<double> u(n);
  for (int s = 0; s < n_sim; ++s) {
    for (auto& x : u) x = unif(rng);
    const auto counts = detail::grid_counts(u);
    double m = 1.0;
    for (int i = 0; i < n - 1; ++i) m = std::min(m, detail::tail_prob(tables[i], counts[i]));
    mins[s] = m;
  }
  std::sort(mins.begin(), mins.end());
  const double q = (1.0 - level) * (n_sim - 1);
  const auto lo = static_cast<std::size_t>(std::floor(q));
  const std::size_t hi = std::min(lo + 1, mins.size() - 1);
  return mins[lo] + (q - lo) * (mins[hi] - mins[lo]);
}

/// Calibration curve and band for one set of z-scores.
inline MarginalCalibration calibrate_scores(const std::vector<double>& z, double gamma) {
  const int n = static_cast<int>(z.size());
  if (n < 2) throw ConfigError("calibration needs at least 2 samples");
  MarginalCalibration m;
  m.z = z;
  std::vector<double> u(n);
  for (int l = 0; l < n; ++l) u[l] = normal_cdf(z[l]);
  const auto counts = detail::grid_counts(u);
  m.min_tail_prob = 1.0;
  m.pass = true;
  for (int i = 1; i <= n; ++i) {
    m.rank.push_back(static_cast<double>(i) / n);
    if (i == n) {
      m.ecdf.push_back(1.0);
      m.lower.push_back(1.0);
      m.upper.push_back(1.0);
      break;
    }
    const auto table = detail::binomial_cdf_table(n, static_cast<double>(i) / n);
    int lo = 0, hi = n;
    while (lo <= n && detail::tail_prob(table, lo) <= gamma) ++lo;
    while (hi >= 0 && detail::tail_prob(table, hi) <= gamma) --hi;
    const int k = counts[i - 1];
    const double p = detail::tail_prob(table, k);
    m.min_tail_prob = std::min(m.min_tail_prob, p);
    if (!(p > gamma)) m.pass = false;
    m.ecdf.push_back(static_cast<double>(k) / n);
    m.lower.push_back(static_cast<double>(lo) / n);
    m.upper.push_back(static_cast<double>(hi) / n);
  }
  return m;
}

/// The four in-plane marginals reported by default: C11, C12, C22, C33.
inline std::vector<int> default_marginals() { return {0, 3, 1, 2}; }

inline CalibrationReport calibration_test(const std::vector<GaussianStiffness>& predicted,
                                          const std::vector<Stiffness>& observed, int n_sim = 1000,
                                          const std::vector<int>& components = default_marginals(),
                                          std::uint64_t seed = 0, double level = 0.95) {
  if (predicted.size() != observed.size()) throw ConfigError("predicted and observed lists differ in length");
  if (predicted.size() < 20) throw ConfigError("calibration test needs at least 20 samples");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("calibration level must lie in (0, 1)");
  CalibrationReport rep;
  rep.level = level;
  rep.n_sim = n_sim;
  const int n = static_cast<int>(predicted.size());
  rep.adjusted_gamma = simultaneous_gamma(n, n_sim, level, seed);
  rep.pass = true;
  for (int c : components) {
    if (c < 0 || c > 5) throw ConfigError("marginal index out of range");
    std::vector<double> z(n);
    bool degenerate = false;
    for (int l = 0; l < n; ++l) {
      const double var = predicted[l].cov(c, c);
      if (!(var > 0.0)) {
        degenerate = true;
        break;
      }
      z[l] = (observed[l].c[c] - predicted[l].mean.c[c]) / std::sqrt(var);
    }
    MarginalCalibration m;
    if (degenerate) {
      log::warn(std::string("marginal ") + kSymNames[c] + " has a non-positive predicted variance; skipped");
      m.skipped = true;
    } else {
      m = calibrate_scores(z, rep.adjusted_gamma);
      rep.pass = rep.pass && m.pass;
    }
    m.name = kSymNames[c];
    m.component = c;
    rep.marginals.push_back(std::move(m));
  }
  return rep;
}

inline constexpr const char* kCalibrationHeader = "marginal,rank,ecdf,lower,upper";

inline void write_calibration_csv(const CalibrationReport& r, std::ostream& os) {
  os << kCalibrationHeader << '\n';
  for (const auto& m : r.marginals)
    for (std::size_t i = 0; i < m.rank.size(); ++i)
      os << m.name << ',' << format_double(m.rank[i]) << ',' << format_double(m.ecdf[i]) << ','
         << format_double(m.lower[i]) << ',' << format_double(m.upper[i]) << '\n';
}

}  // namespace vdmn
