#pragma once

// Synthetic homogenization data: Latin-hypercube orthotropic phase pairs and
// an ensemble of jittered laminate trees that acts as the ground-truth
// microstructure family.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "vdmn/dataset.hpp"
#include "vdmn/laminate.hpp"

namespace vdmn {

/// RNG seeded from (seed, index) so per-item streams do not depend on order.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Free ratios of an orthotropic pair, phase alpha has C11 = 1.
struct OrthoRatios {
  double log_c11_ratio = 0.0;  // ln(C11_b / C11_a)
  std::array<double, 2> log_c22 = {0.0, 0.0};  // ln(C22 / C11) per phase
  std::array<double, 2> coupling = {0.45, 0.45};  // C12 / sqrt(C11 C22)
  std::array<double, 2> log_c33 = {0.0, 0.0};  // ln(C33 / sqrt(C11 C22))
};

inline constexpr int kLhsDims = 7;

/// Maps a point of the unit cube onto the ratio box: ln-ratios in [-1, 1], couplings in [0, 0.9].
inline OrthoRatios ratios_from_unit(const std::array<double, kLhsDims>& u) {
  OrthoRatios r;
  r.log_c11_ratio = 2.0 * u[0] - 1.0;
  for (int ph = 0; ph < 2; ++ph) {
    r.log_c22[ph] = 2.0 * u[1 + 3 * ph] - 1.0;
    r.coupling[ph] = 0.9 * u[2 + 3 * ph];
    r.log_c33[ph] = 2.0 * u[3 + 3 * ph] - 1.0;
  }
  return r;
}

inline Stiffness orthotropic(double c11, double log_c22, double coupling, double log_c33) {
  Stiffness c;
  c(0, 0) = c11;
  c(1, 1) = c11 * std::exp(log_c22);
  const double g = std::sqrt(c(0, 0) * c(1, 1));
  c(0, 1) = coupling * g;
  c(2, 2) = g * std::exp(log_c33);
  return c;
}

inline std::pair<Stiffness, Stiffness> stiffness_pair(const OrthoRatios& r) {
  return {orthotropic(1.0, r.log_c22[0], r.coupling[0], r.log_c33[0]),
          orthotropic(std::exp(r.log_c11_ratio), r.log_c22[1], r.coupling[1], r.log_c33[1])};
}

/// n points in [0,1)^dims, one per stratum on every axis.
inline std::vector<std::array<double, kLhsDims>> latin_hypercube(int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("LHS needs n >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::array<double, kLhsDims>> pts(n);
  std::vector<int> perm(n);
  for (int d = 0; d < kLhsDims; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) pts[i][d] = (perm[i] + unif(rng)) / n;
  }
  return pts;
}

inline std::vector<std::pair<Stiffness, Stiffness>> lhs_orthotropic(int n, std::uint64_t seed) {
  std::vector<std::pair<Stiffness, Stiffness>> out;
  out.reserve(n);
  for (const auto& u : latin_hypercube(n, seed)) {
    auto p = stiffness_pair(ratios_from_unit(u));
    if (!is_valid_stiffness(p.first) || !is_valid_stiffness(p.second))
      throw DegenerateInputError("LHS produced a non-PD stiffness");
    out.push_back(p);
  }
  return out;
}

struct EnsembleConfig {
  int members = 30;
  int depth = 5;
  double angle_jitter = 0.02;   // std of additive angle noise
  double weight_jitter = 0.05;  // std of log-normal leaf weight factors
  double vf_tolerance = 0.05;
  int max_tries = 1000;

  void validate() const {
    if (members < 2) throw ConfigError("ensemble needs at least 2 members");
    if (depth < 2 || depth > 12) throw ConfigError("ensemble depth must lie in [2, 12]");
    if (!(angle_jitter >= 0.0) || !(weight_jitter >= 0.0)) throw ConfigError("jitter must be nonnegative");
    if (!(vf_tolerance > 0.0)) throw ConfigError("vf_tolerance must be positive");
    if (max_tries < 1) throw ConfigError("max_tries must be >= 1");
  }
};

struct EnsembleOracle {
  EnsembleConfig config;
  DmnTopology base;
  std::vector<DmnTopology> members;

  Stiffness homogenize(int member, const Stiffness& c1, const Stiffness& c2) const {
    return tree_homogenize(members.at(member), c1, c2);
  }
};

/// One random base tree and M jittered copies with the base volume fraction (within tolerance).
inline EnsembleOracle build_ensemble(const EnsembleConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EnsembleOracle o;
  o.config = cfg;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  o.base = DmnTopology::uniform(cfg.depth);
  for (auto& w : o.base.leaf_weights) w = 0.2 + unif(rng);
  for (auto& a : o.base.angles) a = unif(rng);
  const double vf0 = leaf_volume_fraction(o.base);
  for (int m = 0; m < cfg.members; ++m) {
    auto r = stream_rng(seed, m + 1);
    std::normal_distribution<double> nrm(0.0, 1.0);
    bool ok = false;
    for (int t = 0; t < cfg.max_tries && !ok; ++t) {
      DmnTopology d = o.base;
      for (auto& a : d.angles) a += cfg.angle_jitter * nrm(r);
      for (auto& w : d.leaf_weights) w *= std::exp(cfg.weight_jitter * nrm(r));
      if (std::abs(leaf_volume_fraction(d) - vf0) <= cfg.vf_tolerance) {
        o.members.push_back(std::move(d));
        ok = true;
      }
    }
    if (!ok) throw ConfigError("ensemble member " + std::to_string(m) + " missed the volume-fraction window after " +
                               std::to_string(cfg.max_tries) + " tries");
  }
  return o;
}

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
};

/// Assigns each pair a random member, homogenizes, normalizes, shuffles and
/// splits floor(train n) / floor(val n) / remainder.
inline Dataset generate_dataset(const EnsembleOracle& oracle, const std::vector<std::pair<Stiffness, Stiffness>>& pairs,
                                std::uint64_t seed, SplitFractions split = {}) {
  if (pairs.empty()) throw ConfigError("no input pairs");
  if (!(split.train > 0.0 && split.val >= 0.0 && split.train + split.val <= 1.0))
    throw ConfigError("split fractions must be positive and sum to at most 1");
  const int n = static_cast<int>(pairs.size());
  const int m = static_cast<int>(oracle.members.size());
  std::vector<HomogTriplet> all(n);
  for (int i = 0; i < n; ++i) {
    auto r = stream_rng(seed, i);
    std::uniform_int_distribution<int> pick(0, m - 1);
    HomogTriplet t;
    t.c1 = pairs[i].first;
    t.c2 = pairs[i].second;
    t.member_id = pick(r);
    t.ch = oracle.homogenize(t.member_id, t.c1, t.c2);
    all[i] = normalize(t);
  }
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::shuffle(all.begin(), all.end(), rng);
  const auto ntr = static_cast<std::size_t>(std::floor(split.train * n));
  const auto nva = static_cast<std::size_t>(std::floor(split.val * n));
  Dataset d;
  d.train.assign(all.begin(), all.begin() + ntr);
  d.val.assign(all.begin() + ntr, all.begin() + ntr + nva);
  d.test.assign(all.begin() + ntr + nva, all.end());
  return d;
}

}  // namespace vdmn
