#pragma once

// Inverse uncertainty quantification: latent Gaussian Young's moduli per
// phase pushed through a trained VDMN, additive measurement noise, and
// maximum-likelihood recovery from partial homogenized measurements.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdmn/datagen.hpp"
#include "vdmn/dataset.hpp"
#include "vdmn/propagation.hpp"

namespace vdmn {

struct LatentConstitutiveModel {
  double mu_e1 = 1.0;
  double log_var_e1 = -6.0;
  double mu_e2 = 2.0;
  double log_var_e2 = -4.0;
  double nu1 = 0.3;
  double nu2 = 0.3;
  double noise_var = 0.0;  // measurement noise variance, added times identity

  void validate() const {
    if (!(mu_e1 > 0.0) || !(mu_e2 > 0.0)) throw ConfigError("latent mean moduli must be positive");
    if (!std::isfinite(log_var_e1) || !std::isfinite(log_var_e2)) throw ConfigError("latent log-variances must be finite");
    if (!(noise_var >= 0.0)) throw ConfigError("measurement noise variance must be nonnegative");
    if (!(nu1 > -1.0 && nu1 < 0.5) || !(nu2 > -1.0 && nu2 < 0.5)) throw ConfigError("Poisson ratios must lie in (-1, 0.5)");
  }

  /// (mu_e1, log_var_e1, mu_e2, log_var_e2)
  std::array<double, 4> free_params() const { return {mu_e1, log_var_e1, mu_e2, log_var_e2}; }
  void set_free_params(const std::array<double, 4>& x) {
    mu_e1 = x[0];
    log_var_e1 = x[1];
    mu_e2 = x[2];
    log_var_e2 = x[3];
  }
};

inline constexpr std::array<const char*, 5> kLatentNames = {"mu_E1", "logS_E1", "mu_E2", "logS_E2", "log_noise"};

inline int parse_latent_name(const std::string& s) {
  for (int k = 0; k < 5; ++k)
    if (s == kLatentNames[k]) return k;
  throw ConfigError("unknown latent parameter '" + s + "'");
}

inline double get_latent(const LatentConstitutiveModel& m, int k) {
  switch (k) {
    case 0: return m.mu_e1;
    case 1: return m.log_var_e1;
    case 2: return m.mu_e2;
    case 3: return m.log_var_e2;
    default: return m.noise_var > 0.0 ? std::log(m.noise_var) : -std::numeric_limits<double>::infinity();
  }
}

inline void set_latent(LatentConstitutiveModel& m, int k, double v) {
  switch (k) {
    case 0: m.mu_e1 = v; break;
    case 1: m.log_var_e1 = v; break;
    case 2: m.mu_e2 = v; break;
    case 3: m.log_var_e2 = v; break;
    default: m.noise_var = std::exp(v); break;
  }
}

/// Gaussian of C^h under latent moduli, microstructure variability of the
/// trained net, and measurement noise. Inputs are not normalized: the
/// propagation is scale-equivariant.
inline GaussianStiffness total_uncertainty_model(const VdmnParams& trained, const LatentConstitutiveModel& latent,
                                                 const PropagationConfig& cfg = {}) {
  latent.validate();
  cfg.validate();
  trained.validate();
  const auto view = make_view(trained);
  Eigen::Vector2d mean(latent.mu_e1, latent.mu_e2);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  cov(0, 0) = std::exp(latent.log_var_e1);
  cov(1, 1) = std::exp(latent.log_var_e2);
  PropagationConfig inner = cfg;
  inner.input_cov_1.reset();
  inner.input_cov_2.reset();
  auto fn = [&](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    GaussianT<T> in1, in2;
    in1.mean = isotropic_stiffness<T>(x[0], latent.nu1);
    in2.mean = isotropic_stiffness<T>(x[1], latent.nu2);
    return propagate_tree_generic<T>(cast_view<T>(view), in1, in2, inner);
  };
  GaussianStiffness g = total_variance_propagate<2>(mean, cov, fn);
  g.cov += latent.noise_var * Mat6::Identity();
  return g;
}

/// Synthetic specimens: latent moduli drawn per specimen, oracle members cycled
/// in order, optional additive noise on every component.
inline std::vector<Stiffness> oracle_specimens(const EnsembleOracle& oracle, const LatentConstitutiveModel& latent,
                                               int n, std::uint64_t seed) {
  latent.validate();
  if (n < 1) throw ConfigError("need at least one specimen");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nrm(0.0, 1.0);
  const double s1 = std::sqrt(std::exp(latent.log_var_e1)), s2 = std::sqrt(std::exp(latent.log_var_e2));
  const double sn = std::sqrt(latent.noise_var);
  std::vector<Stiffness> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double e1 = latent.mu_e1 + s1 * nrm(rng);
    const double e2 = latent.mu_e2 + s2 * nrm(rng);
    if (!(e1 > 0.0) || !(e2 > 0.0)) throw ConfigError("sampled a nonpositive Young's modulus");
    Stiffness c = oracle.homogenize(i % static_cast<int>(oracle.members.size()),
                                    isotropic_stiffness({e1, latent.nu1}), isotropic_stiffness({e2, latent.nu2}));
    for (double& x : c.c) x += sn * nrm(rng);
    out.push_back(c);
  }
  return out;
}

inline constexpr const char* kSpecimenHeader = "C11,C22,C33,C12,C13,C23";

inline void write_specimens(const std::vector<Stiffness>& v, std::ostream& os) {
  os << kSpecimenHeader << '\n';
  for (const auto& c : v)
    for (int p = 0; p < 6; ++p) os << format_double(c.c[p]) << (p < 5 ? ',' : '\n');
}

inline std::vector<Stiffness> read_specimens(std::istream& is) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(is, line) || line != kSpecimenHeader) throw ParseError("missing specimen header", 0);
  offset += line.size() + 1;
  std::vector<Stiffness> out;
  while (std::getline(is, line)) {
    if (!line.empty()) {
      std::stringstream ss(line);
      std::string cell;
      Stiffness c;
      int p = 0;
      try {
        while (std::getline(ss, cell, ',')) {
          if (p >= 6) throw ParseError("specimen row has more than 6 fields", offset);
          c.c[p++] = std::stod(cell);
        }
      } catch (const std::invalid_argument&) {
        throw ParseError("malformed number in specimen row", offset);
      } catch (const std::out_of_range&) {
        throw ParseError("number out of range in specimen row", offset);
      }
      if (p != 6) throw ParseError("specimen row has " + std::to_string(p) + " fields, expected 6", offset);
      out.push_back(c);
    }
    offset += line.size() + 1;
  }
  return out;
}

/// One specimen: the measured subset of homogenized components (distinct-entry indices).
struct Measurement {
  Stiffness value;
  std::vector<int> components;
};

inline std::vector<int> parse_components(const std::string& list) {
  std::vector<int> out;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    int idx = -1;
    for (int p = 0; p < 6; ++p)
      if (tok == kSymNames[p]) idx = p;
    if (idx < 0) throw ConfigError("unknown component '" + tok + "'");
    if (std::find(out.begin(), out.end(), idx) != out.end()) throw ConfigError("duplicate component '" + tok + "'");
    out.push_back(idx);
    tok.clear();
  };
  for (char ch : list) {
    if (ch == ',' || ch == ' ' || ch == '{' || ch == '}') flush();
    else tok += ch;
  }
  flush();
  if (out.empty()) throw ConfigError("empty component list");
  return out;
}

/// Measurements of the listed components. single = one randomly chosen listed component per specimen.
inline std::vector<Measurement> make_measurements(const std::vector<Stiffness>& observed, const std::vector<int>& components,
                                                  bool single = false, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::vector<Measurement> out;
  out.reserve(observed.size());
  for (const auto& c : observed) {
    Measurement m{c, components};
    if (single) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(components.size()) - 1);
      m.components = {components[pick(rng)]};
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Joint Gaussian NLL of the measured marginals, summed over specimens in sorted order.
inline double measurement_nll(const GaussianStiffness& g, const std::vector<Measurement>& data) {
  std::vector<double> terms;
  terms.reserve(data.size());
  const double jitter = kCovJitter * std::max(g.cov.trace() / 6.0, 1e-300);
  for (const auto& m : data) {
    const int k = static_cast<int>(m.components.size());
    Eigen::MatrixXd s(k, k);
    Eigen::VectorXd r(k);
    for (int a = 0; a < k; ++a) {
      r(a) = m.value.c[m.components[a]] - g.mean.c[m.components[a]];
      for (int b = 0; b < k; ++b) s(a, b) = g.cov(m.components[a], m.components[b]);
      s(a, a) += jitter;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw ConditioningError("measured-marginal covariance is not positive definite");
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (int a = 0; a < k; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    terms.push_back(0.5 * (w.squaredNorm() + logdet + k * std::log(2.0 * std::numbers::pi)));
  }
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

enum class Optimizer { nelder_mead, conjugate_gradient };

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "nelder-mead" || s == "nm") return Optimizer::nelder_mead;
  if (s == "cg" || s == "conjugate-gradient") return Optimizer::conjugate_gradient;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// Conjugate gradient is used for the {C11, C22} combination, Nelder-Mead otherwise.
inline Optimizer default_optimizer(const std::vector<int>& components) {
  const bool c11 = std::find(components.begin(), components.end(), 0) != components.end();
  const bool c22 = std::find(components.begin(), components.end(), 1) != components.end();
  return c11 && c22 ? Optimizer::conjugate_gradient : Optimizer::nelder_mead;
}

struct InverseOptions {
  Optimizer optimizer = Optimizer::nelder_mead;
  double simplex_scale = 0.1;
  double f_tolerance = 1e-8;
  int max_iterations = 2000;
  bool fit_noise = false;
  PropagationConfig propagation;
};

struct InverseResult {
  LatentConstitutiveModel model;
  double nll = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

struct MinimizeResult {
  std::vector<double> x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Nelder-Mead with standard coefficients. Converges when the spread of
/// function values drops below f_tol; a collapsed simplex returns the best
/// vertex unconverged.
inline MinimizeResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                                  const std::vector<double>& step, double f_tol, int max_iter) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> pts(n + 1, x0);
  std::vector<double> fv(n + 1);
  MinimizeResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);
  std::vector<std::size_t> order(n + 1);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
    if (std::isfinite(fv[worst]) && fv[worst] - fv[best] < f_tol) {
      res.converged = true;
      break;
    }
    double size = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t k = 0; k < n; ++k) size = std::max(size, std::abs(pts[i][k] - pts[best][k]));
    if (size < 1e-10) {
      res.message = "simplex collapsed before the function spread converged";
      break;
    }
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t k = 0; k < n; ++k) c[k] += pts[i][k] / n;
    auto along = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t k = 0; k < n; ++k) x[k] = c[k] + t * (pts[worst][k] - c[k]);
      return x;
    };
    const auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      pts[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    const auto xc = along(outside ? -0.5 : 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      pts[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
      fv[i] = eval(pts[i]);
    }
  }
  const auto best = std::min_element(fv.begin(), fv.end()) - fv.begin();
  res.x = pts[best];
  res.f = fv[best];
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  return res;
}

/// Polak-Ribiere conjugate gradient on central-difference gradients with a
/// backtracking Armijo line search; restarts on non-descent directions.
inline MinimizeResult conjugate_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, double f_tol, int max_iter) {
  const std::size_t n = x.size();
  MinimizeResult res;
  auto eval = [&](const std::vector<double>& y) {
    ++res.evaluations;
    const double v = f(y);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  auto grad = [&](const std::vector<double>& y) {
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(y[k]));
      auto a = y, b = y;
      a[k] += h;
      b[k] -= h;
      g[k] = (eval(a) - eval(b)) / (2.0 * h);
    }
    return g;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
  };
  double fx = eval(x);
  if (!std::isfinite(fx)) throw ConfigError("conjugate gradient started at an infeasible point");
  auto g = grad(x);
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) d[k] = -g[k];
  double t = 1.0 / std::max(1.0, std::sqrt(dot(g, g)));
  int stalls = 0;
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      for (std::size_t k = 0; k < n; ++k) d[k] = -g[k];
      slope = -dot(g, g);
    }
    if (std::sqrt(dot(g, g)) < 1e-10) {
      res.converged = true;
      break;
    }
    std::vector<double> xn(n);
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < n; ++k) xn[k] = x[k] + t * d[k];
      fn = eval(xn);
      if (fn <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      res.message = "line search failed";
      break;
    }
    const double df = fx - fn;
    x = xn;
    fx = fn;
    const auto gn = grad(x);
    double beta = 0.0;
    const double gg = dot(g, g);
    if (gg > 0.0) {
      double num = 0.0;
      for (std::size_t k = 0; k < n; ++k) num += gn[k] * (gn[k] - g[k]);
      beta = std::max(0.0, num / gg);
    }
    g = gn;
    for (std::size_t k = 0; k < n; ++k) d[k] = -g[k] + beta * d[k];
    t *= 2.0;
    stalls = df < f_tol ? stalls + 1 : 0;
    if (stalls >= 3) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  return res;
}

/// Maximum-likelihood latent moduli distributions. Poisson ratios and (by
/// default) the noise variance are held at their values in init.
inline InverseResult inverse_fit(const std::vector<Measurement>& data, const VdmnParams& trained,
                                 const LatentConstitutiveModel& init, const InverseOptions& opt = {}) {
  if (data.size() < 10) throw ConfigError("inverse fit needs at least 10 measurements");
  for (const auto& m : data) {
    if (m.components.empty()) throw ConfigError("measurement without components");
    for (int c : m.components)
      if (c < 0 || c > 5) throw ConfigError("measurement component out of range");
  }
  init.validate();
  const int dim = opt.fit_noise ? 5 : 4;
  if (opt.fit_noise && !(init.noise_var > 0.0)) throw ConfigError("fitting noise needs a positive initial noise variance");
  auto unpack = [&](const std::vector<double>& x) {
    LatentConstitutiveModel m = init;
    for (int k = 0; k < dim; ++k) set_latent(m, k, x[k]);
    return m;
  };
  auto objective = [&](const std::vector<double>& x) {
    const auto m = unpack(x);
    if (!(m.mu_e1 > 0.0) || !(m.mu_e2 > 0.0)) return std::numeric_limits<double>::infinity();
    try {
      return measurement_nll(total_uncertainty_model(trained, m, opt.propagation), data);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  std::vector<double> x0(dim);
  for (int k = 0; k < dim; ++k) x0[k] = get_latent(init, k);
  MinimizeResult r;
  if (opt.optimizer == Optimizer::nelder_mead) {
    std::vector<double> step(dim);
    for (int k = 0; k < dim; ++k) step[k] = opt.simplex_scale * (x0[k] != 0.0 ? std::abs(x0[k]) : 1.0);
    r = nelder_mead(objective, x0, step, opt.f_tolerance, opt.max_iterations);
  } else {
    r = conjugate_gradient(objective, x0, opt.f_tolerance, opt.max_iterations);
  }
  if (!std::isfinite(r.f)) throw ConvergenceError("inverse fit found no feasible point", r.f);
  if (!r.converged) log::warn("inverse fit did not converge: " + r.message + "; returning best point");
  InverseResult out;
  out.model = unpack(r.x);
  out.nll = r.f;
  out.iterations = r.iterations;
  out.evaluations = r.evaluations;
  out.converged = r.converged;
  out.message = r.message;
  return out;
}

struct LandscapeAxis {
  int param = 0;  // index into kLatentNames
  double lo = 0.0, hi = 1.0;
  int points = 21;

  std::vector<double> values() const {
    if (points < 2) throw ConfigError("landscape axis needs at least 2 points");
    if (!(hi > lo)) throw ConfigError("landscape axis needs hi > lo");
    std::vector<double> v(points);
    for (int i = 0; i < points; ++i) v[i] = lo + (hi - lo) * i / (points - 1);
    return v;
  }
};

struct Landscape {
  LandscapeAxis x, y;
  std::vector<double> xs, ys;
  std::vector<double> nll;  // row-major [ix * ny + iy]; NaN where evaluation failed

  double at(int ix, int iy) const { return nll[ix * ys.size() + iy]; }
};

inline Landscape likelihood_landscape(const std::vector<Measurement>& data, const VdmnParams& trained,
                                      const LatentConstitutiveModel& fixed, const LandscapeAxis& ax,
                                      const LandscapeAxis& ay, const PropagationConfig& cfg = {}) {
  if (ax.param == ay.param) throw ConfigError("landscape axes must differ");
  Landscape l{ax, ay, ax.values(), ay.values(), {}};
  l.nll.assign(l.xs.size() * l.ys.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < l.xs.size(); ++i)
    for (std::size_t j = 0; j < l.ys.size(); ++j) {
      LatentConstitutiveModel m = fixed;
      set_latent(m, ax.param, l.xs[i]);
      set_latent(m, ay.param, l.ys[j]);
      try {
        l.nll[i * l.ys.size() + j] = measurement_nll(total_uncertainty_model(trained, m, cfg), data);
      } catch (const Error&) {
      }
    }
  return l;
}

inline void write_landscape_csv(const Landscape& l, std::ostream& os) {
  os << kLatentNames[l.x.param] << ',' << kLatentNames[l.y.param] << ",nll\n";
  for (std::size_t i = 0; i < l.xs.size(); ++i)
    for (std::size_t j = 0; j < l.ys.size(); ++j) {
      const double v = l.at(static_cast<int>(i), static_cast<int>(j));
      os << format_double(l.xs[i]) << ',' << format_double(l.ys[j]) << ',' << (std::isnan(v) ? "" : format_double(v))
         << '\n';
    }
}

}  // namespace vdmn
