#pragma once

// Phase constitutive laws for online (incremental) simulation: linear
// elasticity and Norton elastoviscoplasticity under plane strain.
//
// Strains use engineering Voigt order (xx, yy, gamma_xy); the Norton state
// keeps the full in-plane stress plus sigma_zz, since the out-of-plane
// component enters the deviatoric norm.

#include <array>
#include <cmath>
#include <string>
#include <variant>

#include "vdmn/dual.hpp"
#include "vdmn/voigt.hpp"

namespace vdmn {

struct NortonParams {
  double E = 200000.0;
  double nu = 0.19;
  double sigma_y = 300.0;
  double sigma_y_max = 300.0;
  double delta = 0.0;
  double K_p = 0.0;
  double N = 10.0;

  void validate() const {
    if (!(E > 0.0)) throw ConfigError("Norton E must be positive");
    if (!(nu > -1.0 && nu < 0.5)) throw ConfigError("Norton nu must lie in (-1, 0.5)");
    if (!(sigma_y > 0.0)) throw ConfigError("Norton sigma_y must be positive");
    if (!(sigma_y_max >= sigma_y)) throw ConfigError("Norton sigma_y_max must be >= sigma_y");
    if (!(N >= 1.0)) throw ConfigError("Norton exponent N must be >= 1");
    if (!(delta >= 0.0)) throw ConfigError("Norton delta must be nonnegative");
  }

  double shear_modulus() const { return E / (2.0 * (1.0 + nu)); }
  double lame_lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }

  template <class S>
  S reference_stress(const S& alpha) const {
    using std::exp;
    return sigma_y + K_p * alpha + (sigma_y_max - sigma_y) * (1.0 - exp(-delta * alpha));
  }
  double reference_stress_slope(double alpha) const {
    return K_p + (sigma_y_max - sigma_y) * delta * std::exp(-delta * alpha);
  }
};

struct LinearElastic {
  Stiffness c;
};

using PhaseLaw = std::variant<LinearElastic, NortonParams>;

inline PhaseLaw elastic_law(const IsoElastic& p) { return LinearElastic{isotropic_stiffness(p)}; }

/// Plane-strain elastic stiffness of a phase law (the Norton elastic part).
inline Stiffness elastic_stiffness(const PhaseLaw& law) {
  if (const auto* e = std::get_if<LinearElastic>(&law)) return e->c;
  const auto& n = std::get<NortonParams>(law);
  return isotropic_stiffness({n.E, n.nu});
}

/// Material point state: stress (xx, yy, zz, xy) and hardening variable.
struct MaterialState {
  std::array<double, 4> stress{};
  double alpha = 0.0;
};

template <class S>
struct NortonResult {
  std::array<S, 4> stress;  // xx, yy, zz, xy
  S alpha;
  int iterations = 0;
};

/// Backward-Euler Norton update over one time increment.
///
/// The implicit system reduces to a scalar equation for the plastic
/// multiplier dp = dt (q/zeta)^N, solved in log form by safeguarded Newton on
/// primal values. For dual scalars a final implicit-function step carries the
/// derivatives, so the tangent is consistent.
template <class S>
NortonResult<S> norton_update(const MaterialState& st, const NortonParams& p, const std::array<S, 3>& deps, double dt) {
  using std::log;
  using std::sqrt;
  if (!(dt > 0.0)) throw ConfigError("time increment must be positive");
  const double g = p.shear_modulus(), lam = p.lame_lambda();
  const S tr = deps[0] + deps[1];
  std::array<S, 4> trial = {st.stress[0] + lam * tr + 2.0 * g * deps[0], st.stress[1] + lam * tr + 2.0 * g * deps[1],
                            st.stress[2] + lam * tr, st.stress[3] + g * deps[2]};
  const S mean = (trial[0] + trial[1] + trial[2]) / 3.0;
  std::array<S, 4> dev = {trial[0] - mean, trial[1] - mean, trial[2] - mean, trial[3]};
  const S q2 = 1.5 * (dev[0] * dev[0] + dev[1] * dev[1] + dev[2] * dev[2] + 2.0 * dev[3] * dev[3]);

  NortonResult<S> out{trial, S(st.alpha), 0};
  const double q2v = primal(q2);
  if (!(q2v > 0.0)) return out;
  const S q_tr = sqrt(q2);
  const double qv = primal(q_tr);
  const double zeta_n = p.reference_stress(st.alpha);
  const double hi = qv / (3.0 * g);
  const double ldt = std::log(dt);

  // h(dp) = log dp - log dt - N (log(q_tr - 3 g dp) - log zeta(alpha + dp))
  auto h = [&](double dpv) {
    return std::log(dpv) - ldt - p.N * (std::log(qv - 3.0 * g * dpv) - std::log(p.reference_stress(st.alpha + dpv)));
  };
  auto dh = [&](double dpv) {
    const double z = p.reference_stress(st.alpha + dpv);
    return 1.0 / dpv + p.N * 3.0 * g / (qv - 3.0 * g * dpv) + p.N * p.reference_stress_slope(st.alpha + dpv) / z;
  };

  const double guess_log = ldt + p.N * (std::log(qv) - std::log(zeta_n));
  if (guess_log < -700.0) return out;  // viscoplastic increment underflows: elastic step
  double dp = std::min(std::exp(guess_log), 0.5 * hi);
  double lo = 0.0, up = hi;
  bool converged = false;
  int it = 0;
  for (; it < 50; ++it) {
    const double r = h(dp);
    if (r > 0.0) up = dp; else lo = dp;
    if (std::abs(r) < 1e-13) {
      converged = true;
      break;
    }
    double next = dp - r / dh(dp);
    if (!(next > lo && next < up)) next = lo > 0.0 ? std::sqrt(lo * up) : 0.5 * (lo + up);
    if (std::abs(next - dp) <= 1e-15 * dp) {
      dp = next;
      converged = true;
      break;
    }
    dp = next;
  }
  if (!converged)
    throw ConvergenceError("Norton local Newton did not converge in 50 iterations", std::abs(h(dp)));
  out.iterations = it + 1;

  S dps(dp);
  if constexpr (ad::is_dual_v<S>) {
    const S r = log(S(dp)) - ldt - p.N * (log(q_tr - 3.0 * g * dp) - log(p.reference_stress(S(st.alpha + dp))));
    dps = S(dp) - r / dh(dp);
  }
  const S q = q_tr - 3.0 * g * dps;
  const S ratio = q / q_tr;
  for (int i = 0; i < 3; ++i) out.stress[i] = dev[i] * ratio + mean;
  out.stress[3] = dev[3] * ratio;
  out.alpha = st.alpha + dps;
  return out;
}

/// Stress (Voigt xx, yy, xy), consistent tangent and next state of one material point.
struct PointResponse {
  Vec3 stress;
  Mat3 tangent;
  MaterialState next;
  int iterations = 0;
};

inline PointResponse point_response(const PhaseLaw& law, const MaterialState& st, const Vec3& deps, double dt) {
  PointResponse r;
  if (const auto* e = std::get_if<LinearElastic>(&law)) {
    r.tangent = to_matrix(e->c);
    r.stress = Vec3(st.stress[0], st.stress[1], st.stress[3]) + r.tangent * deps;
    r.next.stress = {r.stress(0), r.stress(1), 0.0, r.stress(2)};
    return r;
  }
  using D = ad::Dual<double, 3>;
  const std::array<D, 3> x = {D::variable(deps(0), 0), D::variable(deps(1), 1), D::variable(deps(2), 2)};
  const auto res = norton_update<D>(st, std::get<NortonParams>(law), x, dt);
  const int voigt[3] = {0, 1, 3};
  for (int i = 0; i < 3; ++i) {
    r.stress(i) = res.stress[voigt[i]].v;
    for (int j = 0; j < 3; ++j) r.tangent(i, j) = res.stress[voigt[i]].d[j];
  }
  for (int i = 0; i < 4; ++i) r.next.stress[i] = res.stress[i].v;
  r.next.alpha = res.alpha.v;
  r.iterations = res.iterations;
  return r;
}

}  // namespace vdmn
