#pragma once

#include <random>

#include "vdmn/vdmn.hpp"

namespace vdmn::testing {

inline Stiffness random_spd(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 l;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) l(i, j) = u(rng);
  Mat3 a = l * l.transpose() + 0.2 * Mat3::Identity();
  return from_matrix(scale * 0.5 * (a + a.transpose()));
}

inline DmnTopology random_topology(std::mt19937_64& rng, int depth) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DmnTopology t = DmnTopology::uniform(depth);
  for (auto& w : t.leaf_weights) w = 0.1 + u(rng);
  for (auto& a : t.angles) a = u(rng);
  return t;
}

inline VdmnParams random_params(std::mt19937_64& rng, int depth, double logvar_lo = -7.0, double logvar_hi = -4.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VdmnParams p = VdmnParams::initial(depth, rng());
  for (auto& w : p.weight_param) w = -1.0 + 2.0 * u(rng);
  for (auto& x : p.angle_logvar) x = logvar_lo + (logvar_hi - logvar_lo) * u(rng);
  for (auto& x : p.df_logvar) x = logvar_lo + (logvar_hi - logvar_lo) * u(rng);
  return p;
}

inline double rel_diff(const Stiffness& a, const Stiffness& b) {
  return (to_vec(a) - to_vec(b)).norm() / std::max(to_vec(b).norm(), 1e-300);
}

/// Two-layer laminate solved directly: unknown phase strains obey the mixture
/// rule, normal traction continuity and tangential strain continuity.
inline Stiffness laminate_oracle(const Stiffness& ca, const Stiffness& cb, double fa, double theta) {
  const double c = std::cos(2.0 * M_PI * theta), s = std::sin(2.0 * M_PI * theta);
  const Mat3 a = to_matrix(ca), b = to_matrix(cb);
  const double fb = 1.0 - fa;
  // traction (sigma . n) in Voigt components for n = (c, s)
  Eigen::Matrix<double, 2, 3> tr;
  tr << c, 0.0, s, 0.0, s, c;
  // tangential normal strain for t = (-s, c), engineering shear
  Eigen::Matrix<double, 1, 3> tang;
  tang << s * s, c * c, -s * c;
  Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Zero();
  m.block<3, 3>(0, 0) = fa * Mat3::Identity();
  m.block<3, 3>(0, 3) = fb * Mat3::Identity();
  m.block<2, 3>(3, 0) = tr * a;
  m.block<2, 3>(3, 3) = -tr * b;
  m.block<1, 3>(5, 0) = tang;
  m.block<1, 3>(5, 3) = -tang;
  Mat3 ch;
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
    rhs(k) = 1.0;
    const Eigen::Matrix<double, 6, 1> e = m.fullPivLu().solve(rhs);
    ch.col(k) = fa * a * e.head<3>() + fb * b * e.tail<3>();
  }
  return from_matrix(0.5 * (ch + ch.transpose()));
}

}  // namespace vdmn::testing
