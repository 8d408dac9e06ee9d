#pragma once

// Deterministic laminate homogenization: the rank-1 unit operation and its
// recursive composition over a binary tree (the offline DMN).

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vdmn/voigt.hpp"

namespace vdmn {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Orientation matrix H(theta), 3x2. Columns map a traction-side 2-vector onto
/// Voigt components for the interface normal n = (cos 2 pi theta, sin 2 pi theta).
inline Eigen::Matrix<double, 3, 2> orientation_matrix(double theta) {
  const double c = std::cos(kTwoPi * theta);
  const double s = std::sin(kTwoPi * theta);
  Eigen::Matrix<double, 3, 2> h;
  h << c, 0.0, 0.0, s, s, c;
  return h;
}

/// Unit laminate homogenization for any scalar type (double or nested Dual).
///
/// C^h = fa Ca + fb Cb - fa fb (Ca - Cb) H K^{-1} H^T (Ca - Cb),
/// K = H^T (fa Cb + fb Ca) H. Volume fractions of exactly 0 or 1 return the
/// surviving phase.
template <class S>
Sym3<S> laminate(const Sym3<S>& a, const Sym3<S>& b, const S& fa, const S& theta) {
  using std::cos;
  using std::sin;
  const double fav = primal(fa);
  if (!(fav >= 0.0 && fav <= 1.0))
    throw DegenerateInputError("volume fraction " + std::to_string(fav) + " outside [0, 1]");
  if (fav == 1.0) return a;
  if (fav == 0.0) return b;

  const S fb = 1.0 - fa;
  const S ang = theta * kTwoPi;
  const S c = cos(ang);
  const S s = sin(ang);

  Sym3<S> m;
  for (int p = 0; p < 6; ++p) m.c[p] = fa * b.c[p] + fb * a.c[p];

  const S cc = c * c;
  const S ss = s * s;
  const S cs = c * s;
  const S k11 = cc * m(0, 0) + 2.0 * cs * m(0, 2) + ss * m(2, 2);
  const S k12 = cs * m(0, 1) + cc * m(0, 2) + ss * m(1, 2) + cs * m(2, 2);
  const S k22 = ss * m(1, 1) + 2.0 * cs * m(1, 2) + cc * m(2, 2);
  const S det = k11 * k22 - k12 * k12;
  {
    const double n2 = primal(k11) * primal(k11) + 2.0 * primal(k12) * primal(k12) + primal(k22) * primal(k22);
    if (!(std::abs(primal(det)) > 1e-14 * n2))
      throw DegenerateInputError("singular laminate interface operator (det " + std::to_string(primal(det)) + ")");
  }

  Sym3<S> d = a - b;
  S g1[3], g2[3];
  for (int j = 0; j < 3; ++j) {
    g1[j] = c * d(0, j) + s * d(2, j);
    g2[j] = s * d(1, j) + c * d(2, j);
  }
  const S inv_det = 1.0 / det;
  S p1[3], p2[3];
  for (int j = 0; j < 3; ++j) {
    p1[j] = (k22 * g1[j] - k12 * g2[j]) * inv_det;
    p2[j] = (k11 * g2[j] - k12 * g1[j]) * inv_det;
  }
  const S fafb = fa * fb;
  Sym3<S> out;
  for (int p = 0; p < 6; ++p) {
    const auto [i, j] = kSymPairs[p];
    out.c[p] = fa * a.c[p] + fb * b.c[p] - fafb * (g1[i] * p1[j] + g2[i] * p2[j]);
  }
  return out;
}

inline Stiffness unit_homogenize(const Stiffness& ca, const Stiffness& cb, double fa, double theta) {
  return laminate<double>(ca, cb, fa, theta);
}

inline constexpr int num_leaves(int depth) { return 1 << depth; }
inline constexpr int num_internal(int depth) { return (1 << depth) - 1; }
/// Level-order index of internal node j on layer i (root is layer 0).
inline constexpr int node_index(int layer, int j) { return (1 << layer) - 1 + j; }

/// Leaves alternate phases: even index -> phase 1, odd -> phase 2.
inline std::vector<int> alternating_phases(int depth) {
  std::vector<int> ph(num_leaves(depth));
  for (int j = 0; j < num_leaves(depth); ++j) ph[j] = (j % 2 == 0) ? 1 : 2;
  return ph;
}

/// A deterministic DMN: leaf weights, one interface angle per internal node.
struct DmnTopology {
  int depth = 1;
  std::vector<double> leaf_weights;  // 2^depth, >= 0
  std::vector<double> angles;        // 2^depth - 1, level order
  std::vector<int> leaf_phase;       // 1 or 2 per leaf

  static DmnTopology uniform(int depth) {
    DmnTopology t;
    t.depth = depth;
    t.leaf_weights.assign(num_leaves(depth), 1.0);
    t.angles.assign(num_internal(depth), 0.0);
    t.leaf_phase = alternating_phases(depth);
    return t;
  }

  void validate() const {
    if (depth < 1) throw StructuralError("depth must be >= 1");
    if (static_cast<int>(leaf_weights.size()) != num_leaves(depth))
      throw StructuralError("leaf_weights has wrong length");
    if (static_cast<int>(angles.size()) != num_internal(depth)) throw StructuralError("angles has wrong length");
    if (static_cast<int>(leaf_phase.size()) != num_leaves(depth))
      throw StructuralError("leaf_phase has wrong length");
    bool has1 = false, has2 = false;
    for (int j = 0; j < num_leaves(depth); ++j) {
      if (!(leaf_weights[j] >= 0.0) || !std::isfinite(leaf_weights[j]))
        throw StructuralError("leaf weight " + std::to_string(j) + " is negative or non-finite");
      if (leaf_phase[j] != 1 && leaf_phase[j] != 2) throw StructuralError("leaf phase must be 1 or 2");
      if (leaf_weights[j] > 0.0) (leaf_phase[j] == 1 ? has1 : has2) = true;
    }
    if (!has1 || !has2) throw StructuralError("both phases need a leaf with positive weight");
  }
};

inline std::string node_label(int layer, int j) {
  return "node (" + std::to_string(layer) + "," + std::to_string(j) + ")";
}

/// Bottom-up tree evaluation for any scalar type. weights and angles are
/// indexed like DmnTopology.
template <class S>
Sym3<S> tree_homogenize_generic(int depth, std::span<const S> weights, std::span<const S> angles,
                                std::span<const int> phases, const Sym3<S>& c1, const Sym3<S>& c2) {
  const int nl = num_leaves(depth);
  std::vector<Sym3<S>> cur(nl);
  std::vector<S> w(weights.begin(), weights.end());
  for (int j = 0; j < nl; ++j) cur[j] = phases[j] == 1 ? c1 : c2;
  for (int layer = depth - 1; layer >= 0; --layer) {
    const int width = 1 << layer;
    for (int j = 0; j < width; ++j) {
      const S wa = w[2 * j];
      const S wb = w[2 * j + 1];
      const S sum = wa + wb;
      if (!(primal(sum) > 0.0)) throw StructuralError("all-zero sibling pair below " + node_label(layer, j));
      try {
        cur[j] = laminate<S>(cur[2 * j], cur[2 * j + 1], wa / sum, angles[node_index(layer, j)]);
      } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(std::string(e.what()) + " at " + node_label(layer, j));
      }
      w[j] = sum;
    }
  }
  return cur[0];
}

template <class S>
Sym3<S> tree_homogenize(const DmnTopology& topo, const Sym3<S>& c1, const Sym3<S>& c2) {
  std::vector<S> w(topo.leaf_weights.begin(), topo.leaf_weights.end());
  std::vector<S> th(topo.angles.begin(), topo.angles.end());
  return tree_homogenize_generic<S>(topo.depth, w, th, topo.leaf_phase, c1, c2);
}

inline Stiffness tree_homogenize(const DmnTopology& topo, const Stiffness& c1, const Stiffness& c2) {
  topo.validate();
  return tree_homogenize<double>(topo, c1, c2);
}

/// Phase-1 share of the total leaf weight.
inline double leaf_volume_fraction(const DmnTopology& topo) {
  double w1 = 0.0, total = 0.0;
  for (std::size_t j = 0; j < topo.leaf_weights.size(); ++j) {
    total += topo.leaf_weights[j];
    if (topo.leaf_phase[j] == 1) w1 += topo.leaf_weights[j];
  }
  if (!(total > 0.0)) throw StructuralError("zero total leaf weight");
  return w1 / total;
}

}  // namespace vdmn
