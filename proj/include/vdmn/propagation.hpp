#pragma once

// The variational DMN: Gaussian hyper-distributions on interface angles and
// leaf-pair volume fractions, analytic moment propagation through each
// laminate block, and the sampling mode that draws deterministic DMNs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vdmn/laminate.hpp"
#include "vdmn/riemannian.hpp"

namespace vdmn {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct NormalizationMeta {
  std::string reference = "C1_11";  // inputs are divided by phase-1 C11
  bool normalized = true;
};

/// Trainable hyper-variational parameters of a depth-N VDMN.
struct VdmnParams {
  int depth = 1;
  std::vector<double> weight_param;  // 2^N raw values; weights = softplus(raw)
  std::vector<double> angle_mean;    // 2^N - 1, level order
  std::vector<double> angle_logvar;  // 2^N - 1
  std::vector<double> df_logvar;     // 2^(N-1), leaf-parent layer
  std::vector<int> leaf_phase;
  NormalizationMeta normalization;

  /// Equal weights summing to one, angle means uniform in [0,1), log-variances at init_logvar.
  static VdmnParams initial(int depth, std::uint64_t seed, double init_logvar = -6.0) {
    if (depth < 1 || depth > 16) throw ConfigError("depth must lie in [1, 16]");
    VdmnParams p;
    p.depth = depth;
    p.weight_param.assign(num_leaves(depth), softplus_inverse(1.0 / num_leaves(depth)));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    p.angle_mean.resize(num_internal(depth));
    for (auto& t : p.angle_mean) t = u(rng);
    p.angle_logvar.assign(num_internal(depth), init_logvar);
    p.df_logvar.assign(num_leaves(depth) / 2, init_logvar);
    p.leaf_phase = alternating_phases(depth);
    return p;
  }

  std::vector<double> weights() const {
    std::vector<double> w(weight_param.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = softplus(weight_param[j]);
    return w;
  }

  std::size_t num_scalars() const {
    return weight_param.size() + angle_mean.size() + angle_logvar.size() + df_logvar.size();
  }

  /// Order: weight_param, angle_mean, angle_logvar, df_logvar.
  std::vector<double> flatten() const {
    std::vector<double> x;
    x.reserve(num_scalars());
    for (const auto* v : {&weight_param, &angle_mean, &angle_logvar, &df_logvar}) x.insert(x.end(), v->begin(), v->end());
    return x;
  }

  void unflatten(std::span<const double> x) {
    if (x.size() != num_scalars()) throw ConfigError("parameter vector has wrong length");
    std::size_t k = 0;
    for (auto* v : {&weight_param, &angle_mean, &angle_logvar, &df_logvar})
      for (auto& e : *v) e = x[k++];
  }

  /// Name of the flattened scalar at index k, for diagnostics.
  std::string scalar_name(std::size_t k) const {
    const std::pair<const char*, std::size_t> groups[] = {{"weight_param", weight_param.size()},
                                                          {"angle_mean", angle_mean.size()},
                                                          {"angle_logvar", angle_logvar.size()},
                                                          {"df_logvar", df_logvar.size()}};
    for (const auto& [name, n] : groups) {
      if (k < n) return std::string(name) + "[" + std::to_string(k) + "]";
      k -= n;
    }
    return "out-of-range";
  }

  void validate() const {
    if (depth < 1 || depth > 16) throw StructuralError("depth must lie in [1, 16]");
    auto check = [](const std::vector<double>& v, std::size_t n, const char* name) {
      if (v.size() != n) throw StructuralError(std::string(name) + " has length " + std::to_string(v.size()) +
                                               ", expected " + std::to_string(n));
      for (double x : v)
        if (!std::isfinite(x)) throw StructuralError(std::string(name) + " contains a non-finite value");
    };
    check(weight_param, num_leaves(depth), "leaf_weights");
    check(angle_mean, num_internal(depth), "angle_mean");
    check(angle_logvar, num_internal(depth), "angle_logvar");
    check(df_logvar, num_leaves(depth) / 2, "df_logvar");
    for (double x : angle_logvar)
      if (x > 700.0) throw StructuralError("angle_logvar overflows");
    for (double x : df_logvar)
      if (x > 700.0) throw StructuralError("df_logvar overflows");
    if (static_cast<int>(leaf_phase.size()) != num_leaves(depth)) throw StructuralError("leaf_phase has wrong length");
    DmnTopology t = mean_topology();
    t.validate();
  }

  /// Deterministic DMN at the hyper-distribution means.
  DmnTopology mean_topology() const {
    DmnTopology t;
    t.depth = depth;
    t.leaf_weights = weights();
    t.angles = angle_mean;
    t.leaf_phase = leaf_phase;
    return t;
  }
};

struct PropagationConfig {
  int mean_order = 1;
  bool second_order_theta = false;
  /// Second-order theta corrections are unstable; they run only with this explicit override.
  bool allow_second_order_theta = false;
  std::optional<Mat6> input_cov_1;
  std::optional<Mat6> input_cov_2;

  void validate() const {
    if (mean_order != 1 && mean_order != 2) throw ConfigError("mean_order must be 1 or 2");
    if (second_order_theta && !allow_second_order_theta)
      throw ConfigError("second-order theta corrections are disabled: they destabilize the propagated mean");
    if (second_order_theta && mean_order != 2) throw ConfigError("second_order_theta requires mean_order = 2");
  }
};

/// Covariance over distinct-entry coordinates for any scalar type, row-major.
template <class S>
using Cov6T = std::array<S, 36>;

template <class S>
struct GaussianT {
  Sym3<S> mean;
  Cov6T<S> cov{};
  bool has_cov = false;
};

inline Mat6 to_mat6(const Cov6T<double>& c) {
  Mat6 m;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) m(i, j) = c[i * 6 + j];
  return m;
}

inline Cov6T<double> from_mat6(const Mat6& m) {
  Cov6T<double> c;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) c[i * 6 + j] = m(i, j);
  return c;
}

namespace detail {

inline constexpr int kBlockIn = 14;
inline constexpr int kTheta = 12;
inline constexpr int kDf = 13;

/// Output mean and 6x14 Jacobian of one block w.r.t. (Ca, Cb, theta, f).
template <class S>
struct BlockJac {
  Sym3<S> value;
  std::array<std::array<S, kBlockIn>, 6> jac;
};

template <class S>
BlockJac<S> block_jacobian(const Sym3<S>& a, const Sym3<S>& b, const S& f, const S& theta) {
  using D = Dual<S, kBlockIn>;
  Sym3<D> ad, bd;
  for (int q = 0; q < 6; ++q) {
    ad.c[q] = D::variable(a.c[q], q);
    bd.c[q] = D::variable(b.c[q], 6 + q);
  }
  const Sym3<D> out = laminate<D>(ad, bd, D::variable(f, kDf), D::variable(theta, kTheta));
  BlockJac<S> r;
  for (int p = 0; p < 6; ++p) {
    r.value.c[p] = out.c[p].v;
    for (int k = 0; k < kBlockIn; ++k) r.jac[p][k] = out.c[p].d[k];
  }
  return r;
}

/// Same layout, but only the theta and f columns are filled (children without covariance).
template <class S>
BlockJac<S> block_jacobian_angles(const Sym3<S>& a, const Sym3<S>& b, const S& f, const S& theta) {
  using D = Dual<S, 2>;
  const Sym3<D> out = laminate<D>(cast_sym<D>(a), cast_sym<D>(b), D::variable(f, 1), D::variable(theta, 0));
  BlockJac<S> r;
  for (int p = 0; p < 6; ++p) {
    r.value.c[p] = out.c[p].v;
    r.jac[p].fill(S(0.0));
    r.jac[p][kTheta] = out.c[p].d[0];
    r.jac[p][kDf] = out.c[p].d[1];
  }
  return r;
}

/// Full 6x14x14 Hessian of one block.
template <class S>
std::array<std::array<std::array<S, kBlockIn>, kBlockIn>, 6> block_hessian(const Sym3<S>& a, const Sym3<S>& b,
                                                                           const S& f, const S& theta) {
  using D = Dual<S, kBlockIn>;
  using DD = Dual<D, kBlockIn>;
  auto seed = [](const S& x, int k) {
    DD r(D::variable(x, k));
    r.d[k] = D(S(1.0));
    return r;
  };
  Sym3<DD> ad, bd;
  for (int q = 0; q < 6; ++q) {
    ad.c[q] = seed(a.c[q], q);
    bd.c[q] = seed(b.c[q], 6 + q);
  }
  const Sym3<DD> out = laminate<DD>(ad, bd, seed(f, kDf), seed(theta, kTheta));
  std::array<std::array<std::array<S, kBlockIn>, kBlockIn>, 6> h;
  for (int p = 0; p < 6; ++p)
    for (int m = 0; m < kBlockIn; ++m)
      for (int k = 0; k < kBlockIn; ++k) h[p][m][k] = out.c[p].d[m].d[k];
  return h;
}

/// out += J_g S J_g^T where J_g are the Jacobian columns [off, off+6).
template <class S>
void add_sandwich(Cov6T<S>& out, const std::array<std::array<S, kBlockIn>, 6>& jac, int off, const Cov6T<S>& s) {
  S t[6][6];
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) {
      S acc(0.0);
      for (int r = 0; r < 6; ++r) acc += jac[p][off + r] * s[r * 6 + q];
      t[p][q] = acc;
    }
  for (int p = 0; p < 6; ++p)
    for (int q = p; q < 6; ++q) {
      S acc(0.0);
      for (int r = 0; r < 6; ++r) acc += t[p][r] * jac[q][off + r];
      out[p * 6 + q] += acc;
      if (q != p) out[q * 6 + p] += acc;
    }
}

template <class S>
void add_rank1(Cov6T<S>& out, const std::array<std::array<S, kBlockIn>, 6>& jac, int col, const S& var) {
  for (int p = 0; p < 6; ++p)
    for (int q = p; q < 6; ++q) {
      const S v = jac[p][col] * jac[q][col] * var;
      out[p * 6 + q] += v;
      if (q != p) out[q * 6 + p] += v;
    }
}

}  // namespace detail

/// Intermediates of one block kept for reverse-mode differentiation.
struct BlockTape {
  int layer = 0, j = 0;
  double wa = 0.0, wb = 0.0, theta = 0.0, var_theta = 0.0, var_df = 0.0;
  bool leaf_parent = false;
  Stiffness a, b;
  Mat6 cov_a = Mat6::Zero(), cov_b = Mat6::Zero();
  bool has_cov_a = false, has_cov_b = false;
  Eigen::Matrix<double, 6, 14> jac;
};

/// One block of moment propagation for any scalar type.
///
/// ga, gb: child Gaussians; wa, wb: subtree weights; var_df < 0 disables the
/// volume-fraction perturbation (non leaf-parent blocks).
template <class S>
GaussianT<S> propagate_block_generic(const GaussianT<S>& ga, const GaussianT<S>& gb, const S& wa, const S& wb,
                                     const S& theta, const S& var_theta, const S& var_df, bool use_df,
                                     const PropagationConfig& cfg, BlockTape* tape = nullptr) {
  const S sum = wa + wb;
  if (!(primal(sum) > 0.0)) throw StructuralError("all-zero sibling pair");
  const S f = wa / sum;
  const bool full = ga.has_cov || gb.has_cov || cfg.mean_order == 2;
  const auto bj = full ? detail::block_jacobian<S>(ga.mean, gb.mean, f, theta)
                       : detail::block_jacobian_angles<S>(ga.mean, gb.mean, f, theta);
  GaussianT<S> out;
  out.mean = bj.value;
  if (ga.has_cov) detail::add_sandwich(out.cov, bj.jac, 0, ga.cov);
  if (gb.has_cov) detail::add_sandwich(out.cov, bj.jac, 6, gb.cov);
  detail::add_rank1(out.cov, bj.jac, detail::kTheta, var_theta);
  if (use_df) detail::add_rank1(out.cov, bj.jac, detail::kDf, var_df);
  out.has_cov = true;

  if (cfg.mean_order == 2) {
    const auto h = detail::block_hessian<S>(ga.mean, gb.mean, f, theta);
    for (int p = 0; p < 6; ++p) {
      S corr(0.0);
      for (int q = 0; q < 6; ++q)
        for (int r = 0; r < 6; ++r) {
          if (ga.has_cov) corr += h[p][q][r] * ga.cov[q * 6 + r];
          if (gb.has_cov) corr += h[p][6 + q][6 + r] * gb.cov[q * 6 + r];
        }
      if (use_df) corr += h[p][detail::kDf][detail::kDf] * var_df;
      if (cfg.second_order_theta) corr += h[p][detail::kTheta][detail::kTheta] * var_theta;
      out.mean.c[p] += 0.5 * corr;
    }
    const Stiffness m = primal(out.mean);
    const Vec3 ev = eigenvalues(m);
    if (!(ev(0) > 0.0))
      throw StabilityError("second-order mean left the positive-definite cone (smallest eigenvalue " +
                           std::to_string(ev(0)) + "); use mean_order = 1");
  }

  if constexpr (std::is_same_v<S, double>) {
    if (tape) {
      tape->wa = wa;
      tape->wb = wb;
      tape->theta = theta;
      tape->var_theta = var_theta;
      tape->var_df = use_df ? var_df : 0.0;
      tape->leaf_parent = use_df;
      tape->a = ga.mean;
      tape->b = gb.mean;
      tape->has_cov_a = ga.has_cov;
      tape->has_cov_b = gb.has_cov;
      if (ga.has_cov) tape->cov_a = to_mat6(ga.cov);
      if (gb.has_cov) tape->cov_b = to_mat6(gb.cov);
      for (int p = 0; p < 6; ++p)
        for (int k = 0; k < detail::kBlockIn; ++k) tape->jac(p, k) = bj.jac[p][k];
    }
  }
  return out;
}

inline GaussianStiffness to_gaussian(const GaussianT<double>& g) { return {g.mean, to_mat6(g.cov)}; }

inline GaussianT<double> from_gaussian(const GaussianStiffness& g) {
  GaussianT<double> r;
  r.mean = g.mean;
  r.cov = from_mat6(g.cov);
  r.has_cov = !g.cov.isZero(0.0);
  return r;
}

/// Single block with double inputs.
inline GaussianStiffness propagate_block(const GaussianStiffness& ga, const GaussianStiffness& gb, double wa, double wb,
                                         double mu_theta, double var_theta, double var_df,
                                         const PropagationConfig& cfg = {}) {
  cfg.validate();
  if (var_theta < 0.0 || var_df < 0.0) throw ConfigError("variances must be nonnegative");
  return to_gaussian(propagate_block_generic<double>(from_gaussian(ga), from_gaussian(gb), wa, wb, mu_theta,
                                                     var_theta, var_df, true, cfg));
}

/// Parameter values in a form usable by any scalar type. Weights are already
/// transformed (nonnegative); variances already exponentiated.
template <class S>
struct ParamView {
  int depth = 1;
  std::vector<S> weights, angle_mean, angle_var, df_var;
  std::vector<int> leaf_phase;
};

inline ParamView<double> make_view(const VdmnParams& p) {
  ParamView<double> v;
  v.depth = p.depth;
  v.weights = p.weights();
  v.angle_mean = p.angle_mean;
  v.angle_var.resize(p.angle_logvar.size());
  for (std::size_t k = 0; k < v.angle_var.size(); ++k) v.angle_var[k] = std::exp(p.angle_logvar[k]);
  v.df_var.resize(p.df_logvar.size());
  for (std::size_t k = 0; k < v.df_var.size(); ++k) v.df_var[k] = std::exp(p.df_logvar[k]);
  v.leaf_phase = p.leaf_phase;
  return v;
}

template <class S>
ParamView<S> cast_view(const ParamView<double>& v) {
  ParamView<S> r;
  r.depth = v.depth;
  r.weights.assign(v.weights.begin(), v.weights.end());
  r.angle_mean.assign(v.angle_mean.begin(), v.angle_mean.end());
  r.angle_var.assign(v.angle_var.begin(), v.angle_var.end());
  r.df_var.assign(v.df_var.begin(), v.df_var.end());
  r.leaf_phase = v.leaf_phase;
  return r;
}

/// Bottom-up propagation through the whole tree. Tape (double only) receives
/// one entry per internal node in level order.
template <class S>
GaussianT<S> propagate_tree_generic(const ParamView<S>& pv, const GaussianT<S>& in1, const GaussianT<S>& in2,
                                    const PropagationConfig& cfg, std::vector<BlockTape>* tape = nullptr) {
  const int n = pv.depth;
  const int nl = num_leaves(n);
  if (tape) tape->assign(num_internal(n), BlockTape{});
  std::vector<GaussianT<S>> cur(nl);
  std::vector<S> w = pv.weights;
  for (int j = 0; j < nl; ++j) cur[j] = pv.leaf_phase[j] == 1 ? in1 : in2;
  for (int layer = n - 1; layer >= 0; --layer) {
    const int width = 1 << layer;
    const bool leaf_parent = layer == n - 1;
    for (int j = 0; j < width; ++j) {
      const int k = node_index(layer, j);
      BlockTape* bt = tape ? &(*tape)[k] : nullptr;
      if (bt) {
        bt->layer = layer;
        bt->j = j;
      }
      try {
        cur[j] = propagate_block_generic<S>(cur[2 * j], cur[2 * j + 1], w[2 * j], w[2 * j + 1], pv.angle_mean[k],
                                            pv.angle_var[k], leaf_parent ? pv.df_var[j] : S(0.0), leaf_parent, cfg,
                                            bt);
      } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(std::string(e.what()) + " at " + node_label(layer, j));
      } catch (const StructuralError& e) {
        throw StructuralError(std::string(e.what()) + " at " + node_label(layer, j));
      } catch (const StabilityError& e) {
        throw StabilityError(std::string(e.what()) + " at " + node_label(layer, j));
      }
      w[j] = w[2 * j] + w[2 * j + 1];
    }
  }
  return cur[0];
}

inline GaussianT<double> leaf_input(const Stiffness& c, const std::optional<Mat6>& cov) {
  GaussianT<double> g;
  g.mean = c;
  if (cov) {
    g.cov = from_mat6(*cov);
    g.has_cov = true;
  }
  return g;
}

/// Root Gaussian of C^h given deterministic (or optionally Gaussian) phase stiffnesses.
inline GaussianStiffness propagate_tree(const VdmnParams& params, const Stiffness& c1, const Stiffness& c2,
                                        const PropagationConfig& cfg = {}) {
  cfg.validate();
  params.validate();
  const auto pv = make_view(params);
  const auto g = propagate_tree_generic<double>(pv, leaf_input(c1, cfg.input_cov_1), leaf_input(c2, cfg.input_cov_2),
                                                cfg);
  GaussianStiffness out = to_gaussian(g);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

/// Draws one deterministic DMN from the hyper-distributions.
inline DmnTopology sample_dmn(const VdmnParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nrm(0.0, 1.0);
  DmnTopology t = params.mean_topology();
  for (std::size_t k = 0; k < t.angles.size(); ++k) {
    const double sd = std::sqrt(std::exp(params.angle_logvar[k]));
    const double z = nrm(rng);
    if (sd > 0.0) t.angles[k] += sd * z;
  }
  for (std::size_t j = 0; j < params.df_logvar.size(); ++j) {
    const double sd = std::sqrt(std::exp(params.df_logvar[j]));
    const double z = nrm(rng);
    if (!(sd > 0.0)) continue;
    const double wa = t.leaf_weights[2 * j], wb = t.leaf_weights[2 * j + 1];
    const double sum = wa + wb;
    const double f = std::clamp(wa / sum + sd * z, 1e-4, 1.0 - 1e-4);
    t.leaf_weights[2 * j] = f * sum;
    t.leaf_weights[2 * j + 1] = (1.0 - f) * sum;
  }
  return t;
}

/// Uncertain inputs pushed through a stochastic map by the law of total
/// variance: cov = J Sx J^T + S^f(m) + 0.5 sum_ab d2 S^f / dx_a dx_b Sx_ab.
///
/// fn is called with T = Dual<Dual<double,K>,K> and must return GaussianT<T>.
template <int K, class Fn>
GaussianStiffness total_variance_propagate(const Eigen::Matrix<double, K, 1>& mean_x,
                                           const Eigen::Matrix<double, K, K>& cov_x, Fn&& fn,
                                           bool hessian_term = true) {
  using D = Dual<double, K>;
  using DD = Dual<D, K>;
  std::array<DD, K> x;
  for (int k = 0; k < K; ++k) {
    x[k] = DD(D::variable(mean_x(k), k));
    x[k].d[k] = D(1.0);
  }
  const GaussianT<DD> g = fn(x);
  GaussianStiffness out;
  Eigen::Matrix<double, 6, K> jac;
  for (int p = 0; p < 6; ++p) {
    out.mean.c[p] = g.mean.c[p].v.v;
    for (int k = 0; k < K; ++k) jac(p, k) = g.mean.c[p].v.d[k];
  }
  Mat6 cov = jac * cov_x * jac.transpose();
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) {
      const DD& s = g.cov[p * 6 + q];
      double v = s.v.v;
      if (hessian_term)
        for (int a = 0; a < K; ++a)
          for (int b = 0; b < K; ++b) v += 0.5 * s.d[a].d[b] * cov_x(a, b);
      cov(p, q) += v;
    }
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat6> es(cov);
  if (es.eigenvalues()(0) < 0.0) {
    const double tol = 1e-12 * std::max(std::abs(es.eigenvalues()(5)), 1e-300);
    if (es.eigenvalues()(0) < -tol) log::warn("total-variance covariance not PSD; clipping negative eigenvalues");
    const Vec6 lam = es.eigenvalues().cwiseMax(0.0);
    cov = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  }
  out.cov = cov;
  return out;
}

}  // namespace vdmn
