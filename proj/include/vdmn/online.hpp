#pragma once

// Online mode: incremental nonlinear simulation through a laminate tree.
//
// Each interface carries a jump vector a (2 components). For a node with
// strain increment e, the children receive e + fb N a and e - fa N a, so the
// volume average is e by construction; a is chosen so that the traction
// N^T (sigma_a - sigma_b) vanishes. All jump vectors in the tree are solved
// together by Newton iteration: leaves are linearized, the affine responses
// are condensed bottom-up (which reproduces the laminate formula on the
// tangents), and the root strain is pushed back down to update every jump.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vdmn/laminate.hpp"
#include "vdmn/norton.hpp"
#include "vdmn/propagation.hpp"

namespace vdmn {

using Vec2 = Eigen::Vector2d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

struct OnlineOptions {
  double tolerance = 1e-10;  // traction residual relative to the stress scale
  int max_iterations = 50;
};

/// Macro response of a subtree to a strain increment: stress and tangent.
using ChildResponse = std::function<std::pair<Vec3, Mat3>(const Vec3& deps)>;

struct LaminateStep {
  Vec3 stress;
  Mat3 tangent;  // consistent macro tangent at convergence
  Vec3 deps_a, deps_b;
  Vec2 jump;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

/// Condensed affine node response sigma = r + T e, with jump a = a0 + A e.
struct Affine {
  Vec3 r = Vec3::Zero();
  Mat3 t = Mat3::Zero();
  Vec2 a0 = Vec2::Zero();
  Eigen::Matrix<double, 2, 3> a = Eigen::Matrix<double, 2, 3>::Zero();
};

inline Affine condense(const Affine& ca, const Affine& cb, double fa, const Mat32& n) {
  const double fb = 1.0 - fa;
  const Eigen::Matrix2d k = n.transpose() * (fb * ca.t + fa * cb.t) * n;
  const Eigen::PartialPivLU<Eigen::Matrix2d> lu(k);
  if (!(std::abs(k.determinant()) > 1e-14 * k.squaredNorm()))
    throw DegenerateInputError("singular interface tangent");
  const Mat3 dt = ca.t - cb.t;
  Affine out;
  out.a0 = -lu.solve(n.transpose() * (ca.r - cb.r));
  out.a = -lu.solve(n.transpose() * dt);
  out.r = fa * ca.r + fb * cb.r + fa * fb * dt * n * out.a0;
  out.t = fa * ca.t + fb * cb.t + fa * fb * dt * n * out.a;
  return out;
}

}  // namespace detail

/// Solves one interface: finds the jump so that both children are in traction
/// equilibrium under macro strain increment deps.
inline LaminateStep laminate_online_step(const ChildResponse& child_a, const ChildResponse& child_b, double fa,
                                         double theta, const Vec3& deps, const OnlineOptions& opt = {}) {
  if (!(fa > 0.0 && fa < 1.0)) throw DegenerateInputError("online laminate needs a volume fraction in (0, 1)");
  const double fb = 1.0 - fa;
  const Mat32 n = orientation_matrix(theta);
  LaminateStep s;
  s.jump = Vec2::Zero();
  for (int it = 0; it < opt.max_iterations; ++it) {
    s.deps_a = deps + fb * n * s.jump;
    s.deps_b = deps - fa * n * s.jump;
    const auto [sa, ta] = child_a(s.deps_a);
    const auto [sb, tb] = child_b(s.deps_b);
    const Vec2 res = n.transpose() * (sa - sb);
    const double scale = std::max({sa.cwiseAbs().maxCoeff(), sb.cwiseAbs().maxCoeff(), 1e-300});
    s.residual = res.cwiseAbs().maxCoeff() / scale;
    detail::Affine aa{sa - ta * s.deps_a, ta, {}, {}}, ab{sb - tb * s.deps_b, tb, {}, {}};
    const detail::Affine c = detail::condense(aa, ab, fa, n);
    s.stress = fa * sa + fb * sb;
    s.tangent = c.t;
    s.iterations = it;
    if (s.residual <= opt.tolerance || res.isZero(0.0)) return s;
    s.jump = c.a0 + c.a * deps;
  }
  throw ConvergenceError("interface Newton did not converge", s.residual);
}

/// Prescribed strain-rate path. In mixed mode only rate(0) (xx) is imposed and
/// sigma_yy = sigma_xy = 0 is enforced instead.
struct LoadPath {
  Vec3 rate = Vec3(0.003, 0.0, 0.0);  // xx, yy, gamma_xy per unit time
  double total_time = 0.02 / 0.003;
  int steps = 100;
  bool mixed = false;

  void validate() const {
    if (steps < 1) throw ConfigError("load path needs at least one step");
    if (!(total_time > 0.0)) throw ConfigError("load path total time must be positive");
    if (!rate.allFinite()) throw ConfigError("load path rate must be finite");
  }
  double dt() const { return total_time / steps; }
};

struct HistoryRow {
  int step = 0;
  double time = 0.0;
  Vec3 strain = Vec3::Zero();  // xx, yy, gamma_xy
  Vec3 stress = Vec3::Zero();  // xx, yy, xy
  int iterations = 0;          // inner Newton (strain control) or exterior Newton (mixed)
  double residual = 0.0;
};

struct SimulationResult {
  std::vector<HistoryRow> history;
  bool ok = true;
  std::string error;
};

/// Online state of one deterministic DMN.
class OnlineDmn {
 public:
  OnlineDmn(const DmnTopology& topo, PhaseLaw law1, PhaseLaw law2, OnlineOptions opt = {})
      : topo_(topo), law1_(std::move(law1)), law2_(std::move(law2)), opt_(opt) {
    topo_.validate();
    if (const auto* n = std::get_if<NortonParams>(&law1_)) n->validate();
    if (const auto* n = std::get_if<NortonParams>(&law2_)) n->validate();
    const int nl = num_leaves(topo_.depth);
    states_.assign(nl, MaterialState{});
    fa_.assign(num_internal(topo_.depth), 0.5);
    normals_.resize(num_internal(topo_.depth));
    std::vector<double> w = topo_.leaf_weights;
    for (int layer = topo_.depth - 1; layer >= 0; --layer)
      for (int j = 0; j < (1 << layer); ++j) {
        const double sum = w[2 * j] + w[2 * j + 1];
        if (!(sum > 0.0)) throw StructuralError("all-zero sibling pair below " + node_label(layer, j));
        const int k = node_index(layer, j);
        fa_[k] = w[2 * j] / sum;
        normals_[k] = orientation_matrix(topo_.angles[k]);
        w[j] = sum;
      }
  }

  struct Step {
    Vec3 stress;
    Mat3 tangent;
    int iterations = 0;
    double residual = 0.0;
    std::vector<PointResponse> leaves;
  };

  /// Solves the tree for a macro strain increment without committing state.
  Step trial(const Vec3& deps, double dt) const {
    const int n = topo_.depth, nl = num_leaves(n), ni = num_internal(n);
    std::vector<Vec3> leaf_eps(nl, Vec3::Zero());
    std::vector<detail::Affine> node(ni);
    std::vector<Vec3> node_eps(ni);
    std::vector<Vec3> sig(2 * nl);  // scratch for bottom-up stresses
    Step s;
    s.leaves.resize(nl);
    for (int it = 0; it <= opt_.max_iterations; ++it) {
      for (int j = 0; j < nl; ++j) {
        try {
          s.leaves[j] = point_response(topo_.leaf_phase[j] == 1 ? law1_ : law2_, states_[j], leaf_eps[j], dt);
        } catch (const ConvergenceError& e) {
          throw ConvergenceError(std::string(e.what()) + " at leaf " + std::to_string(j), e.residual());
        }
      }
      // bottom-up: stresses, residuals and condensed affine responses
      double scale = 0.0, worst = 0.0;
      int worst_node = 0;
      std::vector<detail::Affine> cur(nl);
      std::vector<Vec3> cur_sig(nl);
      for (int j = 0; j < nl; ++j) {
        const auto& lr = s.leaves[j];
        cur[j] = {lr.stress - lr.tangent * leaf_eps[j], lr.tangent, {}, {}};
        cur_sig[j] = lr.stress;
        scale = std::max(scale, lr.stress.cwiseAbs().maxCoeff());
      }
      for (int layer = n - 1; layer >= 0; --layer)
        for (int j = 0; j < (1 << layer); ++j) {
          const int k = node_index(layer, j);
          const double fa = fa_[k];
          const double res = (normals_[k].transpose() * (cur_sig[2 * j] - cur_sig[2 * j + 1])).cwiseAbs().maxCoeff();
          // a zero-volume child does not need equilibrium
          if (fa > 0.0 && fa < 1.0 && res > worst) {
            worst = res;
            worst_node = k;
          }
          try {
            node[k] = detail::condense(cur[2 * j], cur[2 * j + 1], fa, normals_[k]);
          } catch (const DegenerateInputError& e) {
            throw DegenerateInputError(std::string(e.what()) + " at " + label(k));
          }
          cur_sig[j] = fa * cur_sig[2 * j] + (1.0 - fa) * cur_sig[2 * j + 1];
          cur[j] = node[k];
        }
      s.stress = cur_sig[0];
      s.tangent = node[0].t;
      s.residual = scale > 0.0 ? worst / scale : worst;
      s.iterations = it;
      if (it > 0 && (s.residual <= opt_.tolerance || worst == 0.0)) return s;
      if (it == opt_.max_iterations)
        throw ConvergenceError("online Newton did not converge at " + label(worst_node), s.residual);
      // top-down: new jumps and leaf strain increments
      node_eps[0] = deps;
      for (int layer = 0; layer < n; ++layer)
        for (int j = 0; j < (1 << layer); ++j) {
          const int k = node_index(layer, j);
          const Vec3& e = node_eps[k];
          const Vec2 a = node[k].a0 + node[k].a * e;
          const double fa = fa_[k];
          const Vec3 ea = e + (1.0 - fa) * normals_[k] * a, eb = e - fa * normals_[k] * a;
          if (layer == n - 1) {
            leaf_eps[2 * j] = ea;
            leaf_eps[2 * j + 1] = eb;
          } else {
            node_eps[node_index(layer + 1, 2 * j)] = ea;
            node_eps[node_index(layer + 1, 2 * j + 1)] = eb;
          }
        }
    }
    throw ConvergenceError("online Newton did not converge", s.residual);
  }

  void commit(const Step& s) {
    for (std::size_t j = 0; j < states_.size(); ++j) states_[j] = s.leaves[j].next;
  }

  Step step(const Vec3& deps, double dt) {
    Step s = trial(deps, dt);
    commit(s);
    return s;
  }

  const std::vector<MaterialState>& leaf_states() const { return states_; }
  const DmnTopology& topology() const { return topo_; }

 private:
  std::string label(int k) const {
    int layer = 0;
    while (node_index(layer + 1, 0) <= k) ++layer;
    return node_label(layer, k - node_index(layer, 0));
  }

  DmnTopology topo_;
  PhaseLaw law1_, law2_;
  OnlineOptions opt_;
  std::vector<MaterialState> states_;
  std::vector<double> fa_;
  std::vector<Mat32> normals_;
};

/// Fully strain-controlled simulation.
inline SimulationResult online_simulate(const DmnTopology& topo, const PhaseLaw& law1, const PhaseLaw& law2,
                                        const LoadPath& path, const OnlineOptions& opt = {}) {
  path.validate();
  if (path.mixed) throw ConfigError("online_simulate needs a fully prescribed path; use mixed_bc_simulate");
  OnlineDmn dmn(topo, law1, law2, opt);
  SimulationResult out;
  const double dt = path.dt();
  Vec3 eps = Vec3::Zero();
  for (int k = 1; k <= path.steps; ++k) {
    const Vec3 deps = path.rate * dt;
    try {
      const auto s = dmn.step(deps, dt);
      eps += deps;
      out.history.push_back({k, k * dt, eps, s.stress, s.iterations, s.residual});
    } catch (const Error& e) {
      out.ok = false;
      out.error = "step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  return out;
}

struct MixedOptions {
  double tolerance = 1e-12;  // sigma_yy, sigma_xy relative to the stress scale
  int max_outer = 25;
};

/// Uniaxial-stress path: eps_xx rate prescribed, sigma_yy = sigma_xy = 0 enforced by
/// an exterior Newton loop on the free strain increments.
inline SimulationResult mixed_bc_simulate(const DmnTopology& topo, const PhaseLaw& law1, const PhaseLaw& law2,
                                          const LoadPath& path, const OnlineOptions& opt = {},
                                          const MixedOptions& mopt = {}) {
  path.validate();
  OnlineOptions inner = opt;
  inner.tolerance = std::min(inner.tolerance, 1e-13);
  OnlineDmn dmn(topo, law1, law2, inner);
  SimulationResult out;
  const double dt = path.dt();
  Vec3 eps = Vec3::Zero();
  Eigen::Vector2d free_prev = Eigen::Vector2d::Zero();
  for (int k = 1; k <= path.steps; ++k) {
    Vec3 deps(path.rate(0) * dt, free_prev(0), free_prev(1));
    try {
      OnlineDmn::Step s;
      int outer = 0;
      double res = 0.0;
      for (;; ++outer) {
        s = dmn.trial(deps, dt);
        const Eigen::Vector2d sf(s.stress(1), s.stress(2));
        const double scale = std::max(s.stress.cwiseAbs().maxCoeff(), 1e-300);
        res = sf.cwiseAbs().maxCoeff() / scale;
        if (res <= mopt.tolerance || sf.isZero(0.0)) break;
        if (outer == mopt.max_outer)
          throw ConvergenceError("exterior Newton did not converge (sigma_yy " + std::to_string(sf(0)) +
                                     ", sigma_xy " + std::to_string(sf(1)) + ")",
                                 res);
        const Eigen::Matrix2d jf = s.tangent.bottomRightCorner<2, 2>();
        deps.tail<2>() -= jf.partialPivLu().solve(sf);
      }
      dmn.commit(s);
      free_prev = deps.tail<2>();
      eps += deps;
      out.history.push_back({k, k * dt, eps, s.stress, outer, res});
    } catch (const Error& e) {
      out.ok = false;
      out.error = "step " + std::to_string(k) + ": " + e.what();
      break;
    }
  }
  return out;
}

inline SimulationResult simulate(const DmnTopology& topo, const PhaseLaw& law1, const PhaseLaw& law2,
                                 const LoadPath& path, const OnlineOptions& opt = {}) {
  return path.mixed ? mixed_bc_simulate(topo, law1, law2, path, opt) : online_simulate(topo, law1, law2, path, opt);
}

struct StepSummary {
  int step = 0;
  double time = 0.0;
  Vec3 strain_mean = Vec3::Zero();
  Vec3 mean = Vec3::Zero(), sd = Vec3::Zero(), q05 = Vec3::Zero(), q50 = Vec3::Zero(), q95 = Vec3::Zero();
};

struct EnsembleResult {
  std::vector<SimulationResult> members;  // failed members keep their truncated history
  std::vector<std::uint64_t> seeds;
  std::vector<StepSummary> summary;       // over members that completed all steps
  int failures = 0;
};

/// Seed of ensemble member k.
inline std::uint64_t member_seed(std::uint64_t seed, int k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k)};
  std::array<std::uint32_t, 2> v;
  seq.generate(v.begin(), v.end());
  return (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// Per-step mean, std and quantiles over members that completed all steps.
inline std::vector<StepSummary> summarize_members(const std::vector<SimulationResult>& members, int steps) {
  if (std::none_of(members.begin(), members.end(), [](const auto& m) { return m.ok; }))
    throw ConvergenceError("no ensemble member completed the load path", 1.0);
  std::vector<StepSummary> summary;
  for (int k = 0; k < steps; ++k) {
    StepSummary sm;
    std::array<std::vector<double>, 3> vals;
    int count = 0;
    for (const auto& m : members) {
      if (!m.ok) continue;
      const auto& row = m.history[k];
      sm.step = row.step;
      sm.time = row.time;
      sm.strain_mean += row.strain;
      for (int c = 0; c < 3; ++c) vals[c].push_back(row.stress(c));
      ++count;
    }
    sm.strain_mean /= count;
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (double v : vals[c]) mean += v;
      mean /= count;
      double var = 0.0;
      for (double v : vals[c]) var += (v - mean) * (v - mean);
      sm.mean(c) = mean;
      sm.sd(c) = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;
      sm.q05(c) = quantile(vals[c], 0.05);
      sm.q50(c) = quantile(vals[c], 0.5);
      sm.q95(c) = quantile(vals[c], 0.95);
    }
    summary.push_back(sm);
  }
  return summary;
}

/// Sampling-mode nonlinear prediction: K deterministic DMNs drawn from the
/// hyper-distributions, each simulated independently.
inline EnsembleResult vdmn_ensemble_simulate(const VdmnParams& params, const PhaseLaw& law1, const PhaseLaw& law2,
                                             const LoadPath& path, int samples, std::uint64_t seed,
                                             const OnlineOptions& opt = {}) {
  if (samples < 1) throw ConfigError("ensemble needs at least one sample");
  params.validate();
  EnsembleResult out;
  for (int k = 0; k < samples; ++k) {
    const std::uint64_t s = member_seed(seed, k);
    out.seeds.push_back(s);
    SimulationResult r;
    try {
      r = simulate(sample_dmn(params, s), law1, law2, path, opt);
    } catch (const Error& e) {
      r.ok = false;
      r.error = e.what();
    }
    if (!r.ok) ++out.failures;
    out.members.push_back(std::move(r));
  }
  if (out.failures * 10 > samples)
    throw ConvergenceError(std::to_string(out.failures) + " of " + std::to_string(samples) +
                               " ensemble members failed (first: " +
                               std::find_if(out.members.begin(), out.members.end(), [](const auto& m) {
                                 return !m.ok;
                               })->error + ")",
                           static_cast<double>(out.failures) / samples);
  out.summary = summarize_members(out.members, path.steps);
  return out;
}

inline constexpr const char* kHistoryHeader = "step,time,eps_xx,eps_yy,eps_xy,sig_xx,sig_yy,sig_xy,sample_id";

inline void write_history_rows(std::ostream& os, const SimulationResult& r, int sample_id) {
  auto fmt = [](double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& h : r.history)
    os << h.step << ',' << fmt(h.time) << ',' << fmt(h.strain(0)) << ',' << fmt(h.strain(1)) << ','
       << fmt(h.strain(2)) << ',' << fmt(h.stress(0)) << ',' << fmt(h.stress(1)) << ',' << fmt(h.stress(2)) << ','
       << sample_id << '\n';
}

}  // namespace vdmn
