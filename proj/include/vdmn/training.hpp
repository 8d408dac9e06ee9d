#pragma once

// Likelihood training of the hyper-variational parameters.
//
// The loss is the sum of per-sample Gaussian NLLs of the propagated root
// distribution plus a weight-sum penalty. Its gradient is computed by a
// reverse sweep over the laminate tree; inside each block, forward-mode duals
// supply the first, second (and for mean_order 2, third) derivatives.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "vdmn/dataset.hpp"
#include "vdmn/propagation.hpp"

namespace vdmn {

enum class Scheduler { cosine, sgdr, constant };

inline const char* to_string(Scheduler s) {
  switch (s) {
    case Scheduler::cosine: return "cosine";
    case Scheduler::sgdr: return "sgdr";
    case Scheduler::constant: return "constant";
  }
  return "?";
}

inline Scheduler parse_scheduler(const std::string& s) {
  if (s == "cosine") return Scheduler::cosine;
  if (s == "sgdr") return Scheduler::sgdr;
  if (s == "constant") return Scheduler::constant;
  throw ConfigError("unknown scheduler '" + s + "'");
}

struct TrainConfig {
  int depth = 7;
  int epochs = 4000;
  int batch_size = 256;
  double lr0 = 0.01;
  double penalty = 1000.0;
  std::uint64_t seed = 0;
  int mean_order = 1;
  bool second_order_theta = false;
  bool allow_second_order_theta = false;
  NllMode loss_mode = NllMode::riemannian;
  Scheduler scheduler = Scheduler::cosine;
  int restart_period = 500;  // sgdr only
  double init_logvar = -6.0;
  int threads = 1;
  bool verbose = false;

  PropagationConfig propagation() const {
    PropagationConfig p;
    p.mean_order = mean_order;
    p.second_order_theta = second_order_theta;
    p.allow_second_order_theta = allow_second_order_theta;
    return p;
  }

  void validate(std::size_t train_size) const {
    if (depth < 1 || depth > 12) throw ConfigError("depth must lie in [1, 12]");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (train_size > 0 && static_cast<std::size_t>(batch_size) > train_size)
      throw ConfigError("batch_size exceeds the training set size");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(penalty >= 0.0)) throw ConfigError("penalty must be nonnegative");
    if (restart_period < 1) throw ConfigError("restart_period must be positive");
    if (threads < 1) throw ConfigError("threads must be positive");
    propagation().validate();
  }
};

/// Learning rate at epoch t of T.
inline double scheduled_lr(const TrainConfig& cfg, int t) {
  const double pi = std::numbers::pi;
  switch (cfg.scheduler) {
    case Scheduler::cosine: return cfg.lr0 * 0.5 * (1.0 + std::cos(pi * t / std::max(cfg.epochs, 1)));
    case Scheduler::sgdr: {
      const int r = t % cfg.restart_period;
      return cfg.lr0 * 0.5 * (1.0 + std::cos(pi * r / cfg.restart_period));
    }
    case Scheduler::constant: return cfg.lr0;
  }
  return cfg.lr0;
}

struct LossGrad {
  double value = 0.0;
  double nll = 0.0;
  double penalty = 0.0;
  std::vector<double> grad;  // flattened like VdmnParams::flatten
};

namespace detail {

/// Gradient of g(x) = sum_pk Jbar_pk dF_p/dx_k for one block (all 14 inputs).
inline Eigen::Matrix<double, 14, 1> jacobian_adjoint_grad(const BlockTape& t, const Eigen::Matrix<double, 6, 14>& jbar) {
  using I = Dual<double, 6>;
  using X = Dual<I, 14>;
  auto seed = [&](double x, int k) {
    I inner(x);
    for (int p = 0; p < 6; ++p) inner.d[p] = jbar(p, k);
    X r(inner);
    r.d[k] = I(1.0);
    return r;
  };
  Sym3<X> a, b;
  for (int q = 0; q < 6; ++q) {
    a.c[q] = seed(t.a.c[q], q);
    b.c[q] = seed(t.b.c[q], 6 + q);
  }
  const double f = t.wa / (t.wa + t.wb);
  const Sym3<X> out = laminate<X>(a, b, seed(f, kDf), seed(t.theta, kTheta));
  Eigen::Matrix<double, 14, 1> g = Eigen::Matrix<double, 14, 1>::Zero();
  for (int p = 0; p < 6; ++p)
    for (int m = 0; m < 14; ++m) g(m) += out.c[p].d[m].d[p];
  return g;
}

/// Same, restricted to (theta, f) for blocks whose children are constant leaves.
inline Eigen::Vector2d jacobian_adjoint_grad_angles(const BlockTape& t, const Eigen::Matrix<double, 6, 14>& jbar) {
  using D = Dual<double, 2>;
  using DD = Dual<D, 2>;
  auto seed = [](double x, int k) {
    DD r(D::variable(x, k));
    r.d[k] = D(1.0);
    return r;
  };
  const double f = t.wa / (t.wa + t.wb);
  const Sym3<DD> out = laminate<DD>(cast_sym<DD>(t.a), cast_sym<DD>(t.b), seed(f, 1), seed(t.theta, 0));
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (int p = 0; p < 6; ++p) {
    // Hessian entries over (theta, f)
    const double htt = out.c[p].d[0].d[0], htf = out.c[p].d[0].d[1], hff = out.c[p].d[1].d[1];
    const double jt = jbar(p, kTheta), jf = jbar(p, kDf);
    g(0) += jt * htt + jf * htf;
    g(1) += jt * htf + jf * hff;
  }
  return g;
}

/// Gradient of D^2 F_p[u, u] for every output p.
inline Eigen::Matrix<double, 6, 14> second_directional_grad(const BlockTape& t, const Eigen::Matrix<double, 14, 1>& u) {
  using D1 = Dual<double, 1>;
  using D2 = Dual<D1, 1>;
  using X = Dual<D2, 14>;
  auto seed = [&](double x, int k) {
    D1 v1(x);
    v1.d[0] = u(k);
    D2 v2(v1);
    v2.d[0] = D1(u(k));
    X r(v2);
    r.d[k] = D2(1.0);
    return r;
  };
  Sym3<X> a, b;
  for (int q = 0; q < 6; ++q) {
    a.c[q] = seed(t.a.c[q], q);
    b.c[q] = seed(t.b.c[q], 6 + q);
  }
  const double f = t.wa / (t.wa + t.wb);
  const Sym3<X> out = laminate<X>(a, b, seed(f, kDf), seed(t.theta, kTheta));
  Eigen::Matrix<double, 6, 14> g;
  for (int p = 0; p < 6; ++p)
    for (int m = 0; m < 14; ++m) g(p, m) = out.c[p].d[m].d[0].d[0];
  return g;
}

struct NodeAdjoint {
  Vec6 mean = Vec6::Zero();
  Mat6 cov = Mat6::Zero();
};

}  // namespace detail

/// NLL of one triplet and its gradient w.r.t. the flattened parameters
/// (added into grad). Weight gradients are w.r.t. transformed weights and
/// variances w.r.t. log-variances; the caller applies the weight transform.
inline double sample_nll_grad(const ParamView<double>& pv, const HomogTriplet& t, const PropagationConfig& cfg,
                              NllMode mode, std::vector<double>* wbar_out, std::vector<double>* grad_angles,
                              std::vector<double>* grad_angle_logvar, std::vector<double>* grad_df_logvar) {
  const int n = pv.depth;
  std::vector<BlockTape> tape;
  const bool want_grad = wbar_out != nullptr;
  const auto root = propagate_tree_generic<double>(pv, leaf_input(t.c1, cfg.input_cov_1),
                                                   leaf_input(t.c2, cfg.input_cov_2), cfg,
                                                   want_grad ? &tape : nullptr);
  GaussianStiffness g = to_gaussian(root);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  const NllGrad ng = gaussian_nll_grad(g, t.ch, mode, want_grad);
  if (!want_grad) return ng.value;

  // adjoints indexed by level-order node id of each layer's nodes
  std::vector<detail::NodeAdjoint> adj(num_internal(n));
  adj[0].mean = ng.d_mean;
  adj[0].cov = 0.5 * (ng.d_cov + ng.d_cov.transpose());
  std::vector<std::vector<double>> wbar(n + 1);
  for (int l = 0; l <= n; ++l) wbar[l].assign(1 << l, 0.0);

  for (int layer = 0; layer < n; ++layer) {
    const int width = 1 << layer;
    const bool leaf_parent = layer == n - 1;
    for (int j = 0; j < width; ++j) {
      const int k = node_index(layer, j);
      const BlockTape& bt = tape[k];
      const Vec6& mbar = adj[k].mean;
      const Mat6& sbar = adj[k].cov;
      const auto& jac = bt.jac;
      const auto ja = jac.leftCols<6>();
      const auto jb = jac.middleCols<6>(6);
      const Vec6 jt = jac.col(detail::kTheta);
      const Vec6 jf = jac.col(detail::kDf);

      Mat6 sbar_a = Mat6::Zero(), sbar_b = Mat6::Zero();
      if (bt.has_cov_a) sbar_a = ja.transpose() * sbar * ja;
      if (bt.has_cov_b) sbar_b = jb.transpose() * sbar * jb;
      double sbar_t = jt.dot(sbar * jt);
      double sbar_f = bt.leaf_parent ? jf.dot(sbar * jf) : 0.0;

      Eigen::Matrix<double, 6, 14> jbar = Eigen::Matrix<double, 6, 14>::Zero();
      if (bt.has_cov_a) jbar.leftCols<6>() = 2.0 * sbar * ja * bt.cov_a;
      if (bt.has_cov_b) jbar.middleCols<6>(6) = 2.0 * sbar * jb * bt.cov_b;
      jbar.col(detail::kTheta) = 2.0 * bt.var_theta * (sbar * jt);
      if (bt.leaf_parent) jbar.col(detail::kDf) = 2.0 * bt.var_df * (sbar * jf);

      Eigen::Matrix<double, 14, 1> xbar = jac.transpose() * mbar;
      const bool children_const = leaf_parent && !bt.has_cov_a && !bt.has_cov_b;
      if (!jbar.isZero(0.0)) {
        if (children_const) {
          const Eigen::Vector2d g2 = detail::jacobian_adjoint_grad_angles(bt, jbar);
          xbar(detail::kTheta) += g2(0);
          xbar(detail::kDf) += g2(1);
        } else {
          xbar += detail::jacobian_adjoint_grad(bt, jbar);
        }
      }

      if (cfg.mean_order == 2) {
        const auto h = detail::block_hessian<double>(bt.a, bt.b, bt.wa / (bt.wa + bt.wb), bt.theta);
        Eigen::Matrix<double, 14, 14> wh = Eigen::Matrix<double, 14, 14>::Zero();
        for (int p = 0; p < 6; ++p)
          for (int r = 0; r < 14; ++r)
            for (int c = 0; c < 14; ++c) wh(r, c) += mbar(p) * h[p][r][c];
        if (bt.has_cov_a) sbar_a += 0.5 * wh.block<6, 6>(0, 0);
        if (bt.has_cov_b) sbar_b += 0.5 * wh.block<6, 6>(6, 6);
        if (bt.leaf_parent) sbar_f += 0.5 * wh(detail::kDf, detail::kDf);
        if (cfg.second_order_theta) sbar_t += 0.5 * wh(detail::kTheta, detail::kTheta);
        // gradient of the correction through the Hessian itself: third derivatives along
        // eigen-directions of each covariance group
        auto add_dir = [&](const Eigen::Matrix<double, 14, 1>& u, double lambda) {
          if (lambda == 0.0) return;
          const auto g3 = detail::second_directional_grad(bt, u);
          xbar += 0.5 * lambda * (g3.transpose() * mbar);
        };
        for (int grp = 0; grp < 2; ++grp) {
          if (grp == 0 ? !bt.has_cov_a : !bt.has_cov_b) continue;
          Eigen::SelfAdjointEigenSolver<Mat6> es(grp == 0 ? bt.cov_a : bt.cov_b);
          for (int e = 0; e < 6; ++e) {
            Eigen::Matrix<double, 14, 1> u = Eigen::Matrix<double, 14, 1>::Zero();
            u.segment<6>(6 * grp) = es.eigenvectors().col(e);
            add_dir(u, es.eigenvalues()(e));
          }
        }
        if (bt.leaf_parent) add_dir(Eigen::Matrix<double, 14, 1>::Unit(detail::kDf), bt.var_df);
        if (cfg.second_order_theta) add_dir(Eigen::Matrix<double, 14, 1>::Unit(detail::kTheta), bt.var_theta);
      }

      (*grad_angles)[k] += xbar(detail::kTheta);
      (*grad_angle_logvar)[k] += sbar_t * bt.var_theta;
      if (bt.leaf_parent) (*grad_df_logvar)[j] += sbar_f * bt.var_df;

      // f = wa / (wa + wb) with subtree weights; a parent weight is the sum of its children
      const double fbar = xbar(detail::kDf);
      const double s2 = (bt.wa + bt.wb) * (bt.wa + bt.wb);
      wbar[layer + 1][2 * j] += wbar[layer][j] + fbar * bt.wb / s2;
      wbar[layer + 1][2 * j + 1] += wbar[layer][j] - fbar * bt.wa / s2;

      if (!leaf_parent) {
        const int ka = node_index(layer + 1, 2 * j), kb = node_index(layer + 1, 2 * j + 1);
        adj[ka].mean = xbar.segment<6>(0);
        adj[kb].mean = xbar.segment<6>(6);
        adj[ka].cov = sbar_a;
        adj[kb].cov = sbar_b;
      }
    }
  }
  for (int j = 0; j < num_leaves(n); ++j) (*wbar_out)[j] += wbar[n][j];
  return ng.value;
}

/// Loss and (optionally) gradient over a batch; penalty gamma (1 - sum w)^2.
inline LossGrad loss_and_grad(const VdmnParams& params, std::span<const HomogTriplet> batch, double gamma,
                              const PropagationConfig& cfg, NllMode mode, bool with_grad = true, int threads = 1) {
  if (batch.empty()) throw ConfigError("empty batch");
  cfg.validate();
  const auto pv = make_view(params);
  const int nl = num_leaves(params.depth), ni = num_internal(params.depth), nd = nl / 2;

  struct Part {
    double nll = 0.0;
    std::vector<double> wbar, ga, gav, gdf;
  };
  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
  // fixed contiguous chunks, reduced in order: the result does not depend on timing
  std::vector<Part> parts(nthreads);
  std::vector<std::exception_ptr> errors(nthreads);
  auto work = [&](int tid) {
    Part& part = parts[tid];
    part.wbar.assign(nl, 0.0);
    part.ga.assign(ni, 0.0);
    part.gav.assign(ni, 0.0);
    part.gdf.assign(nd, 0.0);
    const std::size_t lo = batch.size() * tid / nthreads, hi = batch.size() * (tid + 1) / nthreads;
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        part.nll += sample_nll_grad(pv, batch[i], cfg, mode, with_grad ? &part.wbar : nullptr, &part.ga, &part.gav,
                                    &part.gdf);
      } catch (const Error& e) {
        errors[tid] = std::make_exception_ptr(ConfigError("batch sample " + std::to_string(i) + ": " + e.what()));
        return;
      }
    }
  };
  if (nthreads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  LossGrad out;
  std::vector<double> wbar(nl, 0.0), ga(ni, 0.0), gav(ni, 0.0), gdf(nd, 0.0);
  for (const auto& p : parts) {
    out.nll += p.nll;
    if (!with_grad) continue;
    for (int j = 0; j < nl; ++j) wbar[j] += p.wbar[j];
    for (int k = 0; k < ni; ++k) {
      ga[k] += p.ga[k];
      gav[k] += p.gav[k];
    }
    for (int j = 0; j < nd; ++j) gdf[j] += p.gdf[j];
  }
  const double wsum = std::accumulate(pv.weights.begin(), pv.weights.end(), 0.0);
  out.penalty = gamma * (1.0 - wsum) * (1.0 - wsum);
  out.value = out.nll + out.penalty;
  if (!with_grad) return out;

  out.grad.reserve(params.num_scalars());
  for (int j = 0; j < nl; ++j) {
    const double wb = wbar[j] - 2.0 * gamma * (1.0 - wsum);
    out.grad.push_back(wb * sigmoid(params.weight_param[j]));
  }
  out.grad.insert(out.grad.end(), ga.begin(), ga.end());
  out.grad.insert(out.grad.end(), gav.begin(), gav.end());
  out.grad.insert(out.grad.end(), gdf.begin(), gdf.end());
  for (std::size_t k = 0; k < out.grad.size(); ++k)
    if (!std::isfinite(out.grad[k])) throw ConfigError("non-finite gradient for parameter " + params.scalar_name(k));
  return out;
}

inline double loss(const VdmnParams& params, std::span<const HomogTriplet> batch, double gamma,
                   const PropagationConfig& cfg = {}, NllMode mode = NllMode::riemannian) {
  return loss_and_grad(params, batch, gamma, cfg, mode, false).value;
}

inline std::vector<double> grad_loss(const VdmnParams& params, std::span<const HomogTriplet> batch, double gamma,
                                     const PropagationConfig& cfg = {}, NllMode mode = NllMode::riemannian) {
  return loss_and_grad(params, batch, gamma, cfg, mode, true).grad;
}

/// Per-sample NLL (no penalty).
inline std::vector<double> sample_nlls(const VdmnParams& params, std::span<const HomogTriplet> data,
                                       const PropagationConfig& cfg = {}, NllMode mode = NllMode::riemannian) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& t : data) out.push_back(gaussian_nll(propagate_tree(params, t.c1, t.c2, cfg), t.ch, mode));
  return out;
}

inline double mean_nll(const VdmnParams& params, std::span<const HomogTriplet> data, const PropagationConfig& cfg = {},
                       NllMode mode = NllMode::riemannian, int threads = 1) {
  if (data.empty()) return 0.0;
  return loss_and_grad(params, data, 0.0, cfg, mode, false, threads).nll / static_cast<double>(data.size());
}

/// Leaf weights divided by their sum; offline predictions are unchanged.
inline VdmnParams rescale_weights(const VdmnParams& params) {
  const auto w = params.weights();
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(s > 0.0)) throw StructuralError("weights sum to zero");
  VdmnParams out = params;
  for (std::size_t j = 0; j < w.size(); ++j) out.weight_param[j] = softplus_inverse(w[j] / s);
  return out;
}

struct TrainHistory {
  std::vector<double> train_loss;  // mean NLL per sample over the epoch's batches
  std::vector<double> val_loss;    // mean NLL per validation sample at epoch end
  std::vector<double> lr;
  std::vector<double> wall_time;   // seconds since start
};

struct TrainResult {
  VdmnParams params;  // best-validation checkpoint
  TrainHistory history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool aborted = false;
  std::string abort_reason;
};

/// Adam with the AMSGrad max of second moments (bias-corrected, no weight decay).
struct AmsGrad {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v, vmax;
  long step = 0;

  void update(std::vector<double>& x, const std::vector<double>& g, double lr) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
      vmax.assign(x.size(), 0.0);
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      vmax[i] = std::max(vmax[i], v[i]);
      const double denom = std::sqrt(vmax[i]) / std::sqrt(bc2) + eps;
      x[i] -= lr / bc1 * m[i] / denom;
    }
  }
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss, double lr)>;

inline TrainResult train(const std::vector<HomogTriplet>& train_set, const std::vector<HomogTriplet>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         const VdmnParams* init = nullptr) {
  if (train_set.empty()) throw ConfigError("empty training set");
  cfg.validate(train_set.size());
  const PropagationConfig pcfg = cfg.propagation();
  TrainResult res;
  VdmnParams params = init ? *init : VdmnParams::initial(cfg.depth, cfg.seed, cfg.init_logvar);
  params.validate();
  res.params = params;
  const auto& val = val_set.empty() ? train_set : val_set;
  if (cfg.epochs == 0) return res;

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> x = params.flatten();
  AmsGrad opt;
  const auto start = std::chrono::steady_clock::now();
  std::vector<HomogTriplet> batch;
  batch.reserve(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nll = 0.0;
    bool failed = false;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_set[order[i]]);
      LossGrad lg;
      try {
        lg = loss_and_grad(params, batch, cfg.penalty, pcfg, cfg.loss_mode, true, cfg.threads);
      } catch (const Error& e) {
        res.aborted = true;
        res.abort_reason = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
        failed = true;
        break;
      }
      if (!std::isfinite(lg.value)) {
        res.aborted = true;
        res.abort_reason = "epoch " + std::to_string(epoch) + ": non-finite loss";
        failed = true;
        break;
      }
      epoch_nll += lg.nll;
      opt.update(x, lg.grad, lr);
      params.unflatten(x);
    }
    if (failed) {
      log::warn("training aborted (" + res.abort_reason + "); returning the best checkpoint");
      break;
    }
    double vloss;
    try {
      vloss = mean_nll(params, val, pcfg, cfg.loss_mode, cfg.threads);
    } catch (const Error& e) {
      vloss = std::numeric_limits<double>::infinity();
    }
    const double tloss = epoch_nll / static_cast<double>(train_set.size());
    res.history.train_loss.push_back(tloss);
    res.history.val_loss.push_back(vloss);
    res.history.lr.push_back(lr);
    res.history.wall_time.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (vloss < res.best_val) {
      res.best_val = vloss;
      res.best_epoch = epoch;
      res.params = params;
    }
    if (on_epoch) on_epoch(epoch, tloss, vloss, lr);
  }
  return res;
}

}  // namespace vdmn
