#pragma once

// Command-line front end. cli_dispatch returns 0 on success, 1 when a
// validation check fails (calibration), 2 on usage or runtime errors.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vdmn/vdmn.hpp"

namespace vdmn::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitError = 2;

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VDMN_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("VDMN_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

inline std::vector<double> parse_numbers(const std::string& s, std::size_t expect, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t", used) != std::string::npos) throw ConfigError("");
    } catch (const std::exception&) {
      throw ConfigError(what + ": malformed number '" + cell + "'");
    }
  }
  if (expect && v.size() != expect)
    throw ConfigError(what + " needs " + std::to_string(expect) + " comma-separated values");
  return v;
}

/// "elastic:E,nu" or "norton:E,nu,sigma_y[,N[,sigma_y_max,delta,K_p]]"
inline PhaseLaw parse_phase_law(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("phase law '" + s + "' needs kind:values");
  const std::string kind = s.substr(0, colon);
  const auto v = parse_numbers(s.substr(colon + 1), 0, "phase law");
  if (kind == "elastic") {
    if (v.size() != 2) throw ConfigError("elastic phase law needs E,nu");
    return elastic_law({v[0], v[1]});
  }
  if (kind == "norton") {
    if (v.size() != 3 && v.size() != 4 && v.size() != 7) throw ConfigError("norton phase law needs 3, 4 or 7 values");
    NortonParams p;
    p.E = v[0];
    p.nu = v[1];
    p.sigma_y = p.sigma_y_max = v[2];
    if (v.size() >= 4) p.N = v[3];
    if (v.size() == 7) {
      p.sigma_y_max = v[4];
      p.delta = v[5];
      p.K_p = v[6];
    }
    p.validate();
    return p;
  }
  throw ConfigError("unknown phase law kind '" + kind + "'");
}

inline std::string dataset_path(const std::string& p) {
  return fs::is_directory(p) ? (fs::path(p) / "dataset.csv").string() : p;
}

inline Stiffness parse_stiffness(const std::string& s, const std::string& what) {
  const auto v = parse_numbers(s, 6, what);
  Stiffness c;
  for (int p = 0; p < 6; ++p) c.c[p] = v[p];
  require_valid_stiffness(c, what);
  return c;
}

/// Pooled Gaussian of several models: mean of means, mean covariance plus spread of means.
inline GaussianStiffness pooled_prediction(const std::vector<ModelDocument>& models, const Stiffness& c1,
                                           const Stiffness& c2) {
  Vec6 mean = Vec6::Zero();
  Mat6 cov = Mat6::Zero();
  std::vector<Vec6> means;
  for (const auto& m : models) {
    PropagationConfig pc;
    pc.mean_order = m.mean_order;
    const auto g = propagate_tree(m.params, c1, c2, pc);
    means.push_back(to_vec(g.mean));
    mean += means.back();
    cov += g.cov;
  }
  const double n = static_cast<double>(models.size());
  mean /= n;
  cov /= n;
  for (const auto& m : means) cov += (m - mean) * (m - mean).transpose() / n;
  return {from_vec(mean), cov};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  os << text;
}

inline std::string canonical_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "depth=" << c.depth << ";epochs=" << c.epochs << ";batch_size=" << c.batch_size
     << ";lr0=" << format_double(c.lr0) << ";penalty=" << format_double(c.penalty) << ";seed=" << c.seed
     << ";mean_order=" << c.mean_order << ";second_order_theta=" << c.second_order_theta
     << ";loss_mode=" << to_string(c.loss_mode) << ";scheduler=" << to_string(c.scheduler)
     << ";restart_period=" << c.restart_period << ";init_logvar=" << format_double(c.init_logvar);
  return os.str();
}

inline std::string seeded_path(const std::string& out, std::uint64_t seed) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + "_s" + std::to_string(seed) + p.extension().string())).string();
}

struct Runner {
  std::ostream& out;
  std::ostream& err;

  // globals
  std::optional<std::uint64_t> seed_flag;
  int threads = 1;
  bool quiet = false;

  // gen-data
  std::string gd_out;
  int gd_pairs = 1655;
  EnsembleConfig gd_ens;
  double gd_train = 0.70, gd_val = 0.15;
  int gd_specimens = 0;
  LatentConstitutiveModel gd_latent{1.0, -5.99, 2.0, -3.79};

  // train
  std::string tr_data, tr_out, tr_history;
  TrainConfig tr;
  std::string tr_loss = "riemannian", tr_sched = "cosine";
  std::vector<std::uint64_t> tr_seeds;
  int tr_report = 0;

  // shared model/data
  std::vector<std::string> models;
  std::string data, split = "test", out_path;
  int n_sim = 1000;
  std::string loss_override;

  // predict-linear
  std::string pl_c1, pl_c2;
  double pl_e1 = 0.0, pl_nu1 = 0.3, pl_e2 = 0.0, pl_nu2 = 0.19;
  int pl_samples = 0;

  // predict-nonlinear
  std::string pn_phase1 = "elastic:100000,0.3", pn_phase2 = "norton:200000,0.19,300,10";
  std::vector<double> pn_rate = {0.003, 0.0, 0.0};
  double pn_final = 0.02;
  int pn_steps = 100, pn_samples = 100;
  bool pn_mixed = false;
  std::string pn_summary;

  // invert / landscape
  std::string iv_meas, iv_components = "C11,C12", iv_init = "1,-6,2,-4", iv_optimizer = "auto";
  double iv_noise = 0.0, iv_nu1 = 0.3, iv_nu2 = 0.3;
  bool iv_fit_noise = false, iv_single = false;
  int iv_max_iter = 2000;
  std::string ls_x = "mu_E1:0.9:1.1:21", ls_y = "logS_E1:-8:-4:21", ls_at;

  std::uint64_t seed() const { return resolve_seed(seed_flag); }

  std::vector<ModelDocument> load_models() const {
    if (models.empty()) throw ConfigError("--model is required");
    std::vector<ModelDocument> v;
    for (const auto& p : models) v.push_back(load_model(p));
    return v;
  }

  int gen_data() {
    if (gd_out.empty()) throw ConfigError("--out is required");
    const auto s = seed();
    fs::create_directories(gd_out);
    const auto oracle = build_ensemble(gd_ens, member_seed(s, 0));
    const auto pairs = lhs_orthotropic(gd_pairs, member_seed(s, 1));
    const auto d = generate_dataset(oracle, pairs, member_seed(s, 2), {gd_train, gd_val});
    write_dataset(d, (fs::path(gd_out) / "dataset.csv").string());
    out << "dataset: " << d.train.size() << " train, " << d.val.size() << " val, " << d.test.size() << " test\n";
    if (gd_specimens > 0) {
      std::ostringstream os;
      write_specimens(oracle_specimens(oracle, gd_latent, gd_specimens, member_seed(s, 3)), os);
      write_text((fs::path(gd_out) / "specimens.csv").string(), os.str());
      out << "specimens: " << gd_specimens << '\n';
    }
    return kExitOk;
  }

  int train_cmd() {
    if (tr_data.empty() || tr_out.empty()) throw ConfigError("--data and --out are required");
    const std::string dpath = dataset_path(tr_data);
    const std::string bytes = read_file(dpath);
    std::istringstream is(bytes);
    const Dataset d = read_dataset(is);
    tr.loss_mode = parse_nll_mode(tr_loss);
    tr.scheduler = parse_scheduler(tr_sched);
    tr.threads = threads;
    std::vector<std::uint64_t> seeds = tr_seeds.empty() ? std::vector<std::uint64_t>{seed()} : tr_seeds;
    std::ostringstream hist;
    if (!tr_history.empty()) hist << "seed,epoch,train_loss,val_loss,lr,wall_time\n";
    for (auto s : seeds) {
      TrainConfig cfg = tr;
      cfg.seed = s;
      EpochCallback cb;
      if (tr_report > 0)
        cb = [&](int e, double tl, double vl, double lr) {
          if (e % tr_report == 0) err << "epoch " << e << " train " << tl << " val " << vl << " lr " << lr << '\n';
        };
      const auto res = train(d.train, d.val, cfg, cb);
      if (res.aborted) throw ConfigError("training aborted: " + res.abort_reason);
      ModelDocument doc;
      doc.params = rescale_weights(res.params);
      doc.mean_order = cfg.mean_order;
      doc.loss_mode = cfg.loss_mode;
      auto& f = doc.fingerprint;
      f.config_hash = fnv1a_hex(canonical_config(cfg));
      f.dataset_hash = fnv1a_hex(bytes);
      f.final_train_loss = res.history.train_loss.empty() ? 0.0 : res.history.train_loss.back();
      f.best_val_loss = res.best_val;
      f.epochs = cfg.epochs;
      f.best_epoch = res.best_epoch;
      const std::string path = seeds.size() > 1 ? seeded_path(tr_out, s) : tr_out;
      save_model(doc, path);
      out << "model " << path << ": best val NLL " << format_double(res.best_val) << " at epoch " << res.best_epoch
          << '\n';
      if (!tr_history.empty())
        for (std::size_t e = 0; e < res.history.train_loss.size(); ++e)
          hist << s << ',' << e << ',' << format_double(res.history.train_loss[e]) << ','
               << format_double(res.history.val_loss[e]) << ',' << format_double(res.history.lr[e]) << ','
               << format_double(res.history.wall_time[e]) << '\n';
    }
    if (!tr_history.empty()) write_text(tr_history, hist.str());
    return kExitOk;
  }

  const std::vector<HomogTriplet>& pick_split(const Dataset& d) const { return d.get(parse_split(split)); }

  int eval_cmd() {
    const auto ms = load_models();
    if (data.empty()) throw ConfigError("--data is required");
    const Dataset d = read_dataset(dataset_path(data));
    const auto& set = pick_split(d);
    if (set.empty()) throw ConfigError("split '" + split + "' is empty");
    const NllMode mode = loss_override.empty() ? ms.front().loss_mode : parse_nll_mode(loss_override);
    std::ostringstream csv;
    csv << "sample,nll";
    for (auto n : kSymNames) csv << ",z_" << n;
    csv << '\n';
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto g = pooled_prediction(ms, set[i].c1, set[i].c2);
      const double nll = gaussian_nll(g, set[i].ch, mode);
      total += nll;
      csv << i << ',' << format_double(nll);
      for (int p = 0; p < 6; ++p) {
        const double var = g.cov(p, p);
        csv << ',' << (var > 0.0 ? format_double((set[i].ch.c[p] - g.mean.c[p]) / std::sqrt(var)) : "");
      }
      csv << '\n';
    }
    if (!out_path.empty()) write_text(out_path, csv.str());
    else out << csv.str();
    out << "mean NLL (" << to_string(mode) << ", " << split << ", n=" << set.size()
        << "): " << format_double(total / set.size()) << '\n';
    return kExitOk;
  }

  int calibrate_cmd() {
    const auto ms = load_models();
    if (data.empty()) throw ConfigError("--data is required");
    const Dataset d = read_dataset(dataset_path(data));
    const auto& set = pick_split(d);
    std::vector<GaussianStiffness> pred;
    std::vector<Stiffness> obs;
    for (const auto& t : set) {
      pred.push_back(pooled_prediction(ms, t.c1, t.c2));
      obs.push_back(t.ch);
    }
    const auto rep = calibration_test(pred, obs, n_sim, default_marginals(), seed());
    if (!out_path.empty()) {
      std::ostringstream os;
      write_calibration_csv(rep, os);
      write_text(out_path, os.str());
    }
    for (const auto& m : rep.marginals)
      out << m.name << ": " << (m.skipped ? "SKIPPED" : m.pass ? "PASS" : "FAIL") << " (min tail prob "
          << format_double(m.min_tail_prob) << ", threshold " << format_double(rep.adjusted_gamma) << ")\n";
    out << "calibration " << (rep.pass ? "PASS" : "FAIL") << '\n';
    return rep.pass ? kExitOk : kExitValidation;
  }

  std::pair<Stiffness, Stiffness> linear_inputs() const {
    if (!pl_c1.empty() || !pl_c2.empty()) {
      if (pl_c1.empty() || pl_c2.empty()) throw ConfigError("--c1 and --c2 go together");
      return {parse_stiffness(pl_c1, "--c1"), parse_stiffness(pl_c2, "--c2")};
    }
    if (!(pl_e1 > 0.0) || !(pl_e2 > 0.0)) throw ConfigError("give --c1/--c2 or positive --e1/--e2");
    return {isotropic_stiffness({pl_e1, pl_nu1}), isotropic_stiffness({pl_e2, pl_nu2})};
  }

  int predict_linear() {
    const auto ms = load_models();
    const auto [c1, c2] = linear_inputs();
    const double scale = c1(0, 0);
    HomogTriplet t{c1, c2, c1, 0, 1.0};
    t = normalize(t);
    const auto g = denormalize(pooled_prediction(ms, t.c1, t.c2), scale);
    std::ostringstream csv;
    csv << "row";
    for (auto n : kSymNames) csv << ',' << n;
    csv << '\n';
    auto row = [&](const std::string& name, const Vec6& v) {
      csv << name;
      for (int p = 0; p < 6; ++p) csv << ',' << format_double(v(p));
      csv << '\n';
    };
    row("mean", to_vec(g.mean));
    for (int p = 0; p < 6; ++p) row(std::string("cov_") + kSymNames[p], g.cov.row(p).transpose());
    if (pl_samples > 0) {
      Vec6 s1 = Vec6::Zero(), s2 = Vec6::Zero();
      for (int k = 0; k < pl_samples; ++k) {
        const auto& m = ms[k % ms.size()];
        const Vec6 v = to_vec(tree_homogenize(sample_dmn(m.params, member_seed(seed(), k)), c1, c2));
        s1 += v;
        s2 += v.cwiseProduct(v);
      }
      const Vec6 mean = s1 / pl_samples;
      const Vec6 var = pl_samples > 1 ? Vec6((s2 - pl_samples * mean.cwiseProduct(mean)) / (pl_samples - 1))
                                      : Vec6(Vec6::Zero());
      row("sampled_mean", mean);
      row("sampled_sd", var.cwiseMax(0.0).cwiseSqrt());
    }
    if (!out_path.empty()) write_text(out_path, csv.str());
    else out << csv.str();
    return kExitOk;
  }

  int predict_nonlinear() {
    const auto ms = load_models();
    const PhaseLaw law1 = parse_phase_law(pn_phase1), law2 = parse_phase_law(pn_phase2);
    if (pn_rate.size() != 3) throw ConfigError("--rate needs 3 values");
    LoadPath path;
    path.rate = Vec3(pn_rate[0], pn_rate[1], pn_rate[2]);
    if (!(std::abs(path.rate(0)) > 0.0)) throw ConfigError("--rate xx component must be nonzero");
    path.total_time = pn_final / std::abs(path.rate(0));
    path.steps = pn_steps;
    path.mixed = pn_mixed;
    path.validate();
    if (pn_samples < 1) throw ConfigError("--samples must be positive");
    std::vector<SimulationResult> members;
    int failures = 0;
    for (std::size_t m = 0; m < ms.size(); ++m) {
      const int k = pn_samples / static_cast<int>(ms.size()) + (static_cast<int>(m) < pn_samples % static_cast<int>(ms.size()));
      if (k == 0) continue;
      auto r = vdmn_ensemble_simulate(ms[m].params, law1, law2, path, k, member_seed(seed(), static_cast<int>(m)));
      failures += r.failures;
      for (auto& s : r.members) members.push_back(std::move(s));
    }
    if (failures * 10 > pn_samples) throw ConvergenceError("too many failed ensemble members", failures);
    const auto summary = summarize_members(members, path.steps);
    std::ostringstream csv;
    csv << kHistoryHeader << '\n';
    for (std::size_t i = 0; i < members.size(); ++i)
      if (members[i].ok) write_history_rows(csv, members[i], static_cast<int>(i));
    if (!out_path.empty()) write_text(out_path, csv.str());
    std::ostringstream sm;
    sm << "step,time,eps_xx,sig_xx_mean,sig_xx_sd,sig_xx_q05,sig_xx_q50,sig_xx_q95,sig_yy_mean,sig_xy_mean\n";
    for (const auto& s : summary)
      sm << s.step << ',' << format_double(s.time) << ',' << format_double(s.strain_mean(0)) << ','
         << format_double(s.mean(0)) << ',' << format_double(s.sd(0)) << ',' << format_double(s.q05(0)) << ','
         << format_double(s.q50(0)) << ',' << format_double(s.q95(0)) << ',' << format_double(s.mean(1)) << ','
         << format_double(s.mean(2)) << '\n';
    if (!pn_summary.empty()) write_text(pn_summary, sm.str());
    if (out_path.empty() && pn_summary.empty()) out << sm.str();
    const auto& last = summary.back();
    out << "samples " << members.size() - failures << "/" << members.size() << ", final sig_xx mean "
        << format_double(last.mean(0)) << " sd " << format_double(last.sd(0)) << '\n';
    return kExitOk;
  }

  LatentConstitutiveModel latent_from(const std::string& values) const {
    const auto v = parse_numbers(values, 4, "latent parameters");
    LatentConstitutiveModel m{v[0], v[1], v[2], v[3], iv_nu1, iv_nu2, iv_noise};
    m.validate();
    return m;
  }

  std::vector<Measurement> measurements() const {
    if (iv_meas.empty()) throw ConfigError("--measurements is required");
    std::ifstream is(iv_meas);
    if (!is) throw ConfigError("cannot open " + iv_meas);
    return make_measurements(read_specimens(is), parse_components(iv_components), iv_single, seed());
  }

  int invert_cmd() {
    const auto ms = load_models();
    if (ms.size() != 1) throw ConfigError("invert takes exactly one model");
    const auto data = measurements();
    InverseOptions opt;
    const auto comps = parse_components(iv_components);
    opt.optimizer = iv_optimizer == "auto" ? default_optimizer(comps) : parse_optimizer(iv_optimizer);
    opt.max_iterations = iv_max_iter;
    opt.fit_noise = iv_fit_noise;
    opt.propagation.mean_order = ms.front().mean_order;
    const auto r = inverse_fit(data, ms.front().params, latent_from(iv_init), opt);
    std::ostringstream csv;
    csv << "param,value\n";
    for (int k = 0; k < 5; ++k) csv << kLatentNames[k] << ',' << format_double(get_latent(r.model, k)) << '\n';
    csv << "nll," << format_double(r.nll) << "\niterations," << r.iterations << "\nconverged," << r.converged << '\n';
    if (!out_path.empty()) write_text(out_path, csv.str());
    out << csv.str();
    return kExitOk;
  }

  static LandscapeAxis parse_axis(const std::string& s) {
    const auto c = s.find(':');
    if (c == std::string::npos) throw ConfigError("axis '" + s + "' needs name:lo:hi:points");
    std::string rest = s.substr(c + 1);
    for (auto& ch : rest)
      if (ch == ':') ch = ',';
    const auto v = parse_numbers(rest, 3, "axis");
    LandscapeAxis a{parse_latent_name(s.substr(0, c)), v[0], v[1], static_cast<int>(v[2])};
    if (a.points != v[2]) throw ConfigError("axis point count must be an integer");
    a.values();
    return a;
  }

  int landscape_cmd() {
    const auto ms = load_models();
    if (ms.size() != 1) throw ConfigError("landscape takes exactly one model");
    const auto data = measurements();
    PropagationConfig pc;
    pc.mean_order = ms.front().mean_order;
    const auto l = likelihood_landscape(data, ms.front().params, latent_from(ls_at.empty() ? iv_init : ls_at),
                                        parse_axis(ls_x), parse_axis(ls_y), pc);
    std::ostringstream csv;
    write_landscape_csv(l, csv);
    if (!out_path.empty()) write_text(out_path, csv.str());
    else out << csv.str();
    int missing = 0;
    for (double v : l.nll) missing += std::isnan(v);
    out << "landscape " << l.xs.size() << "x" << l.ys.size() << ", " << missing << " missing\n";
    return kExitOk;
  }
};

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  auto r = std::make_unique<Runner>(Runner{out, err});
  CLI::App app{"Variational deep material network: training, uncertainty propagation, nonlinear prediction, "
               "calibration testing and inverse fitting."};
  app.name("vdmn");
  app.set_config("--config", "", "INI config file; [subcommand] sections set subcommand options");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", r->seed_flag, "random seed (fallback: VDMN_SEED, then 0)");
  app.add_option("--threads", r->threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", r->quiet, "suppress warnings");
  app.require_subcommand(1, 1);

  auto* gd = app.add_subcommand("gen-data", "generate the synthetic homogenization dataset");
  gd->add_option("--out", r->gd_out, "output directory (dataset.csv, specimens.csv)");
  gd->add_option("--pairs", r->gd_pairs, "number of LHS phase pairs");
  gd->add_option("--members", r->gd_ens.members, "oracle ensemble size");
  gd->add_option("--oracle-depth", r->gd_ens.depth, "oracle tree depth");
  gd->add_option("--angle-jitter", r->gd_ens.angle_jitter, "std of member angle jitter");
  gd->add_option("--weight-jitter", r->gd_ens.weight_jitter, "std of member log-weight jitter");
  gd->add_option("--vf-tolerance", r->gd_ens.vf_tolerance, "allowed member volume-fraction drift");
  gd->add_option("--train-frac", r->gd_train, "training fraction");
  gd->add_option("--val-frac", r->gd_val, "validation fraction");
  gd->add_option("--specimens", r->gd_specimens, "also write this many inverse-problem specimens");
  gd->add_option("--mu-e1", r->gd_latent.mu_e1, "specimen phase-1 mean modulus");
  gd->add_option("--logs-e1", r->gd_latent.log_var_e1, "specimen phase-1 log-variance");
  gd->add_option("--mu-e2", r->gd_latent.mu_e2, "specimen phase-2 mean modulus");
  gd->add_option("--logs-e2", r->gd_latent.log_var_e2, "specimen phase-2 log-variance");
  gd->add_option("--nu1", r->gd_latent.nu1, "specimen phase-1 Poisson ratio");
  gd->add_option("--nu2", r->gd_latent.nu2, "specimen phase-2 Poisson ratio");
  gd->add_option("--noise-var", r->gd_latent.noise_var, "specimen measurement noise variance");

  auto* tr = app.add_subcommand("train", "train a VDMN on a dataset");
  tr->add_option("--data", r->tr_data, "dataset file or gen-data directory");
  tr->add_option("--out", r->tr_out, "model file");
  tr->add_option("--history", r->tr_history, "per-epoch loss CSV");
  tr->add_option("--depth", r->tr.depth);
  tr->add_option("--epochs", r->tr.epochs);
  tr->add_option("--batch-size", r->tr.batch_size);
  tr->add_option("--lr", r->tr.lr0, "initial learning rate");
  tr->add_option("--penalty", r->tr.penalty, "weight-sum penalty");
  tr->add_option("--mean-order", r->tr.mean_order, "1 or 2");
  tr->add_flag("--second-order-theta", r->tr.second_order_theta);
  tr->add_flag("--allow-second-order-theta", r->tr.allow_second_order_theta);
  tr->add_option("--loss-mode", r->tr_loss, "riemannian or euclidean");
  tr->add_option("--scheduler", r->tr_sched, "cosine, sgdr or constant");
  tr->add_option("--restart-period", r->tr.restart_period);
  tr->add_option("--init-logvar", r->tr.init_logvar);
  tr->add_option("--seeds", r->tr_seeds, "train one model per seed (files get a _s<seed> suffix)")->delimiter(',');
  tr->add_option("--report-every", r->tr_report, "print progress every N epochs");

  auto add_model = [&](CLI::App* s) {
    s->add_option("--model", r->models, "model file (repeat to pool an ensemble)");
  };
  auto add_data = [&](CLI::App* s) {
    s->add_option("--data", r->data, "dataset file or gen-data directory");
    s->add_option("--split", r->split, "train, val or test");
  };

  auto* ev = app.add_subcommand("eval", "per-sample NLL and z-scores on a split");
  add_model(ev);
  add_data(ev);
  ev->add_option("--out", r->out_path, "CSV output (default stdout)");
  ev->add_option("--loss-mode", r->loss_override, "override the model's NLL mode");

  auto* ca = app.add_subcommand("calibrate", "graphical calibration test on a split");
  add_model(ca);
  add_data(ca);
  ca->add_option("--n-sim", r->n_sim, "envelope simulations");
  ca->add_option("--out", r->out_path, "calibration curve CSV");

  auto* pl = app.add_subcommand("predict-linear", "homogenized stiffness mean and covariance");
  add_model(pl);
  pl->add_option("--c1", r->pl_c1, "phase-1 stiffness C11,C22,C33,C12,C13,C23");
  pl->add_option("--c2", r->pl_c2, "phase-2 stiffness C11,C22,C33,C12,C13,C23");
  pl->add_option("--e1", r->pl_e1, "phase-1 Young's modulus (isotropic input)");
  pl->add_option("--nu1", r->pl_nu1);
  pl->add_option("--e2", r->pl_e2, "phase-2 Young's modulus (isotropic input)");
  pl->add_option("--nu2", r->pl_nu2);
  pl->add_option("--samples", r->pl_samples, "also report sampling-mode statistics");
  pl->add_option("--out", r->out_path, "CSV output (default stdout)");

  auto* pn = app.add_subcommand("predict-nonlinear", "sampled stress-strain curves");
  add_model(pn);
  pn->add_option("--phase1", r->pn_phase1, "elastic:E,nu or norton:E,nu,sigma_y[,N[,sigma_y_max,delta,K_p]]");
  pn->add_option("--phase2", r->pn_phase2);
  pn->add_option("--rate", r->pn_rate, "strain rate xx,yy,xy")->delimiter(',');
  pn->add_option("--final-strain", r->pn_final, "final eps_xx");
  pn->add_option("--steps", r->pn_steps);
  pn->add_option("--samples", r->pn_samples, "sampled DMNs");
  pn->add_flag("--mixed", r->pn_mixed, "impose sig_yy = sig_xy = 0");
  pn->add_option("--out", r->out_path, "curves CSV");
  pn->add_option("--summary", r->pn_summary, "per-step summary CSV");

  auto add_inverse = [&](CLI::App* s) {
    add_model(s);
    s->add_option("--measurements", r->iv_meas, "specimen CSV");
    s->add_option("--components", r->iv_components, "measured components, e.g. C11,C12");
    s->add_flag("--single", r->iv_single, "one randomly chosen listed component per specimen");
    s->add_option("--noise-var", r->iv_noise, "measurement noise variance");
    s->add_option("--nu1", r->iv_nu1);
    s->add_option("--nu2", r->iv_nu2);
    s->add_option("--out", r->out_path, "CSV output");
  };
  auto* iv = app.add_subcommand("invert", "maximum-likelihood latent moduli distributions");
  add_inverse(iv);
  iv->add_option("--init", r->iv_init, "mu_E1,logS_E1,mu_E2,logS_E2");
  iv->add_option("--optimizer", r->iv_optimizer, "auto, nelder-mead or cg");
  iv->add_option("--max-iter", r->iv_max_iter);
  iv->add_flag("--fit-noise", r->iv_fit_noise, "also fit the noise variance");

  auto* ls = app.add_subcommand("landscape", "NLL over a grid of two latent parameters");
  add_inverse(ls);
  ls->add_option("--x", r->ls_x, "name:lo:hi:points");
  ls->add_option("--y", r->ls_y, "name:lo:hi:points");
  ls->add_option("--at", r->ls_at, "fixed mu_E1,logS_E1,mu_E2,logS_E2");

  for (auto* s : {gd, tr, ev, ca, pl, pn, iv, ls}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }
  const bool was_quiet = log::quiet();
  log::quiet() = r->quiet || was_quiet;
  int code = kExitError;
  try {
    if (*gd) code = r->gen_data();
    else if (*tr) code = r->train_cmd();
    else if (*ev) code = r->eval_cmd();
    else if (*ca) code = r->calibrate_cmd();
    else if (*pl) code = r->predict_linear();
    else if (*pn) code = r->predict_nonlinear();
    else if (*iv) code = r->invert_cmd();
    else if (*ls) code = r->landscape_cmd();
  } catch (const std::exception& e) {
    err << "vdmn: error: " << e.what() << '\n';
    code = kExitError;
  }
  log::quiet() = was_quiet;
  return code;
}

}  // namespace vdmn::cli
