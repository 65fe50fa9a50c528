#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "orthomom/common.hpp"
#include "orthomom/dataset.hpp"
#include "orthomom/diagnostics.hpp"
#include "orthomom/funcdiff.hpp"
#include "orthomom/hte.hpp"
#include "orthomom/mc.hpp"
#include "orthomom/plm.hpp"
#include "orthomom/rng.hpp"

using json = nlohmann::json;
using namespace orthomom;

namespace {

// All reports are canonical JSON (sorted keys, fixed indentation), so a fixed
// seed and config reproduce the output byte for byte.
void emit_json(const json& j, const std::string& out) {
  std::string s = j.dump(2);
  s += "\n";
  if (out.empty()) {
    std::fwrite(s.data(), 1, s.size(), stdout);
    return;
  }
  std::ofstream f(out);
  if (!f) throw data_error("IoError", "cannot write " + out);
  f << s;
  if (!f) throw data_error("IoError", "write failed: " + out);
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error("ParseError", path + ": " + std::string(e.what()));
  }
  return j;
}

// Generated datasets use y1 / y2 / z2 / x1..xd; fill roles from those names
// when no roles file is given.
void infer_roles(Dataset& d) {
  Roles r;
  if (d.has("y1")) r.y1 = "y1";
  if (d.has("y2")) r.y2 = "y2";
  if (d.has("z2")) r.z2 = {"z2"};
  std::vector<std::pair<int, std::string>> xs;
  for (const auto& name : d.names()) {
    if (name.size() < 2 || name[0] != 'x') continue;
    bool digits = true;
    for (size_t i = 1; i < name.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(name[i]))) digits = false;
    if (digits) xs.emplace_back(std::stoi(name.substr(1)), name);
  }
  std::sort(xs.begin(), xs.end());
  for (auto& [num, name] : xs) r.x.push_back(name);
  d.roles = r;
}

Dataset load_data(const std::string& path, const std::string& roles_path) {
  if (!roles_path.empty()) return load_csv(path, roles_from_json_file(roles_path));
  Dataset d = load_csv(path);
  infer_roles(d);
  return d;
}

json roles_to_json(const Roles& r) {
  json j = json::object();
  if (!r.y1.empty()) j["y1"] = r.y1;
  if (!r.y2.empty()) j["y2"] = r.y2;
  if (!r.z2.empty()) j["z2"] = r.z2;
  if (!r.x.empty()) j["x"] = r.x;
  return j;
}

json moment_vector_to_json(const MomentVector& g) {
  json cells = json::array();
  for (const auto& v : g.cell_values)
    cells.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return cells;
}

json vec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec_from_strings(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string family, config, out, roles_out;
  long long n = 0;
  std::uint64_t seed = 0;
};

void run_simulate(const SimulateArgs& a) {
  json cfg = a.config.empty() ? json::object() : load_json_file(a.config);
  if (cfg.contains("n") || cfg.contains("seed"))
    throw data_error("BadSpec", "simulate: pass n and seed as flags, not in the config");
  if (a.n < 1) throw usage_error("simulate: need --n >= 1");
  Dataset d({"_"}, {Eigen::VectorXd::Zero(1)});
  if (a.family == "plm") {
    PlmDgp s = plm_dgp_from_json(cfg);
    s.n = static_cast<Eigen::Index>(a.n);
    s.seed = a.seed;
    d = gen_plm(s);
  } else if (a.family == "hte") {
    HteDgp s = hte_dgp_from_json(cfg);
    s.n = static_cast<Eigen::Index>(a.n);
    s.seed = a.seed;
    d = gen_hte(s);
  } else if (a.family == "rc") {
    RcDgp s = rc_dgp_from_json(cfg);
    s.n = static_cast<Eigen::Index>(a.n);
    s.seed = a.seed;
    d = gen_rc(s);
  } else if (a.family == "logit-panel") {
    LogitPanelDgp s = logit_panel_dgp_from_json(cfg);
    s.n = static_cast<Eigen::Index>(a.n);
    s.seed = a.seed;
    d = gen_logit_panel(s);
  } else if (a.family == "normal-means") {
    NormalMeansDgp s = normal_means_dgp_from_json(cfg);
    s.n = static_cast<Eigen::Index>(a.n);
    s.seed = a.seed;
    d = gen_normal_means(s);
  } else {
    throw usage_error("simulate: unknown family '" + a.family + "'");
  }
  write_csv(d, a.out);
  if (!a.roles_out.empty()) emit_json(roles_to_json(d.roles), a.roles_out);
}

// ---- plm ----------------------------------------------------------------------

struct PlmArgs {
  std::string data, roles, config, out;
  std::vector<std::string> estimators{"lr-2sls"};
  double theta_bar = 0;
  bool have_theta_bar = false;
  int k = 0;  // 0: keep config/default
  std::uint64_t seed = 0;
};

json fit_to_json(const PlmFit& f) {
  json j;
  j["theta_hat"] = f.theta_hat;
  j["se"] = f.se;
  j["relevance_denominator"] = f.relevance_denominator;
  j["degenerate"] = f.degenerate;
  return j;
}

void run_plm(const PlmArgs& a) {
  Dataset d = load_data(a.data, a.roles);
  PlmOptions opt = a.config.empty() ? PlmOptions{} : plm_options_from_json(load_json_file(a.config));
  if (a.k > 0) opt.K = a.k;
  opt.seed = a.seed;
  std::vector<std::string> tags = a.estimators;
  if (tags.size() == 1 && tags[0] == "all") tags = {"lr-2sls", "fs-2sls", "nlr", "plug-in"};
  for (const auto& t : tags)
    if (t != "lr-2sls" && t != "fs-2sls" && t != "nlr" && t != "plug-in")
      throw usage_error("plm: unknown estimator '" + t + "'");
  bool needs_oriv = a.have_theta_bar;
  for (const auto& t : tags)
    if (t != "plug-in") needs_oriv = true;

  Residualized res;
  OrivResult oriv;
  if (needs_oriv) {
    res = residualize(d, opt);
    oriv = oriv_instrument(d, opt, res);
  }
  json est = json::object();
  for (const auto& t : tags) {
    PlmFit f;
    if (t == "lr-2sls")
      f = estimate_lr_2sls_values(res.y1t, res.y2t, oriv.zeta);
    else if (t == "fs-2sls")
      f = estimate_fs2sls_values(d.col(d.roles.y1), d.col(d.roles.y2), oriv.zeta);
    else if (t == "nlr")
      f = estimate_nlr_values(res.y1t, oriv.zeta);
    else
      f = estimate_plugin(d, opt);
    est[t] = fit_to_json(f);
  }
  json j;
  j["schema_version"] = 1;
  j["n"] = static_cast<long long>(d.n());
  j["estimates"] = est;
  if (a.have_theta_bar) {
    ScoreTest t = score_test_values(res.y1t, res.y2t, oriv.zeta, a.theta_bar);
    json st;
    st["theta_bar"] = t.theta_bar;
    st["statistic"] = t.statistic;
    st["p_value"] = t.p_value;
    j["score_test"] = st;
  }
  emit_json(j, a.out);
}

// ---- hte ----------------------------------------------------------------------

struct HteArgs {
  std::string data, roles, config, oracle_p, out;
  int l = 0;
  double eta4_bar = 0;
  double level = 0.05;
  int k = 0;
  bool ci = false;
  std::uint64_t seed = 0;
};

HteOptions hte_opt_from_args(const HteArgs& a) {
  HteOptions opt = a.config.empty() ? HteOptions{} : hte_options_from_json(load_json_file(a.config));
  if (a.k > 0) opt.K = a.k;
  if (!a.oracle_p.empty()) opt.oracle_p = a.oracle_p;
  opt.level = a.level;
  opt.seed = a.seed;
  return opt;
}

void run_hte_test(const HteArgs& a) {
  Dataset d = load_data(a.data, a.roles);
  HteOptions opt = hte_opt_from_args(a);
  HteTestResult t = hte_test(d, a.l, a.eta4_bar, opt);
  json j;
  j["schema_version"] = 1;
  j["l"] = a.l;
  j["eta4_bar"] = t.eta4_bar;
  j["statistic"] = t.statistic;
  j["p_value"] = t.p_value;
  j["reject"] = t.reject;
  j["level"] = t.level;
  emit_json(j, a.out);
}

void run_hte_estimate(const HteArgs& a) {
  Dataset d = load_data(a.data, a.roles);
  HteOptions opt = hte_opt_from_args(a);
  HteEstimate e = hte_estimate(d, a.l, opt);
  json j;
  j["schema_version"] = 1;
  j["l"] = a.l;
  j["eta4_hat"] = e.eta4_hat;
  j["se"] = e.se;
  j["relevance_denominator"] = e.relevance_denominator;
  if (a.ci) {
    HteCi ci = hte_ci(d, a.l, opt);
    json c;
    c["lo"] = ci.lo;
    c["hi"] = ci.hi;
    c["empty"] = ci.empty_interval;
    c["level"] = opt.level;
    j["ci"] = c;
  }
  emit_json(j, a.out);
}

// ---- funcdiff -------------------------------------------------------------------

struct FuncdiffArgs {
  std::string model, moment = "nf", data, out;
  int nf_index = 0;
  std::vector<double> r, r1;
};

json data_test_block(const MomentVector& g, const Dataset& d) {
  Eigen::VectorXd gv = moment_values(g, d);
  std::vector<double> v(gv.data(), gv.data() + gv.size());
  double m = kahan_mean(v);
  double s = kahan_sd(v);
  double n = static_cast<double>(v.size());
  if (s <= 1e-14 * std::max(1.0, std::abs(m)))
    throw numerical_error("DegenerateVariance", "moment variance is zero on this data");
  json t;
  t["mean"] = m;
  t["se"] = s / std::sqrt(n);
  t["statistic"] = std::sqrt(n) * m / s;
  t["p_value"] = two_sided_p(std::sqrt(n) * m / s);
  return t;
}

void run_funcdiff(const FuncdiffArgs& a) {
  json mj = load_json_file(a.model);
  json j;
  j["schema_version"] = 1;

  // deconvolution family: continuous outcome, hat-function nullspace element
  if (mj.is_object() && mj.value("family", "") == "normal-means") {
    for (auto it = mj.begin(); it != mj.end(); ++it) {
      static const char* keys[] = {"family", "support", "theta", "grid"};
      bool known = false;
      for (const char* k : keys)
        if (it.key() == k) known = true;
      if (!known) throw data_error("BadSpec", "normal-means model: unknown key '" + it.key() + "'");
    }
    if (!mj.contains("support") || !mj.contains("theta"))
      throw data_error("BadSpec", "normal-means model: need 'support' and 'theta'");
    auto sup = mj.at("support").get<std::vector<double>>();
    Eigen::VectorXd support = vec_from_strings(sup);
    double theta = mj.at("theta").get<double>();
    if (!(theta > 0)) throw data_error("BadSpec", "normal-means model: need theta > 0");
    double sw = std::sqrt(theta);
    double lo = support.minCoeff() - 10.0 * sw, hi = support.maxCoeff() + 10.0 * sw;
    Eigen::Index points = 2001;
    if (mj.contains("grid")) {
      const json& gj = mj.at("grid");
      lo = gj.value("lo", lo);
      hi = gj.value("hi", hi);
      points = gj.value("points", points);
    }
    if (points < 2 || !(hi > lo)) throw data_error("BadSpec", "normal-means model: bad grid");
    NormalMeansMoment nm =
        normal_means_moment(support, theta, Eigen::VectorXd::LinSpaced(points, lo, hi));
    j["family"] = "normal-means";
    j["z"] = vec_to_json(nm.z);
    j["g"] = vec_to_json(nm.g);
    j["residual"] = nm.residual;
    emit_json(j, a.out);
    return;
  }

  DiscreteMixtureModel mod = DiscreteMixtureModel::from_json(mj);
  Eigen::VectorXd r = a.r.empty() ? Eigen::VectorXd(mod.alpha) : vec_from_strings(a.r);
  j["family"] = mod.family;
  MomentVector g_for_data;
  bool have_g = false;
  if (a.moment == "nf") {
    std::vector<MomentVector> basis = nf_moments(mod, mod.theta);
    json b = json::array();
    for (const auto& g : basis) b.push_back(moment_vector_to_json(g));
    j["basis"] = b;
    j["count"] = static_cast<int>(basis.size());
    if (a.nf_index >= 0 && a.nf_index < static_cast<int>(basis.size())) {
      g_for_data = basis[static_cast<size_t>(a.nf_index)];
      have_g = true;
      j["nf_index"] = a.nf_index;
    } else if (!a.data.empty()) {
      throw usage_error("funcdiff: nf_index out of range for the data test");
    }
  } else if (a.moment == "partial" || a.moment == "fully") {
    PartialMoment pm = solve_partial_moment(mod, mod.theta, r);
    MomentVector g = pm.g;
    if (a.moment == "fully") g = fully_robust_moment(mod, mod.theta, pm.g, nf_moments(mod, mod.theta));
    RelevanceResult rel = relevance_constant(mod, mod.theta, g, r);
    j["g"] = moment_vector_to_json(g);
    j["psi"] = pm.psi;
    json rj;
    rj["C"] = rel.C;
    rj["residual"] = rel.residual;
    j["relevance"] = rj;
    g_for_data = g;
    have_g = true;
  } else if (a.moment == "general") {
    if (a.r1.empty()) throw usage_error("funcdiff: --moment general needs --r1");
    Eigen::VectorXd r1 = vec_from_strings(a.r1);
    GeneralResult gr = general_algorithm(mod, mod.theta, r1, r);
    j["g"] = moment_vector_to_json(gr.g);
    j["gtilde"] = moment_vector_to_json(gr.gtilde);
    j["psi"] = gr.psi;
    j["A"] = vec_to_json(gr.A);
    j["adjoint_theta_residual"] = gr.adjoint_theta_residual;
    j["adjoint_grid_residual"] = gr.adjoint_grid_residual;
    g_for_data = gr.g;
    have_g = true;
  } else {
    throw usage_error("funcdiff: moment must be nf | partial | fully | general");
  }
  if (!a.data.empty()) {
    if (!have_g) throw usage_error("funcdiff: no moment selected for the data test");
    Dataset d = load_csv(a.data);
    j["test"] = data_test_block(g_for_data, d);
  }
  emit_json(j, a.out);
}

// ---- verify ----------------------------------------------------------------------

void run_verify(const std::string& target, long long n, int paths, std::uint64_t seed,
                const std::string& out) {
  OrthogonalityReport rep;
  if (target == "plm")
    rep = verify_plm(static_cast<Eigen::Index>(n), paths, seed);
  else if (target == "hte")
    rep = verify_hte(static_cast<Eigen::Index>(n), paths, seed);
  else if (target == "funcdiff")
    rep = verify_funcdiff(paths, seed);
  else
    throw usage_error("verify: target must be plm | hte | funcdiff");
  json j = rep.to_json();
  j["schema_version"] = 1;
  emit_json(j, out);
}

// ---- mc --------------------------------------------------------------------------

void run_mc(const std::string& config, const std::string& out, const std::string& records,
            int threads) {
  McConfig cfg = McConfig::from_json_file(config);
  if (threads <= 0) {
    const char* env = std::getenv("ORTHOMOM_THREADS");
    threads = env ? std::atoi(env) : 1;
    if (threads <= 0) threads = 1;
  }
  cfg.threads = threads;
  McReport rep = mc_run(cfg);
  std::fprintf(stderr, "mc: %d replications, %d failed, %.2fs\n",
               static_cast<int>(rep.records.size()), rep.n_failed, rep.wall_seconds);
  if (!records.empty()) rep.write_records_csv(records);
  emit_json(rep.to_json(), out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orthogonal-moment construction, estimation, and Monte Carlo toolkit"};
  app.require_subcommand(1);

  SimulateArgs sa;
  CLI::App* sim = app.add_subcommand("simulate", "draw a dataset from a built-in design");
  sim->add_option("--family", sa.family, "plm | hte | rc | logit-panel | normal-means")->required();
  sim->add_option("--n", sa.n, "sample size")->required();
  sim->add_option("--seed", sa.seed, "rng seed")->required();
  sim->add_option("--config", sa.config, "JSON file with design settings");
  sim->add_option("--out", sa.out, "output CSV path")->required();
  sim->add_option("--roles-out", sa.roles_out, "write a roles JSON next to the data");

  PlmArgs pa;
  CLI::App* plm = app.add_subcommand("plm", "partly linear IV estimators");
  plm->add_option("--data", pa.data, "CSV with outcome/treatment/instrument/controls")->required();
  plm->add_option("--roles", pa.roles, "roles JSON (default: y1/y2/z2/x1..xd by name)");
  plm->add_option("--estimator", pa.estimators,
                  "lr-2sls | fs-2sls | nlr | plug-in | all (repeatable)")
      ->delimiter(',');
  CLI::Option* tb = plm->add_option("--theta-bar", pa.theta_bar, "also run the score test here");
  plm->add_option("--k", pa.k, "cross-fitting folds");
  plm->add_option("--config", pa.config, "JSON file with first-step options");
  plm->add_option("--seed", pa.seed, "fold seed")->required();
  plm->add_option("--out", pa.out, "output JSON path (default: stdout)");

  HteArgs ha;
  CLI::App* htest = app.add_subcommand("hte-test", "orthogonal test for one interaction coefficient");
  htest->add_option("--data", ha.data, "CSV input")->required();
  htest->add_option("--roles", ha.roles, "roles JSON");
  htest->add_option("--l", ha.l, "interaction index (0-based)");
  htest->add_option("--eta4-bar", ha.eta4_bar, "tested value");
  htest->add_option("--level", ha.level, "test level");
  htest->add_option("--k", ha.k, "cross-fitting folds");
  htest->add_option("--oracle-p", ha.oracle_p, "column holding E[Y2|W]");
  htest->add_option("--config", ha.config, "JSON file with step-1 options");
  htest->add_option("--seed", ha.seed, "fold seed")->required();
  htest->add_option("--out", ha.out, "output JSON path (default: stdout)");

  HteArgs ea;
  CLI::App* hest = app.add_subcommand("hte-estimate", "ratio estimator for one interaction coefficient");
  hest->add_option("--data", ea.data, "CSV input")->required();
  hest->add_option("--roles", ea.roles, "roles JSON");
  hest->add_option("--l", ea.l, "interaction index (0-based)");
  hest->add_option("--level", ea.level, "CI level");
  hest->add_option("--k", ea.k, "cross-fitting folds");
  hest->add_option("--oracle-p", ea.oracle_p, "column holding E[Y2|W]");
  hest->add_option("--config", ea.config, "JSON file with step-1 options");
  hest->add_flag("--ci", ea.ci, "add the test-inversion confidence interval");
  hest->add_option("--seed", ea.seed, "fold seed")->required();
  hest->add_option("--out", ea.out, "output JSON path (default: stdout)");

  FuncdiffArgs fa;
  CLI::App* fd = app.add_subcommand("funcdiff", "nuisance-free and robust mixture moments");
  fd->add_option("--model", fa.model, "model JSON file")->required();
  fd->add_option("--moment", fa.moment, "nf | partial | fully | general");
  fd->add_option("--nf-index", fa.nf_index, "which nullspace element to report/test");
  fd->add_option("--r", fa.r, "target values r(alpha) on the grid")->delimiter(',');
  fd->add_option("--r1", fa.r1, "theta-part of the Riesz representer (general)")->delimiter(',');
  fd->add_option("--data", fa.data, "CSV to evaluate the moment t-test on");
  fd->add_option("--out", fa.out, "output JSON path (default: stdout)");

  std::string vt, vout;
  long long vn = 20000;
  int vpaths = 20;
  std::uint64_t vseed = 0;
  CLI::App* ver = app.add_subcommand("verify", "numerical orthogonality check");
  ver->add_option("--target", vt, "plm | hte | funcdiff")->required();
  ver->add_option("--n", vn, "sample size for the check");
  ver->add_option("--paths", vpaths, "number of random directions");
  ver->add_option("--seed", vseed, "rng seed")->required();
  ver->add_option("--out", vout, "output JSON path (default: stdout)");

  std::string mcfg, mout, mrec;
  int mthreads = 0;
  CLI::App* mc = app.add_subcommand("mc", "Monte Carlo study driver");
  mc->add_option("--config", mcfg, "mc config JSON file")->required();
  mc->add_option("--out", mout, "report JSON path (default: stdout)");
  mc->add_option("--records", mrec, "per-replication records CSV path");
  mc->add_option("--threads", mthreads, "worker threads (fallback: ORTHOMOM_THREADS, then 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(sim)) {
      run_simulate(sa);
    } else if (app.got_subcommand(plm)) {
      pa.have_theta_bar = tb->count() > 0;
      run_plm(pa);
    } else if (app.got_subcommand(htest)) {
      run_hte_test(ha);
    } else if (app.got_subcommand(hest)) {
      run_hte_estimate(ea);
    } else if (app.got_subcommand(fd)) {
      run_funcdiff(fa);
    } else if (app.got_subcommand(ver)) {
      run_verify(vt, vn, vpaths, vseed, vout);
    } else if (app.got_subcommand(mc)) {
      run_mc(mcfg, mout, mrec, mthreads);
    }
  } catch (const Error& e) {
    json err;
    err["error"] = e.code();
    err["message"] = e.what();
    std::string s = err.dump();
    std::fprintf(stderr, "%s\n", s.c_str());
    switch (e.category()) {
      case ErrorCategory::Usage:
        return 1;
      case ErrorCategory::Data:
        return 2;
      case ErrorCategory::Numerical:
        return 3;
    }
    return 1;
  } catch (const std::exception& e) {
    json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::string s = err.dump();
    std::fprintf(stderr, "%s\n", s.c_str());
    return 2;
  }
  return 0;
}
