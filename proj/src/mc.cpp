#include "orthomom/mc.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <thread>

#include "orthomom/common.hpp"
#include "orthomom/dataset.hpp"
#include "orthomom/diagnostics.hpp"
#include "orthomom/funcdiff.hpp"
#include "orthomom/hte.hpp"
#include "orthomom/plm.hpp"
#include "orthomom/rng.hpp"

namespace orthomom {

using json = nlohmann::json;

static const char* kPipelines[] = {"plm-test", "hte-test",     "plm-estimate",
                                   "hte-estimate", "hte-ci", "funcdiff-test"};

McConfig McConfig::from_json(const json& j) {
  if (!j.is_object()) throw data_error("BadSpec", "mc config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* keys[] = {"pipeline", "R", "n", "seed", "level", "dgp", "pipeline_config"};
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known) throw data_error("BadSpec", "mc config: unknown key '" + it.key() + "'");
  }
  McConfig c;
  if (!j.contains("pipeline")) throw data_error("BadSpec", "mc config: 'pipeline' is required");
  c.pipeline = j.at("pipeline").get<std::string>();
  bool ok = false;
  for (const char* p : kPipelines)
    if (c.pipeline == p) ok = true;
  if (!ok) throw data_error("BadSpec", "mc config: unknown pipeline '" + c.pipeline + "'");
  if (!j.contains("seed")) throw data_error("BadSpec", "mc config: 'seed' is required");
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("R")) c.R = j.at("R").get<int>();
  if (j.contains("n")) c.n = j.at("n").get<long long>();
  if (j.contains("level")) c.level = j.at("level").get<double>();
  if (j.contains("dgp")) c.dgp = j.at("dgp");
  if (j.contains("pipeline_config")) c.pipeline_config = j.at("pipeline_config");
  if (c.R < 1) throw data_error("BadSpec", "mc config: need R >= 1");
  if (c.n < 2) throw data_error("BadSpec", "mc config: need n >= 2");
  if (!(c.level > 0 && c.level < 1)) throw data_error("BadSpec", "mc config: level must be in (0,1)");
  if (!c.dgp.is_null() && !c.dgp.is_object())
    throw data_error("BadSpec", "mc config: 'dgp' must be an object");
  if (!c.pipeline_config.is_null() && !c.pipeline_config.is_object())
    throw data_error("BadSpec", "mc config: 'pipeline_config' must be an object");
  if (c.dgp.is_null()) c.dgp = json::object();
  if (c.pipeline_config.is_null()) c.pipeline_config = json::object();
  if (c.dgp.contains("seed") || c.dgp.contains("n"))
    throw data_error("BadSpec", "mc config: set n and seed at the top level, not in 'dgp'");
  return c;
}

McConfig McConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open mc config: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error("ParseError", "mc config " + path + ": " + e.what());
  }
  return from_json(j);
}

json McConfig::to_json() const {
  json j;
  j["pipeline"] = pipeline;
  j["R"] = R;
  j["n"] = n;
  j["seed"] = seed;
  j["level"] = level;
  j["dgp"] = dgp;
  j["pipeline_config"] = pipeline_config;
  return j;
}

// ---- pipeline-config parsing ----------------------------------------------

static void check_pc_keys(const json& j, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw data_error("BadSpec", "pipeline_config: unknown key '" + it.key() + "'");
  }
}

// pipeline_config mixes option keys with pipeline-level keys; strip the
// latter and let the strict option parsers reject typos in the rest.
static json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

static HteOptions hte_options_from(const json& pc, double level) {
  HteOptions o = hte_options_from_json(without(pc, {"l", "eta4_bar"}));
  o.level = level;
  return o;
}

// ---- aggregation helpers ---------------------------------------------------

static std::vector<double> collect(const std::vector<McRecord>& recs, size_t j) {
  std::vector<double> out;
  out.reserve(recs.size());
  for (const auto& r : recs)
    if (!r.failed) out.push_back(r.values[j]);
  return out;
}

static json rate_block(const std::vector<double>& indicator) {
  json b;
  if (indicator.empty()) {
    b["rate"] = nullptr;
    b["se"] = nullptr;
    return b;
  }
  double p = kahan_mean(indicator);
  b["rate"] = p;
  b["se"] = std::sqrt(p * (1.0 - p) / static_cast<double>(indicator.size()));
  return b;
}

static json estimate_block(const std::vector<double>& est, const std::vector<double>& se,
                           const std::vector<double>& cov, double truth) {
  json b;
  b["truth"] = truth;
  if (est.empty()) {
    for (const char* k : {"bias", "sd", "rmse", "mean_se", "coverage", "coverage_se"})
      b[k] = nullptr;
    return b;
  }
  b["bias"] = kahan_mean(est) - truth;
  b["sd"] = kahan_sd(est);
  std::vector<double> sq(est.size());
  for (size_t i = 0; i < est.size(); ++i) sq[i] = (est[i] - truth) * (est[i] - truth);
  b["rmse"] = std::sqrt(kahan_mean(sq));
  b["mean_se"] = kahan_mean(se);
  json cb = rate_block(cov);
  b["coverage"] = cb["rate"];
  b["coverage_se"] = cb["se"];
  return b;
}

// ---- pipelines --------------------------------------------------------------

namespace {

struct Pipeline {
  std::vector<std::string> value_names;
  std::function<std::vector<double>(int)> run;  // throws Error on per-rep failure
  std::function<json(const std::vector<McRecord>&)> aggregate;
};

}  // namespace

static Pipeline make_plm_test(const McConfig& cfg) {
  PlmDgp base = plm_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  PlmOptions opt0 = plm_options_from_json(without(cfg.pipeline_config, {"theta_bar"}));
  const double theta_bar = cfg.pipeline_config.value("theta_bar", base.theta0);
  const double level = cfg.level;
  const std::uint64_t master = cfg.seed;
  Pipeline p;
  p.value_names = {"statistic", "p_value", "reject"};
  p.run = [base, opt0, theta_bar, level, master](int r) {
    PlmDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_plm(dg);
    PlmOptions opt = opt0;
    opt.seed = derive_seed(dg.seed, 77);
    ScoreTest t = score_test_theta(d, theta_bar, opt);
    return std::vector<double>{t.statistic, t.p_value, t.p_value < level ? 1.0 : 0.0};
  };
  p.aggregate = [level, theta_bar](const std::vector<McRecord>& recs) {
    json a;
    a["level"] = level;
    a["theta_bar"] = theta_bar;
    json rb = rate_block(collect(recs, 2));
    a["rejection_rate"] = rb["rate"];
    a["rejection_se"] = rb["se"];
    return a;
  };
  return p;
}

static Pipeline make_plm_estimate(const McConfig& cfg) {
  PlmDgp base = plm_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  PlmOptions opt0 = plm_options_from_json(without(cfg.pipeline_config, {"estimators"}));
  std::vector<std::string> tags =
      cfg.pipeline_config.value("estimators", std::vector<std::string>{"lr-2sls"});
  if (tags.empty()) throw data_error("BadSpec", "plm-estimate: empty estimator list");
  for (const auto& t : tags)
    if (t != "lr-2sls" && t != "fs-2sls" && t != "nlr" && t != "plug-in")
      throw data_error("BadSpec", "plm-estimate: unknown estimator '" + t + "'");
  const double truth = base.theta0;
  const double z = norm_quantile(1.0 - cfg.level / 2.0);
  const std::uint64_t master = cfg.seed;
  bool needs_oriv = false;
  for (const auto& t : tags)
    if (t != "plug-in") needs_oriv = true;

  Pipeline p;
  for (const auto& t : tags) {
    p.value_names.push_back(t + ".theta_hat");
    p.value_names.push_back(t + ".se");
    p.value_names.push_back(t + ".covered");
  }
  p.run = [base, opt0, tags, truth, z, master, needs_oriv](int r) {
    PlmDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_plm(dg);
    PlmOptions opt = opt0;
    opt.seed = derive_seed(dg.seed, 77);
    Residualized res;
    OrivResult oriv;
    if (needs_oriv) {
      res = residualize(d, opt);
      oriv = oriv_instrument(d, opt, res);
    }
    std::vector<double> out;
    out.reserve(tags.size() * 3);
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
      out.push_back(f.theta_hat);
      out.push_back(f.se);
      out.push_back(std::abs(f.theta_hat - truth) <= z * f.se ? 1.0 : 0.0);
    }
    return out;
  };
  p.aggregate = [tags, truth](const std::vector<McRecord>& recs) {
    json a;
    json est = json::object();
    for (size_t t = 0; t < tags.size(); ++t)
      est[tags[t]] =
          estimate_block(collect(recs, 3 * t), collect(recs, 3 * t + 1), collect(recs, 3 * t + 2), truth);
    a["estimators"] = est;
    a["truth"] = truth;
    return a;
  };
  return p;
}

static double hte_truth(const HteDgp& dg, int l) {
  return dg.eta04.size() > static_cast<Eigen::Index>(l) ? dg.eta04(l) : 0.0;
}

static Pipeline make_hte_test(const McConfig& cfg) {
  HteDgp base = hte_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  HteOptions opt0 = hte_options_from(cfg.pipeline_config, cfg.level);
  const int l = cfg.pipeline_config.value("l", 0);
  const double eta4_bar = cfg.pipeline_config.value("eta4_bar", hte_truth(base, l));
  const std::uint64_t master = cfg.seed;
  Pipeline p;
  p.value_names = {"statistic", "p_value", "reject"};
  p.run = [base, opt0, l, eta4_bar, master](int r) {
    HteDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_hte(dg);
    HteOptions opt = opt0;
    opt.seed = derive_seed(dg.seed, 77);
    HteTestResult t = hte_test(d, l, eta4_bar, opt);
    return std::vector<double>{t.statistic, t.p_value, t.reject ? 1.0 : 0.0};
  };
  const double level = cfg.level;
  p.aggregate = [level, eta4_bar](const std::vector<McRecord>& recs) {
    json a;
    a["level"] = level;
    a["eta4_bar"] = eta4_bar;
    json rb = rate_block(collect(recs, 2));
    a["rejection_rate"] = rb["rate"];
    a["rejection_se"] = rb["se"];
    return a;
  };
  return p;
}

static Pipeline make_hte_estimate(const McConfig& cfg) {
  HteDgp base = hte_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  HteOptions opt0 = hte_options_from(cfg.pipeline_config, cfg.level);
  const int l = cfg.pipeline_config.value("l", 0);
  const double truth = hte_truth(base, l);
  const double z = norm_quantile(1.0 - cfg.level / 2.0);
  const std::uint64_t master = cfg.seed;
  Pipeline p;
  p.value_names = {"eta4_hat", "se", "covered"};
  p.run = [base, opt0, l, truth, z, master](int r) {
    HteDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_hte(dg);
    HteOptions opt = opt0;
    opt.seed = derive_seed(dg.seed, 77);
    HteEstimate e = hte_estimate(d, l, opt);
    double cov = std::abs(e.eta4_hat - truth) <= z * e.se ? 1.0 : 0.0;
    return std::vector<double>{e.eta4_hat, e.se, cov};
  };
  p.aggregate = [truth](const std::vector<McRecord>& recs) {
    return estimate_block(collect(recs, 0), collect(recs, 1), collect(recs, 2), truth);
  };
  return p;
}

static Pipeline make_hte_ci(const McConfig& cfg) {
  HteDgp base = hte_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  HteOptions opt0 = hte_options_from(cfg.pipeline_config, cfg.level);
  const int l = cfg.pipeline_config.value("l", 0);
  const double truth = hte_truth(base, l);
  const std::uint64_t master = cfg.seed;
  Pipeline p;
  p.value_names = {"lo", "hi", "covered", "length", "empty"};
  p.run = [base, opt0, l, truth, master](int r) {
    HteDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_hte(dg);
    HteOptions opt = opt0;
    opt.seed = derive_seed(dg.seed, 77);
    HteCi ci = hte_ci(d, l, opt);
    double covered = (!ci.empty_interval && ci.lo <= truth && truth <= ci.hi) ? 1.0 : 0.0;
    double length = ci.empty_interval ? 0.0 : ci.hi - ci.lo;
    return std::vector<double>{ci.lo, ci.hi, covered, length, ci.empty_interval ? 1.0 : 0.0};
  };
  p.aggregate = [truth](const std::vector<McRecord>& recs) {
    json a;
    a["truth"] = truth;
    json cb = rate_block(collect(recs, 2));
    a["coverage"] = cb["rate"];
    a["coverage_se"] = cb["se"];
    std::vector<double> len = collect(recs, 3);
    a["mean_length"] = len.empty() ? json(nullptr) : json(kahan_mean(len));
    json eb = rate_block(collect(recs, 4));
    a["empty_rate"] = eb["rate"];
    return a;
  };
  return p;
}

static Pipeline make_funcdiff_test(const McConfig& cfg) {
  check_pc_keys(cfg.pipeline_config, {"moment", "nf_index", "r", "theta_eval"});
  LogitPanelDgp base = logit_panel_dgp_from_json(cfg.dgp);
  base.n = static_cast<Eigen::Index>(cfg.n);
  const json& pc = cfg.pipeline_config;
  const double theta_eval = pc.value("theta_eval", base.theta0);

  // fixed moment function, built once from the model evaluated at theta_eval
  Eigen::VectorXd grid =
      base.alpha_grid.size() ? base.alpha_grid : (Eigen::VectorXd(3) << -1, 0, 1).finished();
  Eigen::VectorXd w = base.weights.size()
                          ? base.weights
                          : Eigen::VectorXd::Constant(grid.size(), 1.0 / static_cast<double>(grid.size()));
  DiscreteMixtureModel mod = DiscreteMixtureModel::logit_panel(theta_eval, grid, w, base.cells);
  if (base.cell_weights.size()) {
    for (size_t c = 0; c < mod.cells.size(); ++c)
      mod.cells[c].weight = base.cell_weights(static_cast<Eigen::Index>(c));
    mod.validate();
  }
  const std::string kind = pc.value("moment", "nf");
  Eigen::VectorXd r_vec = grid;
  if (pc.contains("r")) {
    auto rv = pc.at("r").get<std::vector<double>>();
    r_vec = Eigen::Map<const Eigen::VectorXd>(rv.data(), static_cast<Eigen::Index>(rv.size()));
  }
  MomentVector g;
  if (kind == "nf") {
    std::vector<MomentVector> basis = nf_moments(mod, mod.theta);
    int idx = pc.value("nf_index", 0);
    if (idx < 0 || idx >= static_cast<int>(basis.size()))
      throw data_error("BadSpec", "funcdiff-test: nf_index out of range (basis size " +
                                      std::to_string(basis.size()) + ")");
    g = basis[static_cast<size_t>(idx)];
  } else if (kind == "partial") {
    g = solve_partial_moment(mod, mod.theta, r_vec).g;
  } else if (kind == "fully") {
    PartialMoment pm = solve_partial_moment(mod, mod.theta, r_vec);
    g = fully_robust_moment(mod, mod.theta, pm.g, nf_moments(mod, mod.theta));
  } else {
    throw data_error("BadSpec", "funcdiff-test: moment must be nf | partial | fully");
  }

  const double level = cfg.level;
  const std::uint64_t master = cfg.seed;
  Pipeline p;
  p.value_names = {"statistic", "p_value", "reject"};
  p.run = [base, g, level, master](int r) {
    LogitPanelDgp dg = base;
    dg.seed = derive_seed(master, static_cast<std::uint64_t>(r));
    Dataset d = gen_logit_panel(dg);
    Eigen::VectorXd gv = moment_values(g, d);
    double n = static_cast<double>(gv.size());
    std::vector<double> v(gv.data(), gv.data() + gv.size());
    double m = kahan_mean(v);
    double s = kahan_sd(v);
    if (s <= 1e-14 * std::max(1.0, std::abs(m)))
      throw numerical_error("DegenerateVariance", "funcdiff-test: moment variance is zero");
    double stat = std::sqrt(n) * m / s;
    double pv = two_sided_p(stat);
    return std::vector<double>{stat, pv, pv < level ? 1.0 : 0.0};
  };
  p.aggregate = [level, theta_eval, kind](const std::vector<McRecord>& recs) {
    json a;
    a["level"] = level;
    a["moment"] = kind;
    a["theta_eval"] = theta_eval;
    json rb = rate_block(collect(recs, 2));
    a["rejection_rate"] = rb["rate"];
    a["rejection_se"] = rb["se"];
    return a;
  };
  return p;
}

// ---- driver -----------------------------------------------------------------

McReport mc_run(const McConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  Pipeline pipe;
  if (cfg.pipeline == "plm-test")
    pipe = make_plm_test(cfg);
  else if (cfg.pipeline == "plm-estimate")
    pipe = make_plm_estimate(cfg);
  else if (cfg.pipeline == "hte-test")
    pipe = make_hte_test(cfg);
  else if (cfg.pipeline == "hte-estimate")
    pipe = make_hte_estimate(cfg);
  else if (cfg.pipeline == "hte-ci")
    pipe = make_hte_ci(cfg);
  else if (cfg.pipeline == "funcdiff-test")
    pipe = make_funcdiff_test(cfg);
  else
    throw data_error("BadSpec", "unknown pipeline '" + cfg.pipeline + "'");

  McReport rep;
  rep.config = cfg;
  rep.value_names = pipe.value_names;
  rep.records.resize(static_cast<size_t>(cfg.R));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= cfg.R) break;
      McRecord rec;
      rec.rep = i;
      try {
        rec.values = pipe.run(i);
      } catch (const Error& e) {
        rec.failed = true;
        rec.error_code = e.code();
      } catch (const std::exception&) {
        rec.failed = true;
        rec.error_code = "Exception";
      }
      rep.records[static_cast<size_t>(i)] = std::move(rec);
    }
  };
  int T = std::max(1, cfg.threads);
  T = static_cast<int>(std::min<long long>(T, cfg.R));
  if (T == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(T - 1));
    for (int t = 1; t < T; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  for (const auto& r : rep.records)
    if (r.failed) ++rep.n_failed;
  rep.aggregates = pipe.aggregate(rep.records);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

json McReport::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["config"] = config.to_json();
  j["value_names"] = value_names;
  j["replications"] = static_cast<int>(records.size());
  j["failures"] = n_failed;
  j["denominator"] = static_cast<int>(records.size()) - n_failed;
  json fc = json::object();
  for (const auto& r : records)
    if (r.failed) fc[r.error_code] = fc.value(r.error_code, 0) + 1;
  j["failure_codes"] = fc;
  j["aggregates"] = aggregates;
  return j;
}

void McReport::write_records_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw data_error("IoError", "cannot write " + path);
  out << "rep,failed";
  for (const auto& n : value_names) out << "," << n;
  out << "\n";
  char buf[40];
  for (const auto& r : records) {
    out << r.rep << "," << (r.failed ? 1 : 0);
    for (size_t j = 0; j < value_names.size(); ++j) {
      if (r.failed) {
        out << ",nan";
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", r.values[j]);
        out << "," << buf;
      }
    }
    out << "\n";
  }
  if (!out) throw data_error("IoError", "write failed: " + path);
}

}  // namespace orthomom
