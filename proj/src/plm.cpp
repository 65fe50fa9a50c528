#include "orthomom/plm.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace orthomom {

PlmOptions plm_options_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw data_error("BadSpec", "plm options must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* keys[] = {"k",      "short",     "long",      "in_sample",
                                 "oracle", "oracle_r1", "oracle_r2", "oracle_mu"};
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known) throw data_error("BadSpec", "plm options: unknown key '" + it.key() + "'");
  }
  PlmOptions o;
  if (j.contains("k")) o.K = j.at("k").get<int>();
  if (j.contains("short")) o.short_spec = LearnerSpec::from_json(j.at("short"));
  if (j.contains("long")) o.long_spec = LearnerSpec::from_json(j.at("long"));
  if (j.contains("in_sample")) o.in_sample = j.at("in_sample").get<bool>();
  if (j.value("oracle", false)) {
    o.oracle_r1 = "oracle_r1";
    o.oracle_r2 = "oracle_r2";
    o.oracle_mu = "oracle_mu";
  }
  if (j.contains("oracle_r1")) o.oracle_r1 = j.at("oracle_r1").get<std::string>();
  if (j.contains("oracle_r2")) o.oracle_r2 = j.at("oracle_r2").get<std::string>();
  if (j.contains("oracle_mu")) o.oracle_mu = j.at("oracle_mu").get<std::string>();
  return o;
}

namespace {

Eigen::MatrixXd controls(const Dataset& d) {
  if (d.roles.x.empty()) throw data_error("BadSpec", "plm: no control columns in roles");
  return d.matrix(d.roles.x);
}

Eigen::MatrixXd long_features(const Dataset& d) {
  std::vector<std::string> f = d.roles.x;
  if (d.roles.z2.empty()) throw data_error("BadSpec", "plm: no instrument columns in roles");
  f.insert(f.end(), d.roles.z2.begin(), d.roles.z2.end());
  return d.matrix(f);
}

Eigen::VectorXd fit_predict_in_sample(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const LearnerSpec& spec) {
  // least-squares degrades to the minimum-norm projection here so collinear
  // designs (e.g. an instrument duplicating a control) stay well defined
  if (spec.method == "least-squares") {
    Eigen::MatrixXd D(X.rows(), X.cols() + 1);
    D.col(0).setOnes();
    D.rightCols(X.cols()) = X;
    return project_onto(D, y);
  }
  return fit(X, y, spec).predict(X);
}

Eigen::VectorXd oof_or_in_sample(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const LearnerSpec& spec, const PlmOptions& opt,
                                 const std::vector<int>& folds) {
  if (opt.in_sample) return fit_predict_in_sample(X, y, spec);
  if (spec.method == "least-squares") {
    Eigen::MatrixXd D(X.rows(), X.cols() + 1);
    D.col(0).setOnes();
    D.rightCols(X.cols()) = X;
    return project_onto_oof(D, y, folds, opt.K);
  }
  return cross_fit_with_folds(X, y, spec, folds, opt.K).values;
}

double sd_of(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

PlmFit ratio_fit(const std::string& tag, const Eigen::VectorXd& num_lhs,
                 const Eigen::VectorXd& den_rhs, const Eigen::VectorXd& inst) {
  // theta = mean(inst .* num_lhs) / mean(inst .* den_rhs)
  Eigen::Index n = inst.size();
  double dn = static_cast<double>(n);
  double denom = inst.dot(den_rhs) / dn;
  double sz = sd_of(inst), sy = sd_of(den_rhs);
  PlmFit out;
  out.estimator = tag;
  out.relevance_denominator = denom;
  bool collapsed = sz <= 1e-12 * std::max(1e-300, sy);
  if (collapsed || std::abs(denom) <= 1e-8 * sz * sy) {
    out.degenerate = true;
    throw numerical_error("IrrelevantInstrument",
                          tag + ": instrument is irrelevant (|mean| = " + std::to_string(std::abs(denom)) +
                              " below floor)");
  }
  out.theta_hat = inst.dot(num_lhs) / dn / denom;
  out.moment_values = (num_lhs - out.theta_hat * den_rhs).cwiseProduct(inst);
  out.se = sd_of(out.moment_values) / (std::sqrt(dn) * std::abs(denom));
  return out;
}

}  // namespace

Residualized residualize(const Dataset& d, const PlmOptions& opt) {
  Residualized r;
  const Eigen::VectorXd& y1 = d.col(d.roles.y1);
  const Eigen::VectorXd& y2 = d.col(d.roles.y2);
  if (!opt.oracle_r1.empty() && !opt.oracle_r2.empty()) {
    r.r1hat = d.col(opt.oracle_r1);
    r.r2hat = d.col(opt.oracle_r2);
  } else {
    Eigen::MatrixXd X = controls(d);
    std::vector<int> folds = opt.in_sample ? std::vector<int>() : make_folds(d.n(), opt.K, opt.seed);
    r.r1hat = oof_or_in_sample(X, y1, opt.short_spec, opt, folds);
    r.r2hat = oof_or_in_sample(X, y2, opt.short_spec, opt, folds);
  }
  r.y1t = y1 - r.r1hat;
  r.y2t = y2 - r.r2hat;
  return r;
}

OrivResult oriv_instrument(const Dataset& d, const PlmOptions& opt) {
  return oriv_instrument(d, opt, residualize(d, opt));
}

OrivResult oriv_instrument(const Dataset& d, const PlmOptions& opt, const Residualized& res) {
  OrivResult out;
  Eigen::VectorXd mu;
  if (!opt.oracle_mu.empty()) {
    mu = d.col(opt.oracle_mu);
  } else {
    Eigen::MatrixXd W = long_features(d);
    std::vector<int> folds = opt.in_sample ? std::vector<int>() : make_folds(d.n(), opt.K, opt.seed);
    mu = oof_or_in_sample(W, d.col(d.roles.y2), opt.long_spec, opt, folds);
  }
  out.zeta = mu - res.r2hat;
  double sz = sd_of(out.zeta);
  double sy = sd_of(d.col(d.roles.y2));
  out.degenerate = sz <= 1e-12 * std::max(1e-300, sy);
  return out;
}

PlmFit estimate_lr_2sls_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& y2t,
                               const Eigen::VectorXd& zeta) {
  return ratio_fit("lr-2sls", y1t, y2t, zeta);
}

PlmFit estimate_lr_2sls(const Dataset& d, const PlmOptions& opt) {
  Residualized r = residualize(d, opt);
  OrivResult z = oriv_instrument(d, opt, r);
  return estimate_lr_2sls_values(r.y1t, r.y2t, z.zeta);
}

PlmFit estimate_fs2sls_values(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& zeta) {
  return ratio_fit("fs-2sls", y1, y2, zeta);
}

PlmFit estimate_fs2sls(const Dataset& d, const PlmOptions& opt) {
  Residualized r = residualize(d, opt);
  OrivResult z = oriv_instrument(d, opt, r);
  return estimate_fs2sls_values(d.col(d.roles.y1), d.col(d.roles.y2), z.zeta);
}

PlmFit estimate_nlr_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& zeta) {
  return ratio_fit("nlr", y1t, zeta, zeta);
}

PlmFit estimate_nlr(const Dataset& d, const PlmOptions& opt) {
  Residualized r = residualize(d, opt);
  OrivResult z = oriv_instrument(d, opt, r);
  return estimate_nlr_values(r.y1t, z.zeta);
}

PlmFit estimate_plugin_values(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& z2, const Eigen::VectorXd& r1hat,
                              const Eigen::VectorXd& r2hat) {
  PlmFit f = ratio_fit("plug-in", y1 - r1hat, y2 - r2hat, z2);
  return f;
}

PlmFit estimate_plugin(const Dataset& d, const PlmOptions& opt) {
  PlmOptions o = opt;
  o.in_sample = true;  // the naive configuration: no cross-fitting
  Residualized r = residualize(d, o);
  if (d.roles.z2.size() != 1) throw data_error("BadSpec", "plug-in: needs a single instrument column");
  return estimate_plugin_values(d.col(d.roles.y1), d.col(d.roles.y2), d.col(d.roles.z2[0]),
                                r.r1hat, r.r2hat);
}

ScoreTest score_test_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& y2t,
                            const Eigen::VectorXd& zeta, double theta_bar) {
  Eigen::VectorXd g = (y1t - theta_bar * y2t).cwiseProduct(zeta);
  double n = static_cast<double>(g.size());
  double m = g.mean();
  double s = sd_of(g);
  if (s <= 1e-14 * std::max(1.0, std::abs(m)))
    throw numerical_error("DegenerateVariance", "score test: moment variance is numerically zero");
  ScoreTest t;
  t.theta_bar = theta_bar;
  t.statistic = std::sqrt(n) * m / s;
  t.p_value = two_sided_p(t.statistic);
  return t;
}

ScoreTest score_test_theta(const Dataset& d, double theta_bar, const PlmOptions& opt) {
  Residualized r = residualize(d, opt);
  OrivResult z = oriv_instrument(d, opt, r);
  return score_test_values(r.y1t, r.y2t, z.zeta, theta_bar);
}

Eigen::VectorXd hd_gamma_instrument(const Dataset& d, const DictionarySpec& dict, int K,
                                    std::uint64_t seed) {
  if (d.roles.z2.size() != 1)
    throw data_error("BadSpec", "hd_gamma_instrument: needs a single instrument column");
  const Eigen::VectorXd& z2 = d.col(d.roles.z2[0]);
  for (Eigen::Index i = 0; i < z2.size(); ++i)
    if (z2(i) != 0.0 && z2(i) != 1.0)
      throw data_error("NonBinaryInstrument", "hd_gamma_instrument: Z2 must take values in {0,1}");
  Eigen::MatrixXd X = controls(d);
  Eigen::Index n = d.n();
  int nb = (dict.constant ? 1 : 0) + (dict.linear ? static_cast<int>(X.cols()) : 0) +
           (dict.squares ? static_cast<int>(X.cols()) : 0);
  if (nb == 0) throw data_error("BadSpec", "hd_gamma_instrument: empty dictionary");
  Eigen::MatrixXd B(n, nb);
  int c = 0;
  if (dict.constant) B.col(c++).setOnes();
  if (dict.linear)
    for (Eigen::Index j = 0; j < X.cols(); ++j) B.col(c++) = X.col(j);
  if (dict.squares)
    for (Eigen::Index j = 0; j < X.cols(); ++j) B.col(c++) = X.col(j).cwiseProduct(X.col(j));
  // Gamma = span{b(X), Z2 b(X)} ; GammaX = span{b(X)}
  Eigen::MatrixXd G(n, 2 * nb);
  G.leftCols(nb) = B;
  G.rightCols(nb) = B.array().colwise() * z2.array();
  const Eigen::VectorXd& y2 = d.col(d.roles.y2);
  Eigen::VectorXd pg, pgx;
  if (K <= 1) {
    pg = project_onto(G, y2);
    pgx = project_onto(B, pg);  // iterated projection
  } else {
    std::vector<int> folds = make_folds(n, K, seed);
    pg = project_onto_oof(G, y2, folds, K);
    pgx = project_onto_oof(B, pg, folds, K);
  }
  return pg - pgx;
}

}  // namespace orthomom
