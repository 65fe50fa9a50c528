#include "orthomom/hte.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace orthomom {

HteOptions hte_options_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw data_error("BadSpec", "hte options must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* keys[] = {"k", "p", "oracle_p", "ci_points", "ci_half_width_se"};
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known) throw data_error("BadSpec", "hte options: unknown key '" + it.key() + "'");
  }
  HteOptions o;
  if (j.contains("k")) o.K = j.at("k").get<int>();
  if (j.contains("p")) o.p_spec = LearnerSpec::from_json(j.at("p"));
  if (j.contains("oracle_p")) {
    const auto& v = j.at("oracle_p");
    if (v.is_boolean()) {
      if (v.get<bool>()) o.oracle_p = "oracle_p";
    } else {
      o.oracle_p = v.get<std::string>();
    }
  }
  if (j.contains("ci_points")) o.ci_points = j.at("ci_points").get<int>();
  if (j.contains("ci_half_width_se")) o.ci_half_width_se = j.at("ci_half_width_se").get<double>();
  return o;
}

namespace {

double sd_of(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

Eigen::MatrixXd centered_controls(const Dataset& d, const Eigen::VectorXd& eta3) {
  Eigen::MatrixXd X = d.matrix(d.roles.x);
  if (eta3.size() != X.cols())
    throw data_error("DimensionMismatch", "hte: eta3 length must match the number of controls");
  return X.rowwise() - eta3.transpose();
}

Eigen::MatrixXd stack_ql_xi(const Eigen::VectorXd& lead, const Eigen::MatrixXd& Xc, int l) {
  // (lead, 1, Xc', lead * Xc_{-l}')
  Eigen::Index n = Xc.rows(), dx = Xc.cols();
  Eigen::MatrixXd M(n, 2 + dx + (dx - 1));
  M.col(0) = lead;
  M.col(1).setOnes();
  M.middleCols(2, dx) = Xc;
  int c = 2 + static_cast<int>(dx);
  for (Eigen::Index j = 0; j < dx; ++j) {
    if (j == l) continue;
    M.col(c++) = lead.cwiseProduct(Xc.col(j));
  }
  return M;
}

void check_l(const Dataset& d, int l) {
  int dx = static_cast<int>(d.roles.x.size());
  if (dx < 1) throw data_error("BadSpec", "hte: no control columns in roles");
  if (l < 0 || l >= dx)
    throw data_error("IndexOutOfRange", "hte: interaction index " + std::to_string(l) +
                                            " outside [0, " + std::to_string(dx - 1) + "]");
}

// Per-fold coefficients of target on the columns of D (D includes a constant
// at column 1). High-dimensional designs use l1 per fold; since the l1 fit is
// linear, its coefficients slot into the same D-column layout.
Eigen::MatrixXd step2_coefs(const Eigen::MatrixXd& D, const Eigen::VectorXd& target,
                            const std::vector<int>& folds, int K, bool use_l1) {
  if (!use_l1) return project_coefs_oof(D, target, folds, K);
  Eigen::Index n = D.rows(), p = D.cols();
  Eigen::MatrixXd F(n, p - 1);  // drop the constant; l1 carries its own intercept
  F.col(0) = D.col(0);
  F.rightCols(p - 2) = D.rightCols(p - 2);
  LearnerSpec l1spec;
  l1spec.method = "l1";
  Eigen::MatrixXd C(p, K);
  for (int f = 0; f < K; ++f) {
    std::vector<Eigen::Index> tr;
    for (Eigen::Index i = 0; i < n; ++i)
      if (folds[static_cast<size_t>(i)] != f) tr.push_back(i);
    Eigen::MatrixXd Ftr(static_cast<Eigen::Index>(tr.size()), F.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
    for (size_t i = 0; i < tr.size(); ++i) {
      Ftr.row(static_cast<Eigen::Index>(i)) = F.row(tr[i]);
      ytr(static_cast<Eigen::Index>(i)) = target(tr[i]);
    }
    FittedLearner fl = fit(Ftr, ytr, l1spec);
    Eigen::VectorXd c = fl.coefficients();  // (intercept, slopes...)
    C(0, f) = c(1);
    C(1, f) = c(0);
    C.col(f).tail(p - 2) = c.tail(p - 2);
  }
  return C;
}

}  // namespace

Eigen::MatrixXd build_ql(const Dataset& d, int l, const Eigen::VectorXd& eta3) {
  check_l(d, l);
  return stack_ql_xi(d.col(d.roles.y2), centered_controls(d, eta3), l);
}

Eigen::MatrixXd build_xi(const Dataset& d, const Eigen::VectorXd& p, int l,
                         const Eigen::VectorXd& eta3) {
  check_l(d, l);
  if (p.size() != d.n()) throw data_error("DimensionMismatch", "hte: p length mismatch");
  return stack_ql_xi(p, centered_controls(d, eta3), l);
}

HteParts hte_parts(const Dataset& d, int l, const HteOptions& opt) {
  check_l(d, l);
  Eigen::Index n = d.n();
  int dx = static_cast<int>(d.roles.x.size());
  HteParts parts;
  parts.K = opt.K;
  parts.folds = make_folds(n, opt.K, opt.seed);

  Eigen::MatrixXd X = d.matrix(d.roles.x);
  parts.eta3 = X.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - parts.eta3.transpose();

  // step 1: p(W) = E[Y2|W]
  if (!opt.oracle_p.empty()) {
    parts.p = d.col(opt.oracle_p);
  } else {
    std::vector<std::string> wn = d.roles.x;
    wn.insert(wn.end(), d.roles.z2.begin(), d.roles.z2.end());
    Eigen::MatrixXd W = d.matrix(wn);
    parts.p = cross_fit_with_folds(W, d.col(d.roles.y2), opt.p_spec, parts.folds, opt.K).values;
  }

  parts.Ql = stack_ql_xi(d.col(d.roles.y2), Xc, l);
  parts.Xi = stack_ql_xi(parts.p, Xc, l);
  parts.zeta = parts.p.cwiseProduct(Xc.col(l));
  parts.v = d.col(d.roles.y2).cwiseProduct(Xc.col(l));

  // step 2: coefficients of Y1 and of v on xi, per fold
  bool use_l1 = dx > static_cast<int>(n) / 10;
  Eigen::MatrixXd coefA = step2_coefs(parts.Xi, d.col(d.roles.y1), parts.folds, opt.K, use_l1);
  Eigen::MatrixXd coefB = step2_coefs(parts.Xi, parts.v, parts.folds, opt.K, use_l1);

  // step 3: phi* = zeta - P_xi zeta, out of fold
  Eigen::VectorXd zfit = project_onto_oof(parts.Xi, parts.zeta, parts.folds, opt.K);
  parts.phistar = parts.zeta - zfit;
  double sphi = sd_of(parts.phistar), szeta = sd_of(parts.zeta);
  if (sphi < 1e-6 * std::max(1e-300, szeta))
    throw numerical_error("DegenerateInstrument",
                          "hte: orthogonalized instrument has no variation (sd(phi*) = " +
                              std::to_string(sphi) + ")");

  // moment at etabar: (Y1 - gamma(etabar)'Q - etabar v) phi* with
  // gamma(etabar) = coefA - etabar coefB fold-wise, so it is affine in etabar
  parts.u.resize(n);
  parts.w.resize(n);
  const Eigen::VectorXd& y1 = d.col(d.roles.y1);
  for (Eigen::Index i = 0; i < n; ++i) {
    int f = parts.folds[static_cast<size_t>(i)];
    double qa = parts.Ql.row(i).dot(coefA.col(f));
    double qb = parts.Ql.row(i).dot(coefB.col(f));
    parts.u(i) = (y1(i) - qa) * parts.phistar(i);
    parts.w(i) = (parts.v(i) - qb) * parts.phistar(i);
  }
  return parts;
}

HteTestResult hte_test_parts(const HteParts& parts, double eta4_bar, double level) {
  Eigen::VectorXd m = parts.u - eta4_bar * parts.w;
  double n = static_cast<double>(m.size());
  double mean = m.mean();
  double s = sd_of(m);
  if (s <= 1e-14 * std::max(1.0, std::abs(mean)))
    throw numerical_error("DegenerateVariance", "hte test: moment variance is numerically zero");
  HteTestResult r;
  r.eta4_bar = eta4_bar;
  r.level = level;
  r.statistic = std::sqrt(n) * mean / s;
  r.p_value = two_sided_p(r.statistic);
  r.reject = r.p_value < level;
  return r;
}

HteTestResult hte_test(const Dataset& d, int l, double eta4_bar, const HteOptions& opt) {
  return hte_test_parts(hte_parts(d, l, opt), eta4_bar, opt.level);
}

namespace {

HteEstimate estimate_from_parts(const Dataset& d, const HteParts& parts) {
  Eigen::Index n = d.n();
  // estimation step 2: project Y1 on (xi, zeta) jointly, keep the xi block
  Eigen::MatrixXd D(n, parts.Xi.cols() + 1);
  D.leftCols(parts.Xi.cols()) = parts.Xi;
  D.col(parts.Xi.cols()) = parts.zeta;
  Eigen::MatrixXd coefs = project_coefs_oof(D, d.col(d.roles.y1), parts.folds, parts.K);
  Eigen::VectorXd y1star(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int f = parts.folds[static_cast<size_t>(i)];
    y1star(i) = d.col(d.roles.y1)(i) - parts.Ql.row(i).dot(coefs.col(f).head(parts.Xi.cols()));
  }
  double dn = static_cast<double>(n);
  double denom = parts.v.dot(parts.phistar) / dn;
  double sv = sd_of(parts.v), sphi = sd_of(parts.phistar);
  if (std::abs(denom) <= 1e-8 * sv * sphi)
    throw numerical_error("IrrelevantInstrument", "hte: relevance denominator below floor");
  HteEstimate e;
  e.relevance_denominator = denom;
  e.eta4_hat = y1star.dot(parts.phistar) / dn / denom;
  Eigen::VectorXd g = (y1star - e.eta4_hat * parts.v).cwiseProduct(parts.phistar);
  e.se = sd_of(g) / (std::sqrt(dn) * std::abs(denom));
  return e;
}

}  // namespace

HteEstimate hte_estimate(const Dataset& d, int l, const HteOptions& opt) {
  return estimate_from_parts(d, hte_parts(d, l, opt));
}

HteCi hte_ci(const Dataset& d, int l, const HteOptions& opt) {
  HteParts parts = hte_parts(d, l, opt);
  HteEstimate est = estimate_from_parts(d, parts);
  HteCi ci;
  ci.eta4_hat = est.eta4_hat;
  ci.se = est.se;
  int np = opt.ci_points;
  if (np < 3) throw data_error("BadSpec", "hte_ci: need at least 3 grid points");
  double lo = est.eta4_hat - opt.ci_half_width_se * est.se;
  double hi = est.eta4_hat + opt.ci_half_width_se * est.se;
  bool any = false;
  double best_p = -1, best_pt = est.eta4_hat;
  double amin = 0, amax = 0;
  for (int i = 0; i < np; ++i) {
    double pt = lo + (hi - lo) * static_cast<double>(i) / (np - 1);
    HteTestResult t = hte_test_parts(parts, pt, opt.level);
    if (t.p_value > best_p) {
      best_p = t.p_value;
      best_pt = pt;
    }
    if (!t.reject) {
      if (!any) {
        amin = amax = pt;
        any = true;
      } else {
        amin = std::min(amin, pt);
        amax = std::max(amax, pt);
      }
    }
  }
  if (!any) {
    ci.empty_interval = true;
    ci.lo = ci.hi = best_pt;
  } else {
    ci.lo = amin;
    ci.hi = amax;
  }
  return ci;
}

}  // namespace orthomom
