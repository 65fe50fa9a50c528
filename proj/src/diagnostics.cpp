#include "orthomom/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "orthomom/hte.hpp"
#include "orthomom/rng.hpp"

namespace orthomom {

using json = nlohmann::json;

namespace {

double vmean(const Eigen::VectorXd& v) {
  KahanSum s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s.add(v(i));
  return v.size() ? s.value() / static_cast<double>(v.size()) : 0.0;
}

double vsd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  double m = vmean(v);
  KahanSum s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s.add((v(i) - m) * (v(i) - m));
  return std::sqrt(s.value() / static_cast<double>(v.size() - 1));
}

double vrms(const Eigen::VectorXd& v) {
  if (!v.size()) return 0.0;
  KahanSum s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s.add(v(i) * v(i));
  return std::sqrt(s.value() / static_cast<double>(v.size()));
}

void check_same_n(std::initializer_list<const Eigen::VectorXd*> vs, const char* where) {
  Eigen::Index n = -1;
  for (const auto* v : vs) {
    if (n < 0) n = v->size();
    if (v->size() != n) throw data_error("DimensionMismatch", std::string(where) + ": column lengths differ");
  }
}

Dataset with_column(const Dataset& d, const std::string& name, const Eigen::VectorXd& v) {
  std::vector<std::string> names = d.names();
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(names.size() + 1);
  for (int i = 0; i < d.ncols(); ++i) cols.push_back(d.col(i));
  names.push_back(name);
  cols.push_back(v);
  Dataset out(std::move(names), std::move(cols));
  out.roles = d.roles;
  return out;
}

}  // namespace

DerivativeEstimate gateaux_derivative(const std::function<double(double)>& path_mean, double h) {
  if (!(h > 0)) throw data_error("InvalidStep", "gateaux_derivative: step must be > 0");
  double fp = path_mean(h), fm = path_mean(-h);
  double fp2 = path_mean(h / 2), fm2 = path_mean(-h / 2);
  DerivativeEstimate out;
  out.coarse = (fp - fm) / (2 * h);
  out.fine = (fp2 - fm2) / h;
  out.value = (4 * out.fine - out.coarse) / 3;
  // the O(h^2) error model makes the two estimates agree up to curvature terms
  double fmax = std::max(std::max(std::abs(fp), std::abs(fm)),
                         std::max(std::abs(fp2), std::abs(fm2)));
  double slack = std::max(0.01 * std::max(std::abs(out.coarse), std::abs(out.fine)),
                          std::max(100.0 * h * h * fmax, 1e-12));
  out.consistent = std::abs(out.fine - out.coarse) <= slack;
  return out;
}

double power_slope(const std::function<double(double)>& theta_path, double h) {
  return gateaux_derivative(theta_path, h).value;
}

std::function<double(double)> plm_lr_path(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                          const Eigen::VectorXd& r1, const Eigen::VectorXd& r2,
                                          const Eigen::VectorXd& zeta, double theta,
                                          PlmNuisance target, const Eigen::VectorXd& b) {
  check_same_n({&y1, &y2, &r1, &r2, &zeta, &b}, "plm_lr_path");
  return [=](double t) {
    KahanSum s;
    for (Eigen::Index i = 0; i < y1.size(); ++i) {
      double a1 = r1(i) + (target == PlmNuisance::R1 ? t * b(i) : 0.0);
      double a2 = r2(i) + (target == PlmNuisance::R2 ? t * b(i) : 0.0);
      double z = zeta(i) + (target == PlmNuisance::Zeta ? t * b(i) : 0.0);
      s.add((y1(i) - a1 - theta * (y2(i) - a2)) * z);
    }
    return s.value() / static_cast<double>(y1.size());
  };
}

std::function<double(double)> plm_plugin_path(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                              const Eigen::VectorXd& z2, const Eigen::VectorXd& eta,
                                              double theta, const Eigen::VectorXd& b) {
  check_same_n({&y1, &y2, &z2, &eta, &b}, "plm_plugin_path");
  return [=](double t) {
    KahanSum s;
    for (Eigen::Index i = 0; i < y1.size(); ++i)
      s.add((y1(i) - theta * y2(i) - eta(i) - t * b(i)) * z2(i));
    return s.value() / static_cast<double>(y1.size());
  };
}

std::function<double(double)> plm_theta_path(const Eigen::VectorXd& y1t,
                                             const Eigen::VectorXd& y2t,
                                             const Eigen::VectorXd& zeta, double theta0,
                                             double delta) {
  check_same_n({&y1t, &y2t, &zeta}, "plm_theta_path");
  return [=](double t) {
    KahanSum s;
    for (Eigen::Index i = 0; i < y1t.size(); ++i)
      s.add((y1t(i) - (theta0 + t * delta) * y2t(i)) * zeta(i));
    return s.value() / static_cast<double>(y1t.size());
  };
}

namespace {

// recenter so the tilt preserves total mass: sum_g eta_g b_g = 0
Eigen::VectorXd center_direction(const Eigen::VectorXd& eta, const Eigen::VectorXd& b) {
  if (b.size() != eta.size())
    throw data_error("DimensionMismatch", "density direction must live on the alpha grid");
  return b.array() - eta.dot(b);
}

Eigen::VectorXd tilted_weights(const Eigen::VectorXd& eta, const Eigen::VectorXd& bc, double t) {
  Eigen::VectorXd w = eta.array() * (1.0 + t * bc.array());
  if (w.minCoeff() < 0)
    throw numerical_error("PathInfeasible", "density tilt leaves the simplex at t = " +
                                                std::to_string(t));
  if (std::abs(w.sum() - 1.0) > 1e-12)
    throw numerical_error("PathInfeasible", "density tilt renormalization error above 1e-12");
  return w;
}

}  // namespace

std::function<double(double)> mixture_density_path(const DiscreteMixtureModel& mod,
                                                   const MomentVector& g,
                                                   const Eigen::VectorXd& b, double h) {
  if (!(h > 0)) throw data_error("InvalidStep", "mixture_density_path: step must be > 0");
  if (static_cast<int>(g.cell_values.size()) != mod.n_cells())
    throw data_error("DimensionMismatch", "mixture_density_path: moment/cell count mismatch");
  Eigen::VectorXd bc = center_direction(mod.eta, b);
  tilted_weights(mod.eta, bc, h);   // feasibility at the path ends
  tilted_weights(mod.eta, bc, -h);
  std::vector<Eigen::MatrixXd> L;
  for (int c = 0; c < mod.n_cells(); ++c) L.push_back(mod.conditional_matrix(mod.theta, c));
  return [mod, g, bc, L](double t) {
    Eigen::VectorXd w = tilted_weights(mod.eta, bc, t);
    KahanSum s;
    for (int c = 0; c < mod.n_cells(); ++c)
      s.add(mod.cells[static_cast<size_t>(c)].weight *
            g.cell_values[static_cast<size_t>(c)].dot(L[static_cast<size_t>(c)] * w));
    return s.value();
  };
}

std::function<double(double)> mixture_theta_path(const DiscreteMixtureModel& mod,
                                                 const MomentVector& g,
                                                 const Eigen::VectorXd& delta) {
  if (delta.size() != mod.p())
    throw data_error("DimensionMismatch", "mixture_theta_path: delta must have length p");
  return [mod, g, delta](double t) { return expectation(mod, mod.theta + t * delta, g); };
}

Eigen::VectorXd moment_values(const MomentVector& g, const Dataset& d) {
  const Eigen::VectorXd& cell = d.col("cell");
  Eigen::VectorXd outcome;
  if (d.has("outcome")) {
    outcome = d.col("outcome");
  } else if (d.has("y1") && d.has("y2")) {
    // binary 2-period panel: outcomes ordered (0,0), (1,0), (0,1), (1,1)
    outcome = d.col("y1") + 2.0 * d.col("y2");
  } else {
    throw data_error("MissingColumn", "moment_values: need an outcome (or y1,y2) column");
  }
  Eigen::VectorXd out(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    int c = static_cast<int>(cell(i));
    int m = static_cast<int>(outcome(i));
    if (c < 0 || c >= static_cast<int>(g.cell_values.size()))
      throw data_error("IndexOutOfRange", "moment_values: cell index out of range at row " +
                                              std::to_string(i));
    const Eigen::VectorXd& gv = g.cell_values[static_cast<size_t>(c)];
    if (m < 0 || m >= gv.size())
      throw data_error("IndexOutOfRange", "moment_values: outcome index out of range at row " +
                                              std::to_string(i));
    out(i) = gv(m);
  }
  return out;
}

namespace {

struct RepStats {
  std::vector<double> scaled_means;  // sqrt(n) * mean(g) per replication
  KahanSum var_acc;
  void add(const Eigen::VectorXd& g) {
    double n = static_cast<double>(g.size());
    scaled_means.push_back(std::sqrt(n) * vmean(g));
    double sd = vsd(g);
    var_acc.add(sd * sd);
  }
};

DriftResult finish_drift(RepStats& st, double predicted, Eigen::Index n, int R) {
  DriftResult out;
  out.R = R;
  out.n = n;
  out.predicted_drift = predicted;
  out.empirical_drift = kahan_mean(st.scaled_means);
  out.empirical_sd = kahan_sd(st.scaled_means);
  out.mc_se = out.empirical_sd / std::sqrt(static_cast<double>(R));
  out.var_g = st.var_acc.value() / static_cast<double>(R);
  return out;
}

}  // namespace

DriftResult plm_drift_check(const PlmDgp& base, double delta, Eigen::Index n, int R,
                            std::uint64_t seed) {
  if (R < 500) throw data_error("BadSpec", "drift_check: need R >= 500");
  if (n < 2) throw data_error("BadSpec", "drift_check: need n >= 2");
  double theta0 = base.theta0;

  // predicted drift = -power_slope on an independent large reference draw
  PlmDgp ref = base;
  ref.n = 1000000;
  ref.seed = derive_seed(seed, 0);
  Dataset dref = gen_plm(ref);
  Eigen::VectorXd y1t = dref.col("y1") - dref.col("oracle_r1");
  Eigen::VectorXd y2t = dref.col("y2") - dref.col("oracle_r2");
  double predicted = -power_slope(plm_theta_path(y1t, y2t, dref.col("oracle_zeta"), theta0, delta));

  RepStats st;
  double thn = theta0 + delta / std::sqrt(static_cast<double>(n));
  for (int r = 1; r <= R; ++r) {
    PlmDgp dgp = base;
    dgp.n = n;
    dgp.theta0 = thn;
    dgp.seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    Dataset d = gen_plm(dgp);
    Eigen::VectorXd g =
        ((d.col("y1") - d.col("oracle_r1")) - theta0 * (d.col("y2") - d.col("oracle_r2")))
            .cwiseProduct(d.col("oracle_zeta"));
    st.add(g);
  }
  return finish_drift(st, predicted, n, R);
}

DriftResult mixture_drift_check(const DiscreteMixtureModel& mod, const MomentVector& g,
                                const Eigen::VectorXd& b, double delta, Eigen::Index n, int R,
                                std::uint64_t seed) {
  if (R < 500) throw data_error("BadSpec", "drift_check: need R >= 500");
  if (n < 2) throw data_error("BadSpec", "drift_check: need n >= 2");
  Eigen::VectorXd bc = center_direction(mod.eta, b);
  double tau = delta / std::sqrt(static_cast<double>(n));
  Eigen::VectorXd eta_n = tilted_weights(mod.eta, bc, tau);

  // exact drift of the tilt: sqrt(n) * sum_c w_c g' L (eta_n - eta)
  KahanSum pred;
  for (int c = 0; c < mod.n_cells(); ++c) {
    Eigen::MatrixXd L = mod.conditional_matrix(mod.theta, c);
    pred.add(mod.cells[static_cast<size_t>(c)].weight *
             g.cell_values[static_cast<size_t>(c)].dot(L * (eta_n - mod.eta)));
  }
  double predicted = std::sqrt(static_cast<double>(n)) * pred.value();

  RepStats st;
  for (int r = 1; r <= R; ++r) {
    Dataset d = mod.simulate(n, derive_seed(seed, static_cast<std::uint64_t>(r)), eta_n);
    st.add(moment_values(g, d));
  }
  return finish_drift(st, predicted, n, R);
}

Eigen::VectorXd project_out_scores(const Eigen::VectorXd& m, const Eigen::MatrixXd& scores) {
  if (scores.rows() != m.size())
    throw data_error("DimensionMismatch", "project_out_scores: rows of scores must match m");
  if (scores.cols() < 1) throw data_error("BadSpec", "project_out_scores: no score columns");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scores, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  double smin = sv(sv.size() - 1), smax = sv(0);
  // condition of the second-moment matrix S'S is the squared singular ratio
  if (!(smin > 0) || (smax / smin) * (smax / smin) >= 1e10)
    throw numerical_error("SingularScoreMatrix",
                          "project_out_scores: score second-moment matrix is near singular");
  Eigen::VectorXd beta = svd.solve(m);
  return m - scores * beta;
}

json OrthogonalityReport::to_json() const {
  json j;
  j["target"] = target;
  j["tolerance"] = tolerance;
  j["max_abs_scaled"] = max_abs;
  j["pass"] = pass;
  json dirs = json::array();
  for (size_t i = 0; i < derivatives.size(); ++i) {
    json row;
    row["label"] = labels[i];
    row["derivative"] = derivatives[i];
    row["scaled"] = scaled[i];
    if (std::isfinite(contrast[i]))
      row["contrast"] = contrast[i];
    else
      row["contrast"] = nullptr;
    dirs.push_back(row);
  }
  j["directions"] = dirs;
  return j;
}

namespace {

void push_row(OrthogonalityReport& rep, const std::string& label, double deriv, double scale,
              double contrast_value) {
  rep.labels.push_back(label);
  rep.derivatives.push_back(deriv);
  double s = scale > 0 ? std::abs(deriv) / scale : std::abs(deriv);
  rep.scaled.push_back(s);
  rep.contrast.push_back(contrast_value);
  rep.max_abs = std::max(rep.max_abs, s);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

OrthogonalityReport verify_plm(Eigen::Index n, int paths, std::uint64_t seed) {
  if (n < 100) throw data_error("BadSpec", "verify_plm: need n >= 100");
  if (paths < 1) throw data_error("BadSpec", "verify_plm: need paths >= 1");
  PlmDgp dgp;
  dgp.n = n;
  dgp.sigma_eps = 3.0;
  dgp.seed = derive_seed(seed, 9000);
  Dataset d = gen_plm(dgp);
  double theta = dgp.theta0;

  const Eigen::VectorXd& y1 = d.col("y1");
  const Eigen::VectorXd& y2 = d.col("y2");
  const Eigen::VectorXd& z2 = d.col("z2");
  const Eigen::VectorXd& r1 = d.col("oracle_r1");
  const Eigen::VectorXd& r2 = d.col("oracle_r2");
  const Eigen::VectorXd& zeta = d.col("oracle_zeta");
  const Eigen::VectorXd& eta = d.col("oracle_eta");
  Eigen::MatrixXd X = d.matrix(d.roles.x);

  Eigen::VectorXd g0 = ((y1 - r1) - theta * (y2 - r2)).cwiseProduct(zeta);
  double sdg = vsd(g0);

  // probit index weights of the simulated instrument equation
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  beta(0) = 1.0;
  if (X.cols() > 1) beta(1) = 0.5;

  OrthogonalityReport rep;
  rep.target = "plm";
  rep.tolerance = std::max(1e-3, 20.0 / std::sqrt(static_cast<double>(n)));
  for (int j = 0; j < paths; ++j) {
    Rng rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(j)));
    Eigen::VectorXd omega(X.cols());
    for (Eigen::Index k = 0; k < omega.size(); ++k) omega(k) = 0.6 * rng.normal();
    omega += 0.9 * beta;
    double phase = 6.283185307179586 * rng.uniform();
    Eigen::VectorXd idx = X * omega;

    int kind = j % 3;
    if (kind == 0 || kind == 1) {
      Eigen::VectorXd b = (idx.array() + phase).sin();
      PlmNuisance target = kind == 0 ? PlmNuisance::R1 : PlmNuisance::R2;
      auto path = plm_lr_path(y1, y2, r1, r2, zeta, theta, target, b);
      double deriv = gateaux_derivative(path).value;
      double contrast_value = kNaN;
      if (kind == 0)  // the eta-bump also feeds the plug-in moment
        contrast_value = gateaux_derivative(plm_plugin_path(y1, y2, z2, eta, theta, b)).value /
                         std::max(1e-300, vrms(b) * sdg);
      push_row(rep, (kind == 0 ? "r1-bump-" : "r2-bump-") + std::to_string(j), deriv,
               vrms(b) * sdg, contrast_value);
    } else {
      Eigen::VectorXd c = (idx + z2).array().sin();  // direction in sigma(W)
      auto path = plm_lr_path(y1, y2, r1, r2, zeta, theta, PlmNuisance::Zeta, c);
      double deriv = gateaux_derivative(path).value;
      push_row(rep, "zeta-bump-" + std::to_string(j), deriv, vrms(c) * sdg, kNaN);
    }
  }
  rep.pass = rep.max_abs <= rep.tolerance;
  return rep;
}

OrthogonalityReport verify_hte(Eigen::Index n, int paths, std::uint64_t seed) {
  if (n < 200) throw data_error("BadSpec", "verify_hte: need n >= 200");
  if (paths < 1) throw data_error("BadSpec", "verify_hte: need paths >= 1");
  HteDgp dgp;
  dgp.n = n;
  dgp.seed = derive_seed(seed, 9100);
  Dataset d = gen_hte(dgp);
  const int l = 0;
  const double etabar0 = dgp.eta04.size() ? dgp.eta04(0) : 0.0;

  HteOptions opt;
  opt.oracle_p = "oracle_p";
  opt.seed = derive_seed(seed, 7);
  HteParts base = hte_parts(d, l, opt);
  Eigen::VectorXd g0 = base.u - etabar0 * base.w;
  double sdg = vsd(g0);
  Eigen::MatrixXd X = d.matrix(d.roles.x);
  const Eigen::VectorXd& z2 = d.col(d.roles.z2.at(0));

  OrthogonalityReport rep;
  rep.target = "hte";
  rep.tolerance = std::max(1e-3, 25.0 / std::sqrt(static_cast<double>(n)));
  for (int j = 0; j < paths; ++j) {
    Rng rng(derive_seed(seed, 300 + static_cast<std::uint64_t>(j)));
    if (j % 2 == 0) {
      // bump the propensity p and rerun the full construction
      Eigen::VectorXd omega(X.cols());
      for (Eigen::Index k = 0; k < omega.size(); ++k) omega(k) = rng.normal() / std::sqrt(2.0);
      double phase = 6.283185307179586 * rng.uniform();
      Eigen::VectorXd b = (X * omega + z2).array() + phase;
      b = b.array().sin();
      auto path = [&d, &opt, l, etabar0, &b](double t) {
        Dataset dt = with_column(d, "p_bumped", d.col("oracle_p") + t * b);
        HteOptions o = opt;
        o.oracle_p = "p_bumped";
        HteParts parts = hte_parts(dt, l, o);
        return vmean(Eigen::VectorXd(parts.u - etabar0 * parts.w));
      };
      double deriv = gateaux_derivative(path).value;
      push_row(rep, "p-bump-" + std::to_string(j), deriv, vrms(b) * sdg, kNaN);
    } else {
      // bump the step-2 projection coefficients of the Y1 regression
      Eigen::VectorXd delta(base.Ql.cols());
      for (Eigen::Index k = 0; k < delta.size(); ++k) delta(k) = rng.normal();
      delta /= delta.norm();
      Eigen::VectorXd qd = base.Ql * delta;
      auto path = [&base, &qd](double t) {
        KahanSum s;
        for (Eigen::Index i = 0; i < base.u.size(); ++i)
          s.add(base.u(i) - t * qd(i) * base.phistar(i));
        return s.value() / static_cast<double>(base.u.size());
      };
      double deriv = gateaux_derivative(path).value;
      // contrast: same bump against the unprojected instrument zeta
      KahanSum cs;
      for (Eigen::Index i = 0; i < qd.size(); ++i) cs.add(qd(i) * base.zeta(i));
      double scale = vsd(Eigen::VectorXd(qd.cwiseProduct(base.phistar)));
      if (scale <= 0) scale = vrms(qd) * sdg;
      double contrast_value =
          (cs.value() / static_cast<double>(qd.size())) / std::max(1e-300, vrms(qd) * vsd(base.zeta));
      push_row(rep, "gamma-bump-" + std::to_string(j), deriv, scale, contrast_value);
    }
  }
  rep.pass = rep.max_abs <= rep.tolerance;
  return rep;
}

OrthogonalityReport verify_funcdiff(int paths, std::uint64_t seed) {
  if (paths < 1) throw data_error("BadSpec", "verify_funcdiff: need paths >= 1");
  Eigen::VectorXd alpha(3), weights(3);
  alpha << -1.0, 0.0, 1.0;
  weights << 0.3, 0.4, 0.3;
  DiscreteMixtureModel mod =
      DiscreteMixtureModel::logit_panel(0.5, alpha, weights, {{0.0, 1.0}, {1.0, 2.0}});
  std::vector<MomentVector> basis = nf_moments(mod, mod.theta);
  if (basis.empty()) throw numerical_error("EmptyNullspace", "verify_funcdiff: no NF moments");
  PartialMoment partial = solve_partial_moment(mod, mod.theta, alpha);  // r(alpha) = alpha

  OrthogonalityReport rep;
  rep.target = "funcdiff";
  rep.tolerance = 1e-10;
  const double h = 1e-3;
  for (int j = 0; j < paths; ++j) {
    Rng rng(derive_seed(seed, 200 + static_cast<std::uint64_t>(j)));
    Eigen::VectorXd b(mod.G());
    for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = rng.normal();
    b /= b.cwiseAbs().maxCoeff();
    const MomentVector& g = basis[static_cast<size_t>(j) % basis.size()];
    double deriv = gateaux_derivative(mixture_density_path(mod, g, b, h), h).value;
    double contrast_value =
        gateaux_derivative(mixture_density_path(mod, partial.g, b, h), h).value;
    push_row(rep, "density-tilt-" + std::to_string(j), deriv, 1.0, contrast_value);
  }
  rep.pass = rep.max_abs <= rep.tolerance;
  return rep;
}

}  // namespace orthomom
