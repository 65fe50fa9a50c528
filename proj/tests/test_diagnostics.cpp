#include <doctest.h>

#include <cmath>

#include "orthomom/common.hpp"
#include "orthomom/dataset.hpp"
#include "orthomom/diagnostics.hpp"
#include "orthomom/funcdiff.hpp"
#include "orthomom/plm.hpp"
#include "orthomom/rng.hpp"

#include <nlohmann/json.hpp>

using namespace orthomom;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

DiscreteMixtureModel panel(double theta0) {
  return DiscreteMixtureModel::logit_panel(theta0, vec({-1.0, 0.0, 1.0}),
                                           vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), {{0.0, 1.0}});
}

}  // namespace

TEST_CASE("richardson derivative is exact through cubic terms") {
  auto affine = [](double t) { return 2.0 - 3.5 * t; };
  DerivativeEstimate d = gateaux_derivative(affine);
  CHECK(d.value == doctest::Approx(-3.5).epsilon(1e-13));
  CHECK(d.consistent);

  auto quad = [](double t) { return 1.0 + 0.5 * t + 4.0 * t * t; };
  CHECK(gateaux_derivative(quad).value == doctest::Approx(0.5).epsilon(1e-12));

  // pure cubic: central differences give h^2 and h^2/4, extrapolation cancels
  auto cubic = [](double t) { return t * t * t; };
  CHECK(std::abs(gateaux_derivative(cubic, 1e-2).value) < 1e-15);

  auto sine = [](double t) { return std::sin(t); };
  CHECK(gateaux_derivative(sine, 1e-3).value == doctest::Approx(1.0).epsilon(1e-11));
}

TEST_CASE("plm perturbation paths have closed-form slopes") {
  PlmDgp s;
  s.n = 900;
  s.seed = 14;
  Dataset d = gen_plm(s);
  Eigen::VectorXd y1 = d.col("y1"), y2 = d.col("y2");
  Eigen::VectorXd r1 = d.col("oracle_r1"), r2 = d.col("oracle_r2");
  Eigen::VectorXd zeta = d.col("oracle_zeta"), eta = d.col("oracle_eta");
  Eigen::VectorXd z2 = d.col("z2");
  Rng rng(3);
  Eigen::VectorXd b(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) b(i) = rng.normal();
  double th = s.theta0;
  double n = static_cast<double>(d.n());

  auto p1 = plm_lr_path(y1, y2, r1, r2, zeta, th, PlmNuisance::R1, b);
  CHECK(gateaux_derivative(p1).value ==
        doctest::Approx(-b.dot(zeta) / n).epsilon(1e-10));
  auto p2 = plm_lr_path(y1, y2, r1, r2, zeta, th, PlmNuisance::R2, b);
  CHECK(gateaux_derivative(p2).value ==
        doctest::Approx(th * b.dot(zeta) / n).epsilon(1e-10));
  auto p3 = plm_lr_path(y1, y2, r1, r2, zeta, th, PlmNuisance::Zeta, b);
  Eigen::VectorXd resid = (y1 - r1) - th * (y2 - r2);
  CHECK(gateaux_derivative(p3).value ==
        doctest::Approx(b.dot(resid) / n).epsilon(1e-10));

  auto pp = plm_plugin_path(y1, y2, z2, eta, th, b);
  CHECK(gateaux_derivative(pp).value ==
        doctest::Approx(-b.dot(z2) / n).epsilon(1e-10));

  Eigen::VectorXd y1t = y1 - r1, y2t = y2 - r2;
  auto pt = plm_theta_path(y1t, y2t, zeta, th, 0.7);
  CHECK(power_slope(pt) == doctest::Approx(-0.7 * y2t.dot(zeta) / n).epsilon(1e-10));
}

TEST_CASE("mixture paths differentiate the exact expectation") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r = mod.alpha;
  PartialMoment pm = solve_partial_moment(mod, mod.theta, r);

  // theta path against the analytic jacobian
  Eigen::VectorXd delta = vec({1.0});
  auto tp = mixture_theta_path(mod, pm.g, delta);
  double an = dexpectation_dtheta(mod, mod.theta, pm.g)(0);
  CHECK(gateaux_derivative(tp).value == doctest::Approx(an).epsilon(1e-8));

  // density tilt: eta_t = eta .* (1 + t bt), bt recentered; the derivative of
  // sum eta_g (1 + t bt_g)(r_g - psi) is sum eta_g bt_g (r_g - psi)
  Eigen::VectorXd b = vec({1.0, -0.5, 0.25});
  double bbar = (mod.eta.array() * b.array()).sum();
  Eigen::VectorXd bt = b.array() - bbar;
  double expect = (mod.eta.array() * bt.array() * (r.array() - pm.psi)).sum();
  auto dp = mixture_density_path(mod, pm.g, b, 1e-3);
  CHECK(gateaux_derivative(dp).value == doctest::Approx(expect).epsilon(1e-8));

  // nullspace moments are flat in every feasible tilt direction
  auto basis = nf_moments(mod, mod.theta);
  auto dp0 = mixture_density_path(mod, basis[0], b, 1e-3);
  CHECK(std::abs(gateaux_derivative(dp0).value) < 1e-12);

  // a tilt that drives a weight negative inside |t| <= h is rejected
  Eigen::VectorXd huge = vec({4000.0, 0.0, 0.0});
  CHECK_THROWS_AS(mixture_density_path(mod, pm.g, huge, 1e-3)(0.5e-3), Error);
}

TEST_CASE("moment values map rows through the cell tables") {
  DiscreteMixtureModel mod = panel(0.5);
  MomentVector g;
  g.cell_values.push_back(vec({10.0, 20.0, 30.0, 40.0}));
  Eigen::VectorXd cell(3), outcome(3);
  cell << 0, 0, 0;
  outcome << 2, 0, 3;
  Dataset d({"cell", "outcome"}, {cell, outcome});
  Eigen::VectorXd v = moment_values(g, d);
  REQUIRE(v.size() == 3);
  CHECK(v(0) == 30.0);
  CHECK(v(1) == 10.0);
  CHECK(v(2) == 40.0);

  // simulated data: the sample mean of a nullspace moment is near zero
  auto basis = nf_moments(mod, mod.theta);
  Dataset sim = mod.simulate(20000, 5);
  Eigen::VectorXd mv = moment_values(basis[0], sim);
  double sd = std::sqrt((mv.array() - mv.mean()).square().sum() / 19999.0);
  CHECK(std::abs(mv.mean()) < 5.0 * sd / std::sqrt(20000.0));
}

TEST_CASE("projecting out scores leaves an exactly orthogonal residual") {
  Eigen::Index n = 60;
  Rng rng(21);
  Eigen::VectorXd m(n);
  Eigen::MatrixXd S(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i) = rng.normal();
    for (int j = 0; j < 3; ++j) S(i, j) = rng.normal();
  }
  Eigen::VectorXd g = project_out_scores(m, S);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(S.col(j).dot(g)) < 1e-9);
  Eigen::VectorXd g2 = project_out_scores(g, S);
  CHECK((g2 - g).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("plm drift matches the local power slope") {
  PlmDgp base;
  base.n = 400;
  base.seed = 31;

  DriftResult still = plm_drift_check(base, 0.0, 400, 500, 99);
  CHECK(still.predicted_drift == 0.0);
  CHECK(std::abs(still.empirical_drift) < 4.0 * still.mc_se);

  DriftResult moving = plm_drift_check(base, 1.0, 4000, 600, 100);
  CHECK(std::abs(moving.predicted_drift) > 3.0 * moving.mc_se);  // distinguishable
  CHECK(std::abs(moving.empirical_drift - moving.predicted_drift) < 4.0 * moving.mc_se);
  CHECK(moving.R == 600);
  CHECK(moving.n == 4000);
  CHECK(moving.var_g > 0.0);
}

TEST_CASE("mixture drift matches the exact tilt prediction") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r = mod.alpha;
  PartialMoment pm = solve_partial_moment(mod, mod.theta, r);
  Eigen::VectorXd b = vec({1.0, 0.0, -1.0});

  DriftResult dr = mixture_drift_check(mod, pm.g, b, 2.0, 2000, 500, 7);
  CHECK(std::abs(dr.predicted_drift) > 3.0 * dr.mc_se);
  CHECK(std::abs(dr.empirical_drift - dr.predicted_drift) < 4.0 * dr.mc_se);

  // nullspace moment: the tilt prediction collapses to floating-point dust
  auto basis = nf_moments(mod, mod.theta);
  DriftResult dz = mixture_drift_check(mod, basis[0], b, 2.0, 2000, 500, 8);
  CHECK(std::abs(dz.predicted_drift) < 1e-14);
  CHECK(std::abs(dz.empirical_drift) < 4.0 * dz.mc_se);
}

TEST_CASE("orthogonality reports pass at moderate sample sizes") {
  OrthogonalityReport rp = verify_plm(20000, 6, 17);
  CHECK(rp.target == "plm");
  REQUIRE(rp.labels.size() == 6);
  REQUIRE(rp.derivatives.size() == 6);
  CHECK(rp.pass);
  CHECK(rp.max_abs <= rp.tolerance);
  // the plug-in contrast dwarfs the LR derivative along the same r1 bumps
  double best_ratio = 0;
  for (size_t j = 0; j < rp.contrast.size(); ++j) {
    if (!std::isfinite(rp.contrast[j])) continue;
    CHECK(rp.labels[j].rfind("r1-bump", 0) == 0);
    best_ratio = std::max(best_ratio, std::abs(rp.contrast[j]) / rp.scaled[j]);
  }
  CHECK(best_ratio > 10.0);
  nlohmann::json j = rp.to_json();
  CHECK(j.at("pass").get<bool>());
  CHECK(j.at("directions").size() == 6);

  OrthogonalityReport rh = verify_hte(20000, 6, 18);
  CHECK(rh.pass);
  CHECK(rh.target == "hte");

  OrthogonalityReport rf = verify_funcdiff(12, 19);
  CHECK(rf.pass);
  CHECK(rf.tolerance == doctest::Approx(1e-10));
  CHECK(rf.max_abs < 1e-10);
}
