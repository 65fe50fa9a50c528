#include <doctest.h>

#include <cmath>
#include <vector>

#include "orthomom/common.hpp"
#include "orthomom/funcdiff.hpp"
#include "orthomom/rng.hpp"

#include <nlohmann/json.hpp>

using namespace orthomom;
using nlohmann::json;

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

// random column-stochastic table
Eigen::MatrixXd random_table(int M, int G, Rng& rng) {
  Eigen::MatrixXd L(M, G);
  for (int g = 0; g < G; ++g) {
    double s = 0;
    for (int m = 0; m < M; ++m) s += (L(m, g) = 0.05 + rng.uniform());
    L.col(g) /= s;
  }
  return L;
}

DiscreteMixtureModel table_model(const Eigen::MatrixXd& L) {
  DiscreteMixtureModel mod;
  mod.family = "custom-table";
  int G = static_cast<int>(L.cols());
  mod.alpha = Eigen::VectorXd::LinSpaced(G, -1.0, 1.0);
  mod.eta = Eigen::VectorXd::Constant(G, 1.0 / G);
  DiscreteMixtureModel::Cell c;
  c.table = L;
  mod.cells.push_back(c);
  mod.validate();
  return mod;
}

}  // namespace

TEST_CASE("logit panel pmf, conditional matrix, and mixture pmf") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd th = mod.theta;
  REQUIRE(mod.G() == 3);
  REQUIRE(mod.M(0) == 4);

  // P((y1,y2) | alpha) factorizes across periods
  double a = mod.alpha(1);  // 0
  double l1 = 1.0 / (1.0 + std::exp(-(a + 0.5 * 0.0)));
  double l2 = 1.0 / (1.0 + std::exp(-(a + 0.5 * 1.0)));
  CHECK(mod.pmf(0, 0, 1, th) == doctest::Approx((1 - l1) * (1 - l2)).epsilon(1e-14));
  CHECK(mod.pmf(0, 1, 1, th) == doctest::Approx(l1 * (1 - l2)).epsilon(1e-14));   // (1,0)
  CHECK(mod.pmf(0, 2, 1, th) == doctest::Approx((1 - l1) * l2).epsilon(1e-14));   // (0,1)
  CHECK(mod.pmf(0, 3, 1, th) == doctest::Approx(l1 * l2).epsilon(1e-14));

  Eigen::MatrixXd L = mod.conditional_matrix(th, 0);
  REQUIRE(L.rows() == 4);
  REQUIRE(L.cols() == 3);
  for (int g = 0; g < 3; ++g) CHECK(L.col(g).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::VectorXd f = mod.mixture_pmf(th, 0);
  CHECK(f.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((f - L * mod.eta).lpNorm<Eigen::Infinity>() < 1e-14);

  // finite difference of dpmf
  double h = 1e-6;
  Eigen::VectorXd tp = th, tm = th;
  tp(0) += h;
  tm(0) -= h;
  double fd = (mod.pmf(0, 3, 2, tp) - mod.pmf(0, 3, 2, tm)) / (2 * h);
  CHECK(mod.dpmf(0, 3, 2, th, 0) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("nullspace moments match the switcher closed form") {
  DiscreteMixtureModel mod = panel(0.5);
  auto basis = nf_moments(mod, mod.theta);
  REQUIRE(basis.size() == 1);
  const Eigen::VectorXd& g = basis[0].cell_values[0];

  Eigen::MatrixXd L = mod.conditional_matrix(mod.theta, 0);
  CHECK((L.transpose() * g).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-12));

  // (0, e^{theta x2}, -e^{theta x1}, 0) with x = (0, 1)
  Eigen::VectorXd v = vec({0.0, std::exp(0.5), -1.0, 0.0});
  v.normalize();
  CHECK(std::abs(g.dot(v)) == doctest::Approx(1.0).epsilon(1e-10));

  // theta = 0 on a single grid point: L is one column, nullspace is 3-dim
  DiscreteMixtureModel flat =
      DiscreteMixtureModel::logit_panel(0.0, vec({0.0}), vec({1.0}), {{0.0, 0.0}});
  Eigen::MatrixXd Lf = flat.conditional_matrix(flat.theta, 0);
  CHECK((Lf.array() - 0.25).abs().maxCoeff() < 1e-14);
  auto fb = nf_moments(flat, flat.theta);
  CHECK(fb.size() == 3);
  for (const auto& b : fb)
    CHECK(std::abs(b.cell_values[0].sum()) < 1e-10);  // orthogonal to the flat column
}

TEST_CASE("nullspace dimension equals M minus rank of the table") {
  Rng rng(2024);
  // generic square table: full rank, no nullspace moments
  DiscreteMixtureModel sq = table_model(random_table(4, 4, rng));
  CHECK(nf_moments(sq, sq.theta).empty());

  // duplicated grid columns: rank 1, dimension M - 1
  Eigen::MatrixXd dup(3, 2);
  dup.col(0) = vec({0.2, 0.3, 0.5});
  dup.col(1) = dup.col(0);
  DiscreteMixtureModel dm = table_model(dup);
  CHECK(nf_moments(dm, dm.theta).size() == 2);

  // random rectangular tables against an independent rank computation
  for (int trial = 0; trial < 25; ++trial) {
    int M = 2 + static_cast<int>(rng.below(4));
    int G = 1 + static_cast<int>(rng.below(4));
    Eigen::MatrixXd L = random_table(M, G, rng);
    if (trial % 3 == 0 && G >= 2) L.col(G - 1) = L.col(0);  // force deficiency sometimes
    DiscreteMixtureModel mod = table_model(L);
    auto basis = nf_moments(mod, mod.theta);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
    lu.setThreshold(1e-9);
    CHECK(static_cast<int>(basis.size()) == M - static_cast<int>(lu.rank()));
    for (const auto& b : basis)
      CHECK((L.transpose() * b.cell_values[0]).lpNorm<Eigen::Infinity>() < 1e-10);
    // basis is orthonormal
    for (size_t i = 0; i < basis.size(); ++i)
      for (size_t j = 0; j <= i; ++j) {
        double d = basis[i].cell_values[0].dot(basis[j].cell_values[0]);
        CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).scale(1.0).epsilon(1e-10));
      }
  }
}

TEST_CASE("partial moment solves the grid-conditional equations") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r = mod.alpha;  // psi = E[alpha]
  PartialMoment pm = solve_partial_moment(mod, mod.theta, r);
  CHECK(pm.psi == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  Eigen::MatrixXd L = mod.conditional_matrix(mod.theta, 0);
  Eigen::VectorXd cond = L.transpose() * pm.g.cell_values[0];
  CHECK((cond - (r.array() - pm.psi).matrix()).lpNorm<Eigen::Infinity>() < 1e-10);

  RelevanceResult rel = relevance_constant(mod, mod.theta, pm.g, r);
  CHECK(rel.C == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(rel.residual < 1e-8);

  // an infeasible target: duplicated columns force equal conditional means
  Eigen::MatrixXd dup(2, 2);
  dup.col(0) = vec({0.3, 0.7});
  dup.col(1) = dup.col(0);
  DiscreteMixtureModel bad = table_model(dup);
  CHECK_THROWS_AS(solve_partial_moment(bad, bad.theta, vec({0.0, 1.0})), Error);
  try {
    solve_partial_moment(bad, bad.theta, vec({0.0, 1.0}));
  } catch (const Error& e) {
    CHECK(e.code() == "NotSolvable");
  }
}

TEST_CASE("relevance constant classifies functionals") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r = mod.alpha;

  // nullspace moments carry no information: C = 0
  auto basis = nf_moments(mod, mod.theta);
  RelevanceResult zero = relevance_constant(mod, mod.theta, basis[0], r);
  CHECK(zero.C == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));

  // constant functional is degenerate
  CHECK_THROWS_AS(relevance_constant(mod, mod.theta, basis[0], vec({1.0, 1.0, 1.0})), Error);

  // conditional means proportional to alpha are not proportional to alpha^2
  PartialMoment pm = solve_partial_moment(mod, mod.theta, r);
  Eigen::VectorXd r2 = mod.alpha.array().square();
  CHECK_THROWS_AS(relevance_constant(mod, mod.theta, pm.g, r2), Error);
}

TEST_CASE("fully robust moment kills the theta derivative") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r = mod.alpha;
  PartialMoment pm = solve_partial_moment(mod, mod.theta, r);
  auto m = nf_moments(mod, mod.theta);
  MomentVector g = fully_robust_moment(mod, mod.theta, pm.g, m);

  // value at the truth is preserved (E[m] = 0 there)
  CHECK(expectation(mod, mod.theta, g) == doctest::Approx(pm.psi).scale(1.0).epsilon(1e-12));

  double h = 1e-5;
  auto dtheta = [&](const MomentVector& mv) {
    return (expectation(mod, vec({0.5 + h}), mv) - expectation(mod, vec({0.5 - h}), mv)) / (2 * h);
  };
  CHECK(std::abs(dtheta(g)) < 1e-8);
  CHECK(std::abs(dtheta(pm.g)) > 1e-2);

  // matches the analytic gradient routine
  Eigen::VectorXd an = dexpectation_dtheta(mod, mod.theta, g);
  REQUIRE(an.size() == 1);
  CHECK(std::abs(an(0)) < 1e-10);

  // a zero correction moment has a singular jacobian
  MomentVector z;
  z.cell_values.push_back(Eigen::VectorXd::Zero(4));
  CHECK_THROWS_AS(fully_robust_moment(mod, mod.theta, pm.g, {z}), Error);
}

TEST_CASE("general algorithm reproduces the fully robust construction") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::VectorXd r1 = vec({0.0});
  Eigen::VectorXd r2 = mod.alpha;
  GeneralResult gr = general_algorithm(mod, mod.theta, r1, r2);
  CHECK(gr.adjoint_theta_residual < 1e-10);
  CHECK(gr.adjoint_grid_residual < 1e-10);
  CHECK(gr.psi == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  REQUIRE(gr.basis.size() == 1);
  REQUIRE(gr.A.size() == 1);

  PartialMoment pm = solve_partial_moment(mod, mod.theta, r2);
  MomentVector fr = fully_robust_moment(mod, mod.theta, pm.g, nf_moments(mod, mod.theta));
  Eigen::VectorXd diff = gr.g.cell_values[0] - fr.cell_values[0];
  CHECK(diff.lpNorm<Eigen::Infinity>() < 1e-10);

  // theta-direction representer: d/dtheta E[g] must equal r1
  GeneralResult gt = general_algorithm(mod, mod.theta, vec({1.0}), Eigen::VectorXd::Zero(3));
  CHECK(gt.adjoint_theta_residual < 1e-10);
  double h = 1e-5;
  double fd = (expectation(mod, vec({0.5 + h}), gt.g) - expectation(mod, vec({0.5 - h}), gt.g)) / (2 * h);
  CHECK(fd == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("normal means moment is orthogonal to every component density") {
  Eigen::VectorXd support = vec({-0.5, 1.0});
  double theta_bar = 1.0;
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(2001, -10.0, 11.0);
  NormalMeansMoment nm = normal_means_moment(support, theta_bar, grid);
  REQUIRE(nm.g.size() == grid.size());
  CHECK(nm.residual < 1e-8);
  CHECK(nm.g.lpNorm<Eigen::Infinity>() > 0.0);

  // independent oracle: 5-point Gauss-Legendre on each grid interval of the
  // piecewise-linear g against the N(alpha, theta_bar) density
  const double gl_x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                          0.5384693101056831, 0.9061798459386640};
  const double gl_w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                          0.4786286704993665, 0.2369268850561891};
  double sd = std::sqrt(theta_bar);
  for (Eigen::Index j = 0; j < support.size(); ++j) {
    KahanSum acc;
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i) {
      double a = grid(i), b = grid(i + 1), hw = 0.5 * (b - a), mid = 0.5 * (a + b);
      for (int q = 0; q < 5; ++q) {
        double z = mid + hw * gl_x[q];
        double t = (z - a) / (b - a);
        double gz = (1 - t) * nm.g(i) + t * nm.g(i + 1);
        double dens = norm_pdf((z - support(j)) / sd) / sd;
        acc.add(gl_w[q] * hw * gz * dens);
      }
    }
    CHECK(std::abs(acc.value()) < 1e-8 * nm.g.lpNorm<Eigen::Infinity>());
  }

  // duplicated support points collapse to one constraint
  NormalMeansMoment dup = normal_means_moment(vec({0.0, 0.0}), 1.0,
                                              Eigen::VectorXd::LinSpaced(801, -8.0, 8.0));
  CHECK(dup.residual < 1e-8);
}

TEST_CASE("average marginal effect with a known density") {
  Eigen::Index n = 20000;
  Rng rng(9);
  Eigen::VectorXd x(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = rng.normal();
    y(i) = 3.0 * x(i) + 0.5 * rng.normal();
  }
  Dataset d({"x", "y"}, {x, y});
  AmeDensity dens;
  dens.f = [](const Dataset&, Eigen::Index, double v) { return norm_pdf(v); };
  dens.dfdx = [](const Dataset&, Eigen::Index, double v) { return -v * norm_pdf(v); };
  auto mu = [](const Dataset&, Eigen::Index, double v) { return 3.0 * v; };

  AmeResult r = ame_moment(d, "y", "x", dens, mu);
  CHECK(r.psi_plug == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(r.psi_orth == doctest::Approx(3.0).epsilon(5.0 * r.se / 3.0));
  CHECK(r.se > 0.0);
  CHECK(std::abs(r.g.mean()) < 1e-10);

  auto mu0 = [](const Dataset&, Eigen::Index, double) { return 0.0; };
  Eigen::VectorXd ynoise(n);
  for (Eigen::Index i = 0; i < n; ++i) ynoise(i) = rng.normal();
  Dataset d0({"x", "y"}, {x, ynoise});
  AmeResult r0 = ame_moment(d0, "y", "x", dens, mu0);
  CHECK(std::abs(r0.psi_orth) < 5.0 * r0.se);
  CHECK(r0.psi_plug == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  AmeDensity tiny;
  tiny.f = [](const Dataset&, Eigen::Index, double) { return 1e-30; };
  tiny.dfdx = [](const Dataset&, Eigen::Index, double) { return 0.0; };
  CHECK_THROWS_AS(ame_moment(d, "y", "x", tiny, mu), Error);
}

TEST_CASE("simulation frequencies follow the mixture pmf") {
  DiscreteMixtureModel mod = panel(0.5);
  Eigen::Index n = 20000;
  Dataset d = mod.simulate(n, 77);
  REQUIRE(d.has("cell"));
  REQUIRE(d.has("outcome"));
  REQUIRE(d.has("x1"));
  Eigen::VectorXd f = mod.mixture_pmf(mod.theta, 0);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(4);
  for (Eigen::Index i = 0; i < n; ++i) {
    int m = static_cast<int>(d.col("outcome")(i));
    REQUIRE(m >= 0);
    REQUIRE(m < 4);
    counts(m) += 1.0;
  }
  for (int m = 0; m < 4; ++m) {
    double se = std::sqrt(f(m) * (1 - f(m)) / static_cast<double>(n));
    CHECK(std::abs(counts(m) / static_cast<double>(n) - f(m)) < 5.0 * se + 1e-12);
  }
  // deterministic in the seed
  Dataset d2 = mod.simulate(n, 77);
  CHECK((d.col("outcome") - d2.col("outcome")).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("model json round trip and validation") {
  DiscreteMixtureModel mod = panel(0.7);
  json j = mod.to_json();
  DiscreteMixtureModel back = DiscreteMixtureModel::from_json(j);
  CHECK(back.family == mod.family);
  CHECK((back.alpha - mod.alpha).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((back.eta - mod.eta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(back.theta(0) == 0.7);
  REQUIRE(back.cells.size() == 1);
  CHECK(back.cells[0].x[1] == 1.0);

  DiscreteMixtureModel badw = mod;
  badw.eta = vec({0.9, 0.9, 0.9});
  CHECK_THROWS_AS(badw.validate(), Error);

  Rng nr(1);
  DiscreteMixtureModel neg = table_model(random_table(3, 2, nr));
  neg.cells[0].table(0, 0) = -0.1;
  CHECK_THROWS_AS(neg.conditional_matrix(neg.theta, 0), Error);
}
