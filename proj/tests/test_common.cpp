#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "orthomom/common.hpp"
#include "orthomom/dataset.hpp"
#include "orthomom/rng.hpp"

#include <nlohmann/json.hpp>

using namespace orthomom;
using nlohmann::json;

TEST_CASE("kahan summation recovers what naive addition loses") {
  KahanSum s;
  s.add(1e16);
  s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1.0);  // naive: (1e16 + 1) - 1e16 == 0

  std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  CHECK(kahan_mean(v) == doctest::Approx(2.5).epsilon(1e-15));
  // sd with 1/(n-1): var = (2.25+0.25+0.25+2.25)/3
  CHECK(kahan_sd(v) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(kahan_sd({7.0}) == 0.0);
  CHECK(kahan_mean({}) == 0.0);
}

TEST_CASE("normal cdf / quantile round trip") {
  CHECK(norm_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(norm_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-14));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));

  for (double p : {1e-9, 1e-6, 0.01, 0.02425, 0.3, 0.5, 0.8, 0.97575, 0.999999}) {
    CHECK(norm_cdf(norm_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
    // symmetry of the two tail branches; for extreme p the comparison point
    // 1 - p itself carries an O(eps/p') representation error, so stay moderate
    if (p >= 1e-6 && p <= 0.999999)
      CHECK(norm_quantile(p) == doctest::Approx(-norm_quantile(1.0 - p)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(norm_quantile(0.0), Error);
  CHECK_THROWS_AS(norm_quantile(1.0), Error);

  CHECK(two_sided_p(0.0) == doctest::Approx(1.0));
  CHECK(two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-10));
}

TEST_CASE("error carries code and category") {
  Error e = data_error("BadSpec", "msg");
  CHECK(e.code() == "BadSpec");
  CHECK(e.category() == ErrorCategory::Data);
  CHECK(numerical_error("SingularJacobian", "m").category() == ErrorCategory::Numerical);
  CHECK(usage_error("u").category() == ErrorCategory::Usage);
}

TEST_CASE("rng streams are deterministic and well behaved") {
  CHECK(derive_seed(42, 0) != derive_seed(42, 1));
  CHECK(derive_seed(42, 0) != derive_seed(43, 0));
  CHECK(derive_seed(42, 7) == derive_seed(42, 7));

  Rng a(123), b(123);
  for (int i = 0; i < 200; ++i) CHECK(a.uniform() == b.uniform());

  Rng r(2024);
  int n = 20000;
  KahanSum su, sn, sn2;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    su.add(u);
    double z = r.normal();
    sn.add(z);
    sn2.add(z * z);
    int bit = r.bernoulli(0.3);
    CHECK((bit == 0 || bit == 1));
    CHECK(r.below(7) < 7);
  }
  CHECK(su.value() / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(sn.value() / n == doctest::Approx(0.0).scale(1).epsilon(0.03));
  CHECK(sn2.value() / n == doctest::Approx(1.0).epsilon(0.05));

  // categorical respects the cumulative boundaries
  std::vector<double> cum = {0.2, 0.5, 1.0};
  std::vector<int> counts(3, 0);
  Rng rc(5);
  for (int i = 0; i < 30000; ++i) ++counts[static_cast<size_t>(rc.categorical(cum))];
  CHECK(counts[0] / 30000.0 == doctest::Approx(0.2).epsilon(0.08));
  CHECK(counts[1] / 30000.0 == doctest::Approx(0.3).epsilon(0.08));
}

TEST_CASE("dataset column access and matrix layout") {
  Eigen::VectorXd a(3), bcol(3);
  a << 1, 2, 3;
  bcol << 4, 5, 6;
  Dataset d({"a", "b"}, {a, bcol});
  CHECK(d.n() == 3);
  CHECK(d.ncols() == 2);
  CHECK(d.has("a"));
  CHECK(!d.has("c"));
  CHECK(d.col("b")(1) == 5.0);
  CHECK_THROWS_AS(d.col("zz"), Error);

  Eigen::MatrixXd M = d.matrix({"b", "a"});
  CHECK(M(0, 0) == 4.0);
  CHECK(M(2, 1) == 3.0);

  Eigen::VectorXd ragged(2);
  ragged << 1, 2;
  CHECK_THROWS_AS(Dataset({"a", "b"}, {a, ragged}), Error);
}

TEST_CASE("csv round trip is bit exact") {
  Eigen::VectorXd v1(4), v2(4);
  v1 << 3.141592653589793, 1.0 / 3.0, -1e-17, 123456789.123456789;
  v2 << -0.0, 2.2250738585072014e-308, 1.7976931348623157e+308, 0.1;
  Dataset d({"u", "w"}, {v1, v2});
  std::string path = "/tmp/orthomom_test_roundtrip.csv";
  write_csv(d, path);
  Dataset e = load_csv(path);
  REQUIRE(e.n() == 4);
  REQUIRE(e.names() == std::vector<std::string>{"u", "w"});
  for (int j = 0; j < 2; ++j)
    for (Eigen::Index i = 0; i < 4; ++i) {
      double x = d.col(j)(i), y = e.col(j)(i);
      CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
    }
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_csv("/tmp/orthomom_no_such_file.csv"), Error);
}

TEST_CASE("roles parse from json") {
  json j = {{"y1", "out"}, {"y2", "end"}, {"z2", {"iv1", "iv2"}}, {"x", {"c1"}}};
  Roles r = roles_from_json(j);
  CHECK(r.y1 == "out");
  CHECK(r.y2 == "end");
  REQUIRE(r.z2.size() == 2);
  CHECK(r.z2[1] == "iv2");
  REQUIRE(r.x.size() == 1);
}

TEST_CASE("gen_plm satisfies its oracle identities") {
  PlmDgp s;
  s.n = 4000;
  s.seed = 11;
  Dataset d = gen_plm(s);
  CHECK(d.n() == 4000);
  CHECK(d.roles.y1 == "y1");
  CHECK(d.roles.x.size() == 5);

  // construction identities, exact
  Eigen::VectorXd r1 = d.col("oracle_r1"), r2 = d.col("oracle_r2");
  Eigen::VectorXd mu = d.col("oracle_mu"), zeta = d.col("oracle_zeta");
  Eigen::VectorXd eta = d.col("oracle_eta");
  CHECK((r1 - s.theta0 * r2 - eta).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((zeta - (mu - r2)).lpNorm<Eigen::Infinity>() < 1e-12);
  Eigen::VectorXd x1 = d.col("x1"), x2 = d.col("x2");
  CHECK((eta - (x1 + 0.5 * x2 + 0.5 * x1.cwiseProduct(x1))).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((mu - (0.5 * x1 + 0.5 * x2 + s.pi * d.col("z2"))).lpNorm<Eigen::Infinity>() < 1e-12);

  // z2 is binary and pz = Phi(x1 + 0.5 x2)
  for (Eigen::Index i = 0; i < 50; ++i) {
    CHECK((d.col("z2")(i) == 0.0 || d.col("z2")(i) == 1.0));
    CHECK(d.col("oracle_pz")(i) == doctest::Approx(norm_cdf(x1(i) + 0.5 * x2(i))).epsilon(1e-12));
  }

  // statistical identities, 5 sigma
  auto zmean = [&](const Eigen::VectorXd& v) {
    return std::abs(v.mean()) <= 5.0 * std::sqrt(v.squaredNorm() / v.size()) / std::sqrt(double(v.size()));
  };
  CHECK(zmean(d.col("y1") - r1 - s.theta0 * (d.col("y2") - r2)));
  CHECK(zmean(d.col("y2") - mu));
  CHECK(zmean(d.col("z2") - d.col("oracle_pz")));

  // same seed reproduces, different seed does not
  Dataset d2 = gen_plm(s);
  CHECK((d.col("y1") - d2.col("y1")).lpNorm<Eigen::Infinity>() == 0.0);
  s.seed = 12;
  CHECK((d.col("y1") - gen_plm(s).col("y1")).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("gen_plm without exclusion makes zeta identically zero") {
  PlmDgp s;
  s.n = 500;
  s.exclusion = false;
  s.seed = 3;
  Dataset d = gen_plm(s);
  CHECK((d.col("z2") - d.col("x1")).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(d.col("oracle_zeta").lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("gen_plm rejects bad specs") {
  PlmDgp s;
  s.pi = 0.0;
  CHECK_THROWS_AS(gen_plm(s), Error);
  s.allow_irrelevant = true;
  CHECK_NOTHROW(gen_plm(s));
  PlmDgp t;
  t.rho = 1.0;
  CHECK_THROWS_AS(gen_plm(t), Error);
}

TEST_CASE("gen_hte exogenous case and oracle propensity") {
  HteDgp s;
  s.n = 800;
  s.exogenous = true;
  s.seed = 21;
  Dataset d = gen_hte(s);
  CHECK((d.col("y2") - d.col("z2")).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((d.col("oracle_p") - d.col("z2")).lpNorm<Eigen::Infinity>() == 0.0);

  HteDgp s2;
  s2.n = 800;
  s2.seed = 22;
  Dataset d2 = gen_hte(s2);
  // y2 - oracle_p is the first-stage error: mean zero, sd near sigma_u
  Eigen::VectorXd u = d2.col("y2") - d2.col("oracle_p");
  CHECK(std::abs(u.mean()) < 5.0 / std::sqrt(800.0));
  CHECK(std::sqrt(u.squaredNorm() / 799.0) == doctest::Approx(1.0).epsilon(0.15));
  // eta03 shifts the x columns
  HteDgp s3;
  s3.n = 400;
  s3.eta03 = Eigen::VectorXd::Constant(10, 2.0);
  s3.seed = 23;
  Dataset d3 = gen_hte(s3);
  CHECK(d3.col("x1").mean() == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("gen_rc oracle residualization is exact") {
  RcDgp s;
  s.n = 1000;
  s.theta0 = 2.0;
  s.seed = 31;
  Dataset d = gen_rc(s);
  Eigen::VectorXd w = d.col("w");
  // E[X1|X2] = 0.7 W, E[alpha1] = 0, E[alpha2] = 1
  CHECK((d.col("oracle_x1t") - (d.col("x1") - 0.7 * w)).lpNorm<Eigen::Infinity>() < 1e-12);
  Eigen::VectorXd ey = 2.0 * 0.7 * w + Eigen::VectorXd::Zero(1000) + 1.0 * w;
  CHECK((d.col("oracle_yt") - (d.col("y") - ey)).lpNorm<Eigen::Infinity>() < 1e-12);
  for (Eigen::Index i = 0; i < 50; ++i) {
    double g = d.col("alpha_idx")(i);
    CHECK((g == 0.0 || g == 1.0 || g == 2.0));
  }
}

TEST_CASE("gen_logit_panel outcomes and defaults") {
  LogitPanelDgp s;
  s.n = 3000;
  s.seed = 41;
  Dataset d = gen_logit_panel(s);
  REQUIRE(d.has("y1"));
  REQUIRE(d.has("y2"));
  REQUIRE(d.has("cell"));
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    CHECK((d.col("y1")(i) == 0.0 || d.col("y1")(i) == 1.0));
    CHECK((d.col("y2")(i) == 0.0 || d.col("y2")(i) == 1.0));
    CHECK(d.col("cell")(i) == 0.0);
    CHECK(d.col("x1")(i) == 0.0);
    CHECK(d.col("x2")(i) == 1.0);
  }
  // P(Y2=1) averaged over alpha in {-1,0,1} at theta0=0.5, x2=1:
  // (logistic(-0.5)+logistic(0.5)+logistic(1.5))/3
  double p2 = (1 / (1 + std::exp(0.5)) + 1 / (1 + std::exp(-0.5)) + 1 / (1 + std::exp(-1.5))) / 3.0;
  CHECK(d.col("y2").mean() == doctest::Approx(p2).epsilon(0.06));
}

TEST_CASE("gen_normal_means stays on its support") {
  NormalMeansDgp s;
  s.n = 500;
  s.support = Eigen::VectorXd(2);
  s.support << -1.0, 2.0;
  s.seed = 51;
  Dataset d = gen_normal_means(s);
  REQUIRE(d.has("z"));
  REQUIRE(d.has("alpha"));
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    double a = d.col("alpha")(i);
    CHECK((a == -1.0 || a == 2.0));
  }
  // z - alpha ~ N(0, theta0)
  Eigen::VectorXd e = d.col("z") - d.col("alpha");
  CHECK(std::abs(e.mean()) < 5.0 * std::sqrt(s.theta0 / 500.0));
  CHECK(std::sqrt(e.squaredNorm() / 499.0) == doctest::Approx(std::sqrt(s.theta0)).epsilon(0.15));
}

TEST_CASE("dgp json parsers read fields and reject unknown keys") {
  json j = {{"n", 250},     {"d", 3},         {"theta0", 2.5},  {"rho", -0.2},
            {"pi", 0.7},    {"sigma_u", 1.5}, {"sigma_eps", 2.0}, {"exclusion", false},
            {"allow_irrelevant", true}, {"seed", 99}};
  PlmDgp p = plm_dgp_from_json(j);
  CHECK(p.n == 250);
  CHECK(p.d == 3);
  CHECK(p.theta0 == 2.5);
  CHECK(p.rho == -0.2);
  CHECK(p.pi == 0.7);
  CHECK(p.exclusion == false);
  CHECK(p.allow_irrelevant == true);
  CHECK(p.seed == 99);

  json bad = {{"n", 100}, {"thetaO", 1.0}};
  CHECK_THROWS_WITH_AS(plm_dgp_from_json(bad), doctest::Contains("thetaO"), Error);

  json h = {{"d_x", 4}, {"eta04", {0.5, 0, 0, 0}}, {"exogenous", true}};
  HteDgp hd = hte_dgp_from_json(h);
  CHECK(hd.d_x == 4);
  REQUIRE(hd.eta04.size() == 4);
  CHECK(hd.eta04(0) == 0.5);
  CHECK(hd.exogenous == true);
  CHECK_THROWS_AS(hte_dgp_from_json(json{{"eta05", {1.0}}}), Error);

  json lp = {{"theta0", 0.8},
             {"alpha_grid", {-2.0, 2.0}},
             {"weights", {0.5, 0.5}},
             {"cells", {{0.0, 1.0}, {1.0, 0.0}}},
             {"cell_weights", {0.3, 0.7}}};
  LogitPanelDgp lpd = logit_panel_dgp_from_json(lp);
  CHECK(lpd.theta0 == 0.8);
  REQUIRE(lpd.alpha_grid.size() == 2);
  REQUIRE(lpd.cells.size() == 2);
  CHECK(lpd.cells[1][0] == 1.0);
  CHECK(lpd.cell_weights(1) == 0.7);
  CHECK_THROWS_AS(logit_panel_dgp_from_json(json{{"cells", {{1.0}}}}), Error);

  RcDgp rc = rc_dgp_from_json(json{{"n", 77}, {"theta0", 3.0}});
  CHECK(rc.n == 77);
  CHECK(rc.theta0 == 3.0);

  NormalMeansDgp nm = normal_means_dgp_from_json(
      json{{"support", {0.0, 1.0}}, {"weights", {0.25, 0.75}}});
  REQUIRE(nm.support.size() == 2);
  CHECK(nm.weights(1) == 0.75);
}
