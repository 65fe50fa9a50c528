#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "orthomom/common.hpp"
#include "orthomom/learners.hpp"
#include "orthomom/rng.hpp"

#include <nlohmann/json.hpp>

using namespace orthomom;
using nlohmann::json;

namespace {

// x alternating -1, 1: mean 0, population sd 1, so the standardized column
// equals the raw one and penalized slopes have closed forms.
Eigen::MatrixXd alternating(Eigen::Index n) {
  Eigen::MatrixXd X(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) X(i, 0) = (i % 2 == 0) ? -1.0 : 1.0;
  return X;
}

}  // namespace

TEST_CASE("least squares is exact on linear data") {
  Eigen::Index n = 40;
  Eigen::MatrixXd X(n, 2);
  Rng rng(7);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
  }
  Eigen::VectorXd y = 2.0 + 3.0 * X.col(0).array() - 1.5 * X.col(1).array();
  FittedLearner f = fit(X, y, LearnerSpec{});
  CHECK((f.predict(X) - y).lpNorm<Eigen::Infinity>() < 1e-10);
  REQUIRE(f.has_coefficients());
  Eigen::VectorXd c = f.coefficients();
  REQUIRE(c.size() == 3);
  CHECK(c(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(c(1) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(c(2) == doctest::Approx(-1.5).epsilon(1e-10));
  CHECK(f.predict_row(Eigen::RowVectorXd::Zero(2)) == doctest::Approx(2.0).epsilon(1e-10));

  // zero-column design: training-mean predictor
  Eigen::MatrixXd X0(n, 0);
  FittedLearner m = fit(X0, y, LearnerSpec{});
  CHECK(m.predict(X0)(0) == doctest::Approx(y.mean()).epsilon(1e-12));
}

TEST_CASE("ridge shrinks the slope by 1/(1+lambda)") {
  Eigen::Index n = 50;
  Eigen::MatrixXd X = alternating(n);
  Eigen::VectorXd y = (0.7 + 2.0 * X.col(0).array()).matrix();
  for (double lam : {0.0, 0.1, 0.5, 2.0}) {
    LearnerSpec s;
    s.method = "ridge";
    s.lambda = lam;
    FittedLearner f = fit(X, y, s);
    Eigen::VectorXd c = f.coefficients();
    CHECK(c(1) == doctest::Approx(2.0 / (1.0 + lam)).epsilon(1e-10));
    CHECK(c(0) == doctest::Approx(0.7).epsilon(1e-10));  // intercept unpenalized
  }
  LearnerSpec bad;
  bad.method = "ridge";  // lambda unset
  CHECK_THROWS_AS(fit(X, y, bad), Error);
}

TEST_CASE("l1 soft-thresholds the standardized slope") {
  Eigen::Index n = 60;
  Eigen::MatrixXd X = alternating(n);
  Eigen::VectorXd y = (0.3 + 2.0 * X.col(0).array()).matrix();
  for (double lam : {0.5, 1.0, 1.9}) {
    LearnerSpec s;
    s.method = "l1";
    s.lambda = lam;
    Eigen::VectorXd c = fit(X, y, s).coefficients();
    CHECK(c(1) == doctest::Approx(2.0 - lam).epsilon(1e-7));
    CHECK(c(0) == doctest::Approx(0.3).epsilon(1e-7));
  }
  // past lambda_max the fit is the constant mean
  LearnerSpec s;
  s.method = "l1";
  s.lambda = 2.5;
  Eigen::VectorXd c = fit(X, y, s).coefficients();
  CHECK(c(1) == 0.0);
  CHECK(c(0) == doctest::Approx(y.mean()).epsilon(1e-12));

  // cross-validated lambda stays close to the truth on clean data
  LearnerSpec cv;
  cv.method = "l1";
  Eigen::VectorXd noisy = y;
  Rng rng(99);
  for (Eigen::Index i = 0; i < n; ++i) noisy(i) += 0.05 * rng.normal();
  Eigen::VectorXd ccv = fit(X, noisy, cv).coefficients();
  CHECK(ccv(1) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("kernel and k-nearest limit cases") {
  Eigen::Index n = 30;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  Rng rng(11);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = static_cast<double>(i);  // distinct points
    y(i) = rng.normal();
  }
  LearnerSpec kern;
  kern.method = "kernel";
  kern.bandwidth = 1e9;  // flat kernel: every prediction is the mean
  Eigen::VectorXd pk = fit(X, y, kern).predict(X);
  for (Eigen::Index i = 0; i < n; ++i) CHECK(pk(i) == doctest::Approx(y.mean()).epsilon(1e-9));

  LearnerSpec k1;
  k1.method = "k-nearest";
  k1.k = 1;
  Eigen::VectorXd p1 = fit(X, y, k1).predict(X);
  CHECK((p1 - y).lpNorm<Eigen::Infinity>() < 1e-12);  // own point is the nearest

  LearnerSpec kn;
  kn.method = "k-nearest";
  kn.k = static_cast<int>(n);
  Eigen::VectorXd pn = fit(X, y, kn).predict(X);
  for (Eigen::Index i = 0; i < n; ++i) CHECK(pn(i) == doctest::Approx(y.mean()).epsilon(1e-12));

  LearnerSpec unknown;
  unknown.method = "spline";
  CHECK_THROWS_AS(fit(X, y, unknown), Error);
}

TEST_CASE("boosted stumps learn a step function") {
  Eigen::Index n = 400;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  Rng rng(13);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y(i) = (X(i, 0) > 0.0 ? 1.0 : 0.0) + 0.5 * (X(i, 1) > 1.0 ? 1.0 : 0.0);
  }
  LearnerSpec s;
  s.method = "boosted-stumps";
  s.rounds = 300;
  Eigen::VectorXd p = fit(X, y, s).predict(X);
  double mse = (p - y).squaredNorm() / static_cast<double>(n);
  double var = (y.array() - y.mean()).matrix().squaredNorm() / static_cast<double>(n);
  CHECK(mse < 0.05 * var);
  CHECK(!fit(X, y, s).has_coefficients());
}

TEST_CASE("fold plans are balanced, exhaustive, and seeded") {
  auto f = make_folds(103, 5, 2024);
  REQUIRE(f.size() == 103);
  std::vector<int> sizes(5, 0);
  for (int id : f) {
    REQUIRE(id >= 0);
    REQUIRE(id < 5);
    ++sizes[static_cast<size_t>(id)];
  }
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<int>{20, 20, 21, 21, 21});

  CHECK(make_folds(103, 5, 2024) == f);
  CHECK(make_folds(103, 5, 2025) != f);

  // K = n is leave-one-out: every fold a singleton
  auto loo = make_folds(12, 12, 1);
  std::vector<int> seen(12, 0);
  for (int id : loo) ++seen[static_cast<size_t>(id)];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("cross fitting predicts out of fold") {
  // intercept-only learner: the OOF value at row i is the mean of the
  // complement of i's fold, which never includes y_i
  Eigen::Index n = 10;
  Eigen::MatrixXd X(n, 0);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = static_cast<double>(i);
  OofPredictions oof = cross_fit(X, y, LearnerSpec{}, 2, 7);
  REQUIRE(oof.K == 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    KahanSum s;
    int cnt = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (oof.fold_id[static_cast<size_t>(j)] != oof.fold_id[static_cast<size_t>(i)]) {
        s.add(y(j));
        ++cnt;
      }
    CHECK(oof.values(i) == doctest::Approx(s.value() / cnt).epsilon(1e-12));
  }

  // exact linear signal: OOF least squares recovers it exactly
  Eigen::MatrixXd Xl(40, 1);
  Rng rng(3);
  for (Eigen::Index i = 0; i < 40; ++i) Xl(i, 0) = rng.normal();
  Eigen::VectorXd yl = (1.0 + 2.0 * Xl.col(0).array()).matrix();
  OofPredictions o2 = cross_fit(Xl, yl, LearnerSpec{}, 5, 42);
  CHECK((o2.values - yl).lpNorm<Eigen::Infinity>() < 1e-8);

  // a fixed fold plan reproduces the seeded run
  auto folds = make_folds(40, 5, 42);
  OofPredictions o3 = cross_fit_with_folds(Xl, yl, LearnerSpec{}, folds, 5);
  CHECK((o3.values - o2.values).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("minimum-norm projection handles rank deficiency") {
  Eigen::Index n = 25;
  Eigen::MatrixXd D(n, 3);
  Rng rng(17);
  for (Eigen::Index i = 0; i < n; ++i) {
    D(i, 0) = 1.0;
    D(i, 1) = rng.normal();
    D(i, 2) = D(i, 1);  // duplicate column
  }
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.normal();

  Eigen::VectorXd fit3 = project_onto(D, y);
  Eigen::VectorXd fit2 = project_onto(D.leftCols(2), y);
  CHECK((fit3 - fit2).lpNorm<Eigen::Infinity>() < 1e-10);

  // minimum-norm coefficients split the duplicated column evenly
  Eigen::VectorXd c = project_coefs(D, y);
  CHECK(c(1) == doctest::Approx(c(2)).epsilon(1e-10));
  CHECK((D * c - fit2).lpNorm<Eigen::Infinity>() < 1e-10);

  // residual orthogonal to the column space
  CHECK(std::abs(D.col(1).dot(y - fit3)) < 1e-8);

  // out-of-fold projection at an exact signal
  Eigen::VectorXd ylin = D.leftCols(2) * Eigen::Vector2d(0.5, -1.0);
  auto folds = make_folds(n, 5, 9);
  Eigen::VectorXd poof = project_onto_oof(D, ylin, folds, 5);
  CHECK((poof - ylin).lpNorm<Eigen::Infinity>() < 1e-8);

  Eigen::MatrixXd coefs = project_coefs_oof(D.leftCols(2), ylin, folds, 5);
  REQUIRE(coefs.cols() == 5);
  for (int f = 0; f < 5; ++f) {
    CHECK(coefs(0, f) == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(coefs(1, f) == doctest::Approx(-1.0).epsilon(1e-8));
  }
}

TEST_CASE("learner specs round trip through json") {
  json j = {{"method", "ridge"}, {"lambda", 0.25}};
  LearnerSpec s = LearnerSpec::from_json(j);
  CHECK(s.method == "ridge");
  CHECK(s.lambda == 0.25);
  json back = s.to_json();
  CHECK(back.at("method") == "ridge");
  CHECK(back.at("lambda") == 0.25);

  LearnerSpec ks = LearnerSpec::from_json(json{{"method", "k-nearest"}, {"k", 3}});
  CHECK(ks.k == 3);
}
