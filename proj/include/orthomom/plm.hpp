#ifndef ORTHOMOM_PLM_HPP
#define ORTHOMOM_PLM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "orthomom/dataset.hpp"
#include "orthomom/learners.hpp"

namespace orthomom {

// First-step configuration for the partly linear IV model. Oracle column
// names, when set, inject known nuisance values instead of estimating them.
// in_sample = true fits the first steps on the full sample with no
// cross-fitting (the naive plug-in configuration).
struct PlmOptions {
  int K = 5;
  std::uint64_t seed = 0;
  LearnerSpec short_spec;  // E[. | X]
  LearnerSpec long_spec;   // E[Y2 | X, Z2]
  std::string oracle_r1, oracle_r2, oracle_mu;
  bool in_sample = false;
};

struct Residualized {
  Eigen::VectorXd y1t, y2t;    // Y - E[Y|X], out of fold
  Eigen::VectorXd r1hat, r2hat;
};

// JSON options: {"k", "short", "long", "in_sample", "oracle", "oracle_r1",
// "oracle_r2", "oracle_mu"}. "oracle": true selects the generator's oracle
// column names. The fold seed is the caller's business.
PlmOptions plm_options_from_json(const nlohmann::json& j);

// Out-of-fold regressions of Y1 and Y2 on the controls.
Residualized residualize(const Dataset& d, const PlmOptions& opt);

struct OrivResult {
  Eigen::VectorXd zeta;  // mu_hat(W) - r2_hat(X)
  bool degenerate = false;
};

// zeta*(W) = E[Y2|X,Z2] - E[Y2|X], the orthogonal instrument. degenerate is
// set when the instrument carries no scale (sd below floor).
OrivResult oriv_instrument(const Dataset& d, const PlmOptions& opt);
OrivResult oriv_instrument(const Dataset& d, const PlmOptions& opt, const Residualized& res);

struct PlmFit {
  std::string estimator;
  double theta_hat = 0;
  double se = 0;
  double relevance_denominator = 0;  // sample mean of instrument x (residualized) regressor
  bool degenerate = false;
  Eigen::VectorXd moment_values;     // per observation, mean zero at theta_hat
};

// Orthogonal estimator: theta = sum(zeta Y1t) / sum(zeta Y2t), sandwich se.
PlmFit estimate_lr_2sls(const Dataset& d, const PlmOptions& opt);
PlmFit estimate_lr_2sls_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& y2t,
                               const Eigen::VectorXd& zeta);
// First-stage 2SLS: raw outcomes on the estimated instrument (not locally robust).
PlmFit estimate_fs2sls(const Dataset& d, const PlmOptions& opt);
PlmFit estimate_fs2sls_values(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& zeta);
// Regression flavor: theta = sum(zeta Y1t) / sum(zeta^2) (not locally robust).
PlmFit estimate_nlr(const Dataset& d, const PlmOptions& opt);
PlmFit estimate_nlr_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& zeta);
// Naive plug-in with the raw instrument Z2 and profile nuisance
// eta_theta(X) = r1(X) - theta r2(X); first-order sensitive to first-step bias.
PlmFit estimate_plugin(const Dataset& d, const PlmOptions& opt);
PlmFit estimate_plugin_values(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                              const Eigen::VectorXd& z2, const Eigen::VectorXd& r1hat,
                              const Eigen::VectorXd& r2hat);

struct ScoreTest {
  double statistic = 0;
  double p_value = 1;
  double theta_bar = 0;
};

// t = sqrt(n) mean(g) / sd(g) with g = (Y1t - theta_bar Y2t) zeta.
ScoreTest score_test_theta(const Dataset& d, double theta_bar, const PlmOptions& opt);
ScoreTest score_test_values(const Eigen::VectorXd& y1t, const Eigen::VectorXd& y2t,
                            const Eigen::VectorXd& zeta, double theta_bar);

// Dictionary for the subspace-restricted instrument: which b(X) terms to use.
struct DictionarySpec {
  bool constant = true;
  bool linear = false;
  bool squares = false;
};

// Instrument restricted to Gamma = span{b(X), Z2*b(X)}:
//   zeta = P_Gamma Y2 - P_GammaX Y2, with P_GammaX applied to P_Gamma Y2
// (iterated projection). K = 1 uses in-sample projections; K >= 2 cross-fits
// with shared folds. Z2 must be binary.
Eigen::VectorXd hd_gamma_instrument(const Dataset& d, const DictionarySpec& dict, int K,
                                    std::uint64_t seed);

}  // namespace orthomom

#endif
