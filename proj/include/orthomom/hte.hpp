#ifndef ORTHOMOM_HTE_HPP
#define ORTHOMOM_HTE_HPP

#include <Eigen/Dense>
#include <string>

#include "orthomom/dataset.hpp"
#include "orthomom/learners.hpp"

namespace orthomom {

// Inference on the l-th interaction coefficient eta4_l in
//   E[Y1 - theta0 Y2 - eta1 - eta2'(X-eta3) - sum_k eta4_k Y2 (X_k - eta3_k) | W] = 0.
struct HteOptions {
  int K = 5;
  std::uint64_t seed = 0;
  LearnerSpec p_spec;       // step 1: E[Y2|W]; ignored when oracle_p is set
  std::string oracle_p;     // column holding E[Y2|W]
  int ci_points = 241;
  double ci_half_width_se = 6.0;
  double level = 0.05;
  HteOptions() { p_spec.method = "boosted-stumps"; }
};

// JSON options: {"k", "p", "oracle_p", "ci_points", "ci_half_width_se"}.
// "oracle_p" is either true (the generator's oracle_p column) or a column
// name. level and the fold seed are the caller's business.
HteOptions hte_options_from_json(const nlohmann::json& j);

// Q_l = (Y2, 1, Xc', Y2 * Xc_{-l}')' with Xc = X - eta3.
Eigen::MatrixXd build_ql(const Dataset& d, int l, const Eigen::VectorXd& eta3);
// xi_l = (p, 1, Xc', p * Xc_{-l}')' = E[Q_l | W] when p = E[Y2|W].
Eigen::MatrixXd build_xi(const Dataset& d, const Eigen::VectorXd& p, int l,
                         const Eigen::VectorXd& eta3);

struct HteParts {
  Eigen::VectorXd eta3;      // sample means of X
  Eigen::VectorXd p;         // step 1 predictions
  Eigen::MatrixXd Ql, Xi;
  Eigen::VectorXd zeta;      // p * Xc_l
  Eigen::VectorXd phistar;   // zeta - oof projection of zeta on xi
  Eigen::VectorXd v;         // Y2 * Xc_l
  Eigen::VectorXd u, w;      // moment(etabar) per obs = u - etabar * w
  std::vector<int> folds;
  int K = 0;
};

// Steps 1-3 plus the step-2 projections of Y1 and v on xi. The moment at any
// tested value etabar is affine: m_i(etabar) = u_i - etabar * w_i.
HteParts hte_parts(const Dataset& d, int l, const HteOptions& opt);

struct HteTestResult {
  double statistic = 0;
  double p_value = 1;
  bool reject = false;
  double eta4_bar = 0;
  double level = 0.05;
};
HteTestResult hte_test(const Dataset& d, int l, double eta4_bar, const HteOptions& opt);
HteTestResult hte_test_parts(const HteParts& parts, double eta4_bar, double level);

struct HteEstimate {
  double eta4_hat = 0;
  double se = 0;
  double relevance_denominator = 0;  // mean(v * phistar)
};
HteEstimate hte_estimate(const Dataset& d, int l, const HteOptions& opt);

struct HteCi {
  double lo = 0, hi = 0;
  bool empty_interval = false;  // no grid point accepted; lo = hi = minimal-p point
  double eta4_hat = 0;
  double se = 0;
};
// Test inversion over ci_points values spanning eta4_hat +/- ci_half_width_se * se.
HteCi hte_ci(const Dataset& d, int l, const HteOptions& opt);

}  // namespace orthomom

#endif
