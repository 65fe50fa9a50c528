#ifndef ORTHOMOM_DATASET_HPP
#define ORTHOMOM_DATASET_HPP

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "orthomom/common.hpp"

namespace orthomom {

// Variable roles for the regression modules:
//   y1 outcome, y2 endogenous regressor, z2 excluded instruments, x controls.
struct Roles {
  std::string y1, y2;
  std::vector<std::string> z2, x;
};

Roles roles_from_json_file(const std::string& path);
Roles roles_from_json(const nlohmann::json& j);

// Immutable column table.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> names, std::vector<Eigen::VectorXd> cols);

  Eigen::Index n() const { return cols_.empty() ? 0 : cols_[0].size(); }
  int ncols() const { return static_cast<int>(cols_.size()); }
  bool has(const std::string& name) const;
  int idx(const std::string& name) const;  // throws MissingColumn
  const Eigen::VectorXd& col(const std::string& name) const;
  const Eigen::VectorXd& col(int i) const { return cols_[static_cast<size_t>(i)]; }
  const std::vector<std::string>& names() const { return names_; }

  // n x k matrix of the named columns, in order
  Eigen::MatrixXd matrix(const std::vector<std::string>& names) const;

  Roles roles;

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::VectorXd> cols_;
};

Dataset load_csv(const std::string& path);
Dataset load_csv(const std::string& path, const Roles& roles);
void write_csv(const Dataset& d, const std::string& path);

// ---- data generating processes ----

// Partly linear model with endogeneity:
//   X ~ N(0, I_d);  Z2 = 1{X'beta + nu > 0};  Y2 = m0(X) + pi*Z2 + u;
//   Y1 = theta0*Y2 + eta0(X) + eps,  corr(u, eps) = rho,  E[eps | X, Z2] = 0.
//   m0(x) = 0.5 x1 + 0.5 x2;  eta0(x) = x1 + 0.5 x2 + 0.5 x1^2;  beta = (1, 0.5, 0, ...).
// exclusion = false replaces the instrument by a copy of X1 (Z2 in sigma(X),
// so E[Y2|W] - E[Y2|X] vanishes identically).
// Emits oracle columns: oracle_r1 = E[Y1|X], oracle_r2 = E[Y2|X],
// oracle_mu = E[Y2|W], oracle_zeta = oracle_mu - oracle_r2,
// oracle_eta = eta0(X), oracle_pz = E[Z2|X].
struct PlmDgp {
  Eigen::Index n = 1000;
  int d = 5;
  double theta0 = 1.0;
  double rho = 0.5;
  double pi = 1.0;
  double sigma_u = 1.0;
  double sigma_eps = 1.0;
  bool exclusion = true;
  bool allow_irrelevant = false;  // pi == 0 is BadSpec unless set
  std::uint64_t seed = 1;
};
Dataset gen_plm(const PlmDgp& s);

// Heterogeneous-effects model:
//   X ~ N(eta03, I);  Xc = X - eta03;  Z2 = 1{0.5 Xc1 + 0.5 Xc2 + nu > 0};
//   Y2 = pi*Z2 + 0.5 Xc1 + 0.5 Xc2 + u   (or Y2 = Z2 when exogenous);
//   Y1 = theta0 Y2 + eta01 + eta02'Xc + Y2 * (eta04'Xc) + eps, corr(u,eps)=rho.
// Emits oracle_p = E[Y2 | X, Z2].
struct HteDgp {
  Eigen::Index n = 1000;
  int d_x = 10;
  double theta0 = 1.0;
  double eta01 = 0.5;
  Eigen::VectorXd eta02;  // default 0.5 * ones
  Eigen::VectorXd eta03;  // default zeros
  Eigen::VectorXd eta04;  // default zeros
  double pi = 1.0;
  double rho = 0.5;
  double sigma_u = 1.0;
  double sigma_eps = 1.0;
  bool exogenous = false;
  std::uint64_t seed = 1;
};
Dataset gen_hte(const HteDgp& s);

// Linear random-coefficients (functional-differencing sanity model):
//   X2 = (1, W), W ~ N(0,1);  X1 = 0.7 W + e, e ~ N(0,1);
//   alpha drawn from a discrete grid independent of (W, e);
//   Y = theta0 X1 + alpha_1 + alpha_2 W.
// Emits oracle_x1t = X1 - E[X1|X2], oracle_yt = Y - E[Y|X2], alpha_idx.
struct RcDgp {
  Eigen::Index n = 1000;
  double theta0 = 1.0;
  std::uint64_t seed = 1;
};
Dataset gen_rc(const RcDgp& s);

// Two-period binary-choice panel with unobserved heterogeneity:
//   P(Y_t = 1 | alpha, x_t) = logistic(alpha + theta0 x_t), t = 1, 2,
//   alpha ~ discrete grid (weights), covariate cell (x1, x2) ~ cell weights.
struct LogitPanelDgp {
  Eigen::Index n = 1000;
  double theta0 = 0.5;
  Eigen::VectorXd alpha_grid;     // default (-1, 0, 1)
  Eigen::VectorXd weights;        // default uniform
  std::vector<std::array<double, 2>> cells = {{0.0, 1.0}};
  Eigen::VectorXd cell_weights;   // default uniform
  std::uint64_t seed = 1;
};
Dataset gen_logit_panel(const LogitPanelDgp& s);

// Deconvolution-style location model: Z = alpha + sqrt(theta0) * u, u ~ N(0,1),
// alpha ~ discrete support with weights.
struct NormalMeansDgp {
  Eigen::Index n = 1000;
  double theta0 = 1.0;
  Eigen::VectorXd support;   // default (0)
  Eigen::VectorXd weights;   // default uniform
  std::uint64_t seed = 1;
};
Dataset gen_normal_means(const NormalMeansDgp& s);

// JSON -> DGP settings. Keys mirror the struct fields; absent keys keep the
// defaults above. Unknown keys are BadSpec.
PlmDgp plm_dgp_from_json(const nlohmann::json& j);
HteDgp hte_dgp_from_json(const nlohmann::json& j);
RcDgp rc_dgp_from_json(const nlohmann::json& j);
LogitPanelDgp logit_panel_dgp_from_json(const nlohmann::json& j);
NormalMeansDgp normal_means_dgp_from_json(const nlohmann::json& j);

}  // namespace orthomom

#endif
