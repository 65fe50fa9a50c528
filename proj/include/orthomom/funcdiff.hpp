#ifndef ORTHOMOM_FUNCDIFF_HPP
#define ORTHOMOM_FUNCDIFF_HPP

#include <Eigen/Dense>
#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "orthomom/dataset.hpp"

namespace orthomom {

// A moment function on a discrete mixture: one value per (cell, outcome).
struct MomentVector {
  std::vector<Eigen::VectorXd> cell_values;
  MomentVector() = default;
  explicit MomentVector(std::vector<Eigen::VectorXd> v) : cell_values(std::move(v)) {}
  double norm() const;
};

// Discrete outcome mixture: within covariate cell c the outcome takes M_c
// values with P(z_m | alpha; theta) given by the family pmf; alpha sits on a
// known grid with mixing weights eta.
class DiscreteMixtureModel {
 public:
  std::string family;  // "logit-panel-T2" | "custom-table"
  Eigen::VectorXd alpha;  // grid, size G
  Eigen::VectorXd eta;    // mixing weights, sum 1
  Eigen::VectorXd theta;  // structural parameters (empty for custom-table)

  struct Cell {
    std::vector<double> x;   // covariates (logit panel: x1, x2)
    double weight = 1.0;
    Eigen::MatrixXd table;   // custom-table: M x G probabilities
  };
  std::vector<Cell> cells;

  int G() const { return static_cast<int>(alpha.size()); }
  int p() const { return static_cast<int>(theta.size()); }
  int n_cells() const { return static_cast<int>(cells.size()); }
  int M(int c) const;

  double pmf(int c, int m, int g, const Eigen::VectorXd& th) const;
  double dpmf(int c, int m, int g, const Eigen::VectorXd& th, int j) const;

  // L with L(m, g) = P(z_m | alpha_g; theta) for the given cell; columns must
  // be probability vectors (NonStochastic otherwise).
  Eigen::MatrixXd conditional_matrix(const Eigen::VectorXd& th, int c) const;

  // mixture pmf over outcomes of a cell: f(m) = sum_g eta_g P(z_m | alpha_g)
  Eigen::VectorXd mixture_pmf(const Eigen::VectorXd& th, int c) const;
  Eigen::VectorXd mixture_pmf(const Eigen::VectorXd& th, int c, const Eigen::VectorXd& eta_w) const;

  // columns: cell, outcome (plus x1, x2 for the logit panel)
  Dataset simulate(Eigen::Index n, std::uint64_t seed) const;
  Dataset simulate(Eigen::Index n, std::uint64_t seed, const Eigen::VectorXd& eta_w) const;

  void validate() const;
  static DiscreteMixtureModel from_json(const nlohmann::json& j);
  static DiscreteMixtureModel from_json_file(const std::string& path);
  nlohmann::json to_json() const;

  static DiscreteMixtureModel logit_panel(double theta0, const Eigen::VectorXd& alpha_grid,
                                          const Eigen::VectorXd& weights,
                                          const std::vector<std::array<double, 2>>& cells);
};

// Expectation of a fixed moment function under (theta, eta), and the
// theta-gradient of that map (the moment function held fixed).
double expectation(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                   const MomentVector& g);
Eigen::VectorXd dexpectation_dtheta(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                    const MomentVector& g);

// Orthonormal basis of {g : L' g = 0} for one cell (each column of L is the
// outcome pmf at one grid point). Singular values <= 1e-10 * sigma_max count
// as zero.
std::vector<Eigen::VectorXd> nf_moments_cell(const DiscreteMixtureModel& mod,
                                             const Eigen::VectorXd& th, int c);
// All cells: each basis element of cell c extended by zeros elsewhere.
std::vector<MomentVector> nf_moments(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th);

struct PartialMoment {
  MomentVector g;
  double psi = 0;  // sum_g eta_g r_g
};
// Minimum-norm solution of E[g | alpha, cell] = r(alpha) - psi per cell.
PartialMoment solve_partial_moment(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                   const Eigen::VectorXd& r);

// g = gt - B m with B = E[d gt/d theta'] E[d m/d theta']^{-1}; the Jacobians
// come from the mixture identities, so no basis differentiation is involved.
MomentVector fully_robust_moment(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                 const MomentVector& gt, const std::vector<MomentVector>& m);

struct RelevanceResult {
  double C = 0;
  double residual = 0;  // weighted rms of E[g|alpha] - C (r - psi)
};
// Regresses the grid-conditional means of g on r - psi; NotProportional when
// the residual exceeds 1e-6 of scale, DegenerateFunctional when r is constant.
RelevanceResult relevance_constant(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                   const MomentVector& g, const Eigen::VectorXd& r);

struct GeneralResult {
  MomentVector g, gtilde;
  double psi = 0;
  Eigen::VectorXd A;                 // coefficients on the NF basis
  std::vector<MomentVector> basis;   // the NF candidates used
  double adjoint_theta_residual = 0;  // max_j |d/dtheta_j E[g] - r1_j|
  double adjoint_grid_residual = 0;   // max over cells of ||L'g - (r2 - psi)||_inf
};
// Orthogonal moment for the functional with Riesz representer (r1, r2):
//   solve E[gt | alpha] = r2 - psi, then pick A with E[dm/dtheta'] A =
//   r1 + E[d gt/d theta'], and return g = gt - A'm.
GeneralResult general_algorithm(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                const Eigen::VectorXd& r1, const Eigen::VectorXd& r2);

struct NormalMeansMoment {
  Eigen::VectorXd z;  // grid
  Eigen::VectorXd g;  // values on the grid (piecewise-linear function, 0 outside)
  double residual = 0;  // max_j |integral of g phi_j| from the independent check
};
// One unit-norm element orthogonal to every N(alpha_j, theta_bar) density:
// nullspace of the J x N matrix of hat-function quadrature weights.
NormalMeansMoment normal_means_moment(const Eigen::VectorXd& support, double theta_bar,
                                      const Eigen::VectorXd& z_grid);

// Average marginal effect with known density: psi_orth solves
// mean(-Y dlogf - dmu - mu dlogf - psi) = 0; psi_plug = mean(dmu).
struct AmeDensity {
  std::function<double(const Dataset&, Eigen::Index, double)> f;     // f(x | row)
  std::function<double(const Dataset&, Eigen::Index, double)> dfdx;  // d/dx f(x | row)
};
struct AmeResult {
  double psi_orth = 0;
  double psi_plug = 0;
  double se = 0;
  Eigen::VectorXd g;  // per-observation orthogonal moment at psi_orth
};
AmeResult ame_moment(const Dataset& d, const std::string& ycol, const std::string& xcol,
                     const AmeDensity& dens,
                     const std::function<double(const Dataset&, Eigen::Index, double)>& mu);

}  // namespace orthomom

#endif
