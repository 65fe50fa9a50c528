#ifndef ORTHOMOM_DIAGNOSTICS_HPP
#define ORTHOMOM_DIAGNOSTICS_HPP

#include <Eigen/Dense>
#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "orthomom/dataset.hpp"
#include "orthomom/funcdiff.hpp"

namespace orthomom {

// Central difference (F(h) - F(-h)) / (2h) refined once by Richardson
// extrapolation with step h/2: value = (4 D_{h/2} - D_h) / 3.
struct DerivativeEstimate {
  double value = 0;   // Richardson-extrapolated
  double coarse = 0;  // central difference at h
  double fine = 0;    // central difference at h/2
  bool consistent = true;  // the two step sizes agree (O(h^2) ratio test)
};
DerivativeEstimate gateaux_derivative(const std::function<double(double)>& path_mean,
                                      double h = 1e-3);

// Alias for the theta-direction derivative d/dt E[g(Z, theta0 + t*delta, eta0)].
double power_slope(const std::function<double(double)>& theta_path, double h = 1e-3);

// ---- perturbation paths (each returns t -> mean of the moment at t) ----

// Which nuisance of the partly linear moment an additive bump targets.
enum class PlmNuisance { R1, R2, Zeta };

// LR moment (y1 - r1 - theta (y2 - r2)) * zeta with the chosen nuisance bumped
// by t * b. Bumping r1 is the eta-bump: r1 = theta r2 + eta.
std::function<double(double)> plm_lr_path(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                          const Eigen::VectorXd& r1, const Eigen::VectorXd& r2,
                                          const Eigen::VectorXd& zeta, double theta,
                                          PlmNuisance target, const Eigen::VectorXd& b);

// Plug-in moment (y1 - theta y2 - eta) * z2 along the same eta-bump.
std::function<double(double)> plm_plugin_path(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                              const Eigen::VectorXd& z2, const Eigen::VectorXd& eta,
                                              double theta, const Eigen::VectorXd& b);

// theta-path of the LR moment: t -> mean((y1t - (theta0 + t*delta) y2t) zeta).
std::function<double(double)> plm_theta_path(const Eigen::VectorXd& y1t,
                                             const Eigen::VectorXd& y2t,
                                             const Eigen::VectorXd& zeta, double theta0,
                                             double delta);

// Exact-expectation mixture paths. The density path tilts the mixing weights
// multiplicatively, eta_t = eta .* (1 + t b) with b recentered so weights sum
// to one; PathInfeasible if a weight turns negative for |t| <= h.
std::function<double(double)> mixture_density_path(const DiscreteMixtureModel& mod,
                                                   const MomentVector& g,
                                                   const Eigen::VectorXd& b, double h);
std::function<double(double)> mixture_theta_path(const DiscreteMixtureModel& mod,
                                                 const MomentVector& g,
                                                 const Eigen::VectorXd& delta);

// Per-observation values of a mixture moment on simulated data (cell, outcome).
Eigen::VectorXd moment_values(const MomentVector& g, const Dataset& d);

// ---- Le Cam drift ----

struct DriftResult {
  double empirical_drift = 0;   // mean over reps of sqrt(n) * mean(g)
  double empirical_sd = 0;      // sd across reps of sqrt(n) * mean(g)
  double mc_se = 0;             // empirical_sd / sqrt(R)
  double predicted_drift = 0;   // -power_slope (theta drift) or exact tilt effect
  double var_g = 0;             // mean within-rep variance of g
  int R = 0;
  Eigen::Index n = 0;
};

// Simulates gen_plm at theta0 + delta/sqrt(n), evaluates the LR moment at
// theta0 with each replication's oracle nuisances. The prediction is
// -power_slope on an independent 10^6-draw reference sample.
DriftResult plm_drift_check(const PlmDgp& base, double delta, Eigen::Index n, int R,
                            std::uint64_t seed);

// Simulates the mixture under eta_n = eta .* (1 + (delta/sqrt(n)) b) and
// evaluates a fixed moment vector; the predicted drift is computed exactly
// from the tilt (zero whenever L'g = 0).
DriftResult mixture_drift_check(const DiscreteMixtureModel& mod, const MomentVector& g,
                                const Eigen::VectorXd& b, double delta, Eigen::Index n, int R,
                                std::uint64_t seed);

// ---- Neyman orthogonalization ----

// Residual of the least-squares projection of m on the score columns:
// g = m - scores * beta, exactly orthogonal to every column in sample.
Eigen::VectorXd project_out_scores(const Eigen::VectorXd& m, const Eigen::MatrixXd& scores);

// ---- orthogonality reports (the `verify` subcommand) ----

struct OrthogonalityReport {
  std::string target;               // plm | hte | funcdiff
  std::vector<std::string> labels;  // one per direction
  std::vector<double> derivatives;  // Richardson estimates
  std::vector<double> scaled;       // |derivative| / direction scale
  std::vector<double> contrast;     // same-path derivative of the non-LR moment
  double tolerance = 0;             // on the scaled derivatives
  double max_abs = 0;               // max of scaled
  bool pass = false;                // max_abs <= tolerance
  nlohmann::json to_json() const;
};

OrthogonalityReport verify_plm(Eigen::Index n, int paths, std::uint64_t seed);
OrthogonalityReport verify_hte(Eigen::Index n, int paths, std::uint64_t seed);
OrthogonalityReport verify_funcdiff(int paths, std::uint64_t seed);

}  // namespace orthomom

#endif
