#ifndef ORTHOMOM_LEARNERS_HPP
#define ORTHOMOM_LEARNERS_HPP

#include <Eigen/Dense>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "orthomom/common.hpp"

namespace orthomom {

// First-step regression method. lambda applies to ridge and l1 (fixed penalty);
// for l1 an unset lambda means cross-validated selection on a log-spaced grid
// [1e-4, 1] * lambda_max with cv_folds folds.
struct LearnerSpec {
  std::string method = "least-squares";  // least-squares | ridge | l1 | kernel |
                                         // boosted-stumps | k-nearest
  double lambda = -1.0;                  // < 0 means unset
  int cv_folds = 4;
  double bandwidth = -1.0;               // < 0 means Silverman rule
  int rounds = 200;
  int depth = 2;
  double learning_rate = 0.1;
  int k = 10;

  static LearnerSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class FittedLearner {
 public:
  struct Model;
  FittedLearner() = default;
  explicit FittedLearner(std::shared_ptr<const Model> impl) : impl_(std::move(impl)) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  double predict_row(const Eigen::RowVectorXd& x) const;
  int dim() const;

  // linear methods only: (intercept, slopes...)
  bool has_coefficients() const;
  Eigen::VectorXd coefficients() const;

 private:
  std::shared_ptr<const Model> impl_;
};

// Fit y on X. All methods include an intercept (d = 0 designs give the
// training-mean predictor). Deterministic given (X, y, spec).
FittedLearner fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LearnerSpec& spec);

struct OofPredictions {
  Eigen::VectorXd values;       // out-of-fold prediction per row
  std::vector<int> fold_id;     // fold of each row
  int K = 0;
};

// Seeded uniform partition into K folds (sizes differ by at most one),
// fit on each complement, predict on the held-out fold. K = n gives
// leave-one-out. Same (n, K, seed) always produces the same partition.
std::vector<int> make_folds(Eigen::Index n, int K, std::uint64_t seed);
OofPredictions cross_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const LearnerSpec& spec, int K, std::uint64_t seed);
OofPredictions cross_fit_with_folds(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const LearnerSpec& spec, const std::vector<int>& folds, int K);

// Minimum-norm linear projection: fitted values of the L2 projection of y on
// col(D). Well defined (and exactly reproducing nested column spaces) even
// when D is rank deficient; used by the estimation modules where only fitted
// values matter.
Eigen::VectorXd project_onto(const Eigen::MatrixXd& D, const Eigen::VectorXd& y);
// coefficient version (minimum-norm)
Eigen::VectorXd project_coefs(const Eigen::MatrixXd& D, const Eigen::VectorXd& y);

// Out-of-fold minimum-norm linear projection with a fixed fold plan.
Eigen::VectorXd project_onto_oof(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                 const std::vector<int>& folds, int K);
// per-fold coefficients (column f = coefficients fitted on complement of fold f)
Eigen::MatrixXd project_coefs_oof(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                  const std::vector<int>& folds, int K);

}  // namespace orthomom

#endif
