#include "orthomom/learners.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

#include "orthomom/rng.hpp"

namespace orthomom {

using json = nlohmann::json;

LearnerSpec LearnerSpec::from_json(const json& j) {
  LearnerSpec s;
  if (!j.is_object() || !j.contains("method"))
    throw data_error("BadSpec", "learner spec needs a 'method' field");
  s.method = j.at("method").get<std::string>();
  if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
  if (j.contains("cv_folds")) s.cv_folds = j.at("cv_folds").get<int>();
  if (j.contains("bandwidth")) s.bandwidth = j.at("bandwidth").get<double>();
  if (j.contains("rounds")) s.rounds = j.at("rounds").get<int>();
  if (j.contains("depth")) s.depth = j.at("depth").get<int>();
  if (j.contains("learning_rate")) s.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("k")) s.k = j.at("k").get<int>();
  return s;
}

json LearnerSpec::to_json() const {
  json j;
  j["method"] = method;
  if (method == "ridge" || method == "l1") {
    if (lambda >= 0) j["lambda"] = lambda;
    if (method == "l1" && lambda < 0) j["cv_folds"] = cv_folds;
  } else if (method == "kernel") {
    if (bandwidth >= 0) j["bandwidth"] = bandwidth;
  } else if (method == "boosted-stumps") {
    j["rounds"] = rounds;
    j["depth"] = depth;
    j["learning_rate"] = learning_rate;
  } else if (method == "k-nearest") {
    j["k"] = k;
  }
  return j;
}

// ---- model variants ----

struct FittedLearner::Model {
  int d = 0;
  virtual ~Model() = default;
  virtual double predict_one(const Eigen::RowVectorXd& x) const = 0;
  virtual bool linear() const { return false; }
  virtual Eigen::VectorXd coefs() const { return Eigen::VectorXd(); }
};

namespace {

struct LinearModel : FittedLearner::Model {
  double intercept = 0;
  Eigen::VectorXd beta;
  double predict_one(const Eigen::RowVectorXd& x) const override {
    return intercept + (beta.size() ? x.dot(beta) : 0.0);
  }
  bool linear() const override { return true; }
  Eigen::VectorXd coefs() const override {
    Eigen::VectorXd c(beta.size() + 1);
    c(0) = intercept;
    if (beta.size()) c.tail(beta.size()) = beta;
    return c;
  }
};

struct KernelModel : FittedLearner::Model {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd h;  // per-feature bandwidths; h_j <= 0 means skip feature
  double ymean = 0;
  double predict_one(const Eigen::RowVectorXd& q) const override {
    double sw = 0, swy = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double d2 = 0;
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (h(j) <= 0) continue;
        double t = (q(j) - X(i, j)) / h(j);
        d2 += t * t;
      }
      double w = std::exp(-0.5 * d2);
      sw += w;
      swy += w * y(i);
    }
    return sw > 1e-300 ? swy / sw : ymean;
  }
};

struct Tree {
  // flattened binary tree; leaf iff feat < 0
  struct Node {
    int feat = -1;
    double thr = 0;
    double value = 0;
    int left = -1, right = -1;
  };
  std::vector<Node> nodes;
  double eval(const Eigen::RowVectorXd& x) const {
    int i = 0;
    while (nodes[static_cast<size_t>(i)].feat >= 0) {
      const Node& nd = nodes[static_cast<size_t>(i)];
      i = x(nd.feat) <= nd.thr ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(i)].value;
  }
};

struct StumpsModel : FittedLearner::Model {
  double f0 = 0;
  double lr = 0.1;
  std::vector<Tree> trees;
  double predict_one(const Eigen::RowVectorXd& x) const override {
    double f = f0;
    for (const auto& t : trees) f += lr * t.eval(x);
    return f;
  }
};

struct KnnModel : FittedLearner::Model {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  int k = 10;
  double predict_one(const Eigen::RowVectorXd& q) const override {
    Eigen::Index n = X.rows();
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      dist[static_cast<size_t>(i)] = {(X.row(i) - q).squaredNorm(), i};
    int kk = std::min<int>(k, static_cast<int>(n));
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());  // ties -> lower index
    double s = 0;
    for (int i = 0; i < kk; ++i) s += y(dist[static_cast<size_t>(i)].second);
    return s / kk;
  }
};

void check_xy(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size())
    throw data_error("DimensionMismatch", "fit: X has " + std::to_string(X.rows()) +
                                              " rows, y has " + std::to_string(y.size()));
  if (y.size() < 1) throw data_error("TooFewRows", "fit: empty training set");
  if (!X.allFinite() || !y.allFinite())
    throw numerical_error("NonFinite", "fit: non-finite training values");
}

std::shared_ptr<LinearModel> mean_model(const Eigen::VectorXd& y, Eigen::Index d) {
  auto m = std::make_shared<LinearModel>();
  m->d = static_cast<int>(d);
  m->intercept = y.mean();
  m->beta = Eigen::VectorXd::Zero(d);
  return m;
}

std::shared_ptr<FittedLearner::Model> fit_least_squares(const Eigen::MatrixXd& X,
                                                        const Eigen::VectorXd& y) {
  Eigen::Index n = X.rows(), d = X.cols();
  if (d == 0) return mean_model(y, 0);
  Eigen::MatrixXd D(n, d + 1);
  D.col(0).setOnes();
  D.rightCols(d) = X;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  if (qr.rank() < d + 1)
    throw numerical_error("RankDeficient", "least-squares: singular design (rank " +
                                               std::to_string(qr.rank()) + " of " +
                                               std::to_string(d + 1) + ")");
  Eigen::VectorXd c = qr.solve(y);
  auto m = std::make_shared<LinearModel>();
  m->d = static_cast<int>(d);
  m->intercept = c(0);
  m->beta = c.tail(d);
  return m;
}

std::shared_ptr<FittedLearner::Model> fit_ridge(const Eigen::MatrixXd& X,
                                                const Eigen::VectorXd& y, double lambda) {
  if (lambda < 0) throw data_error("BadSpec", "ridge: lambda must be set and >= 0");
  Eigen::Index d = X.cols();
  if (d == 0) return mean_model(y, 0);
  Eigen::RowVectorXd xm = X.colwise().mean();
  double ym = y.mean();
  Eigen::MatrixXd Xc = X.rowwise() - xm;
  Eigen::VectorXd yc = y.array() - ym;
  double n = static_cast<double>(X.rows());
  // (Xc'Xc/n + lambda I) b = Xc'yc/n ; intercept unpenalized via centering
  Eigen::MatrixXd A = Xc.transpose() * Xc / n + lambda * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = A.ldlt().solve(Xc.transpose() * yc / n);
  auto m = std::make_shared<LinearModel>();
  m->d = static_cast<int>(d);
  m->beta = b;
  m->intercept = ym - xm.transpose().dot(b);
  return m;
}

// coordinate descent on standardized columns for
//   (1/2n)||yc - Xs b||^2 + lambda ||b||_1
Eigen::VectorXd l1_cd(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& yc, double lambda,
                      Eigen::VectorXd b0) {
  Eigen::Index n = Xs.rows(), d = Xs.cols();
  double dn = static_cast<double>(n);
  Eigen::VectorXd b = std::move(b0);
  Eigen::VectorXd r = yc - Xs * b;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    double max_change = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double old = b(j);
      // standardized columns have mean square 1, so the curvature is 1
      double rho = Xs.col(j).dot(r) / dn + old;
      double nb = (rho > lambda) ? rho - lambda : (rho < -lambda ? rho + lambda : 0.0);
      if (nb != old) {
        r += Xs.col(j) * (old - nb);
        b(j) = nb;
        max_change = std::max(max_change, std::abs(nb - old));
      }
    }
    if (max_change < 1e-8) break;
  }
  return b;
}

struct Standardized {
  Eigen::MatrixXd Xs;
  Eigen::RowVectorXd xm, scale;  // scale_j = 0 marks a constant column (excluded)
  Eigen::VectorXd yc;
  double ym = 0;
};

Standardized standardize(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Standardized s;
  double n = static_cast<double>(X.rows());
  s.xm = X.colwise().mean();
  s.scale.resize(X.cols());
  s.Xs.resize(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Eigen::VectorXd c = X.col(j).array() - s.xm(j);
    double sd = std::sqrt(c.squaredNorm() / n);
    s.scale(j) = sd;
    s.Xs.col(j) = sd > 0 ? Eigen::VectorXd(c / sd) : Eigen::VectorXd::Zero(X.rows());
  }
  s.ym = y.mean();
  s.yc = y.array() - s.ym;
  return s;
}

std::shared_ptr<FittedLearner::Model> l1_model_from(const Standardized& s, const Eigen::VectorXd& b) {
  auto m = std::make_shared<LinearModel>();
  m->d = static_cast<int>(s.Xs.cols());
  m->beta.resize(s.Xs.cols());
  for (Eigen::Index j = 0; j < s.Xs.cols(); ++j)
    m->beta(j) = s.scale(j) > 0 ? b(j) / s.scale(j) : 0.0;
  m->intercept = s.ym - s.xm.transpose().dot(m->beta);
  return m;
}

std::shared_ptr<FittedLearner::Model> fit_l1(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             const LearnerSpec& spec) {
  Eigen::Index n = X.rows(), d = X.cols();
  if (d == 0) return mean_model(y, 0);
  Standardized s = standardize(X, y);
  if (spec.lambda >= 0) {
    Eigen::VectorXd b = l1_cd(s.Xs, s.yc, spec.lambda, Eigen::VectorXd::Zero(d));
    return l1_model_from(s, b);
  }
  // cross-validated lambda on a common log-spaced grid
  int folds = spec.cv_folds;
  if (folds < 2) throw data_error("BadSpec", "l1: cv_folds must be >= 2");
  if (n < folds) throw data_error("TooFewRows", "l1: fewer rows than cv folds");
  double lmax = (s.Xs.transpose() * s.yc).cwiseAbs().maxCoeff() / static_cast<double>(n);
  if (lmax <= 0) lmax = 1.0;
  const int ngrid = 30;
  std::vector<double> grid(ngrid);
  for (int i = 0; i < ngrid; ++i)
    grid[static_cast<size_t>(i)] = lmax * std::pow(1e-4, static_cast<double>(i) / (ngrid - 1));
  std::vector<double> cv_mse(ngrid, 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, va;
    for (Eigen::Index i = 0; i < n; ++i) ((i % folds) == f ? va : tr).push_back(i);
    Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(tr.size()), d), Xva(static_cast<Eigen::Index>(va.size()), d);
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size())), yva(static_cast<Eigen::Index>(va.size()));
    for (size_t i = 0; i < tr.size(); ++i) { Xtr.row(static_cast<Eigen::Index>(i)) = X.row(tr[i]); ytr(static_cast<Eigen::Index>(i)) = y(tr[i]); }
    for (size_t i = 0; i < va.size(); ++i) { Xva.row(static_cast<Eigen::Index>(i)) = X.row(va[i]); yva(static_cast<Eigen::Index>(i)) = y(va[i]); }
    Standardized st = standardize(Xtr, ytr);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    for (int gi = 0; gi < ngrid; ++gi) {  // warm start down the path
      b = l1_cd(st.Xs, st.yc, grid[static_cast<size_t>(gi)], b);
      auto m = l1_model_from(st, b);
      Eigen::VectorXd pred(Xva.rows());
      for (Eigen::Index i = 0; i < Xva.rows(); ++i) pred(i) = m->predict_one(Xva.row(i));
      cv_mse[static_cast<size_t>(gi)] += (pred - yva).squaredNorm();
    }
  }
  int best = 0;  // ties resolve to the larger (earlier, sparser) lambda
  for (int gi = 1; gi < ngrid; ++gi)
    if (cv_mse[static_cast<size_t>(gi)] < cv_mse[static_cast<size_t>(best)]) best = gi;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (int gi = 0; gi <= best; ++gi) b = l1_cd(s.Xs, s.yc, grid[static_cast<size_t>(gi)], b);
  return l1_model_from(s, b);
}

std::shared_ptr<FittedLearner::Model> fit_kernel(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                                 const LearnerSpec& spec) {
  auto m = std::make_shared<KernelModel>();
  m->d = static_cast<int>(X.cols());
  m->X = X;
  m->y = y;
  m->ymean = y.mean();
  m->h.resize(X.cols());
  double n = static_cast<double>(X.rows());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (spec.bandwidth > 0) {
      m->h(j) = spec.bandwidth;
    } else {
      Eigen::VectorXd c = X.col(j).array() - X.col(j).mean();
      double sd = std::sqrt(c.squaredNorm() / std::max(1.0, n - 1.0));
      m->h(j) = 1.06 * sd * std::pow(n, -0.2);  // Silverman rule
    }
  }
  return m;
}

// exact greedy split search over sorted feature values
struct SplitResult {
  bool found = false;
  int feat = -1;
  double thr = 0;
  double gain = 0;
};

SplitResult best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& r,
                       const std::vector<Eigen::Index>& rows,
                       std::vector<Eigen::Index>& scratch) {
  SplitResult best;
  Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  if (m < 2) return best;
  double stot = 0;
  for (Eigen::Index i : rows) stot += r(i);
  for (int j = 0; j < X.cols(); ++j) {
    scratch = rows;
    std::sort(scratch.begin(), scratch.end(), [&](Eigen::Index a, Eigen::Index b) {
      double va = X(a, j), vb = X(b, j);
      return va < vb || (va == vb && a < b);
    });
    double sl = 0;
    for (Eigen::Index k = 0; k + 1 < m; ++k) {
      sl += r(scratch[static_cast<size_t>(k)]);
      double v = X(scratch[static_cast<size_t>(k)], j);
      double vn = X(scratch[static_cast<size_t>(k + 1)], j);
      if (v == vn) continue;
      double nl = static_cast<double>(k + 1), nr = static_cast<double>(m - k - 1);
      double sr = stot - sl;
      double gain = sl * sl / nl + sr * sr / nr - stot * stot / static_cast<double>(m);
      if (gain > best.gain + 1e-12) {
        best.found = true;
        best.feat = j;
        best.thr = 0.5 * (v + vn);
        best.gain = gain;
      }
    }
  }
  return best;
}

int grow_tree(Tree& t, const Eigen::MatrixXd& X, const Eigen::VectorXd& r,
              const std::vector<Eigen::Index>& rows, int depth,
              std::vector<Eigen::Index>& scratch) {
  int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  double mean = 0;
  for (Eigen::Index i : rows) mean += r(i);
  mean /= static_cast<double>(rows.size());
  t.nodes[static_cast<size_t>(id)].value = mean;
  if (depth <= 0) return id;
  SplitResult sp = best_split(X, r, rows, scratch);
  if (!sp.found) return id;
  std::vector<Eigen::Index> lrows, rrows;
  for (Eigen::Index i : rows) (X(i, sp.feat) <= sp.thr ? lrows : rrows).push_back(i);
  int l = grow_tree(t, X, r, lrows, depth - 1, scratch);
  int rr = grow_tree(t, X, r, rrows, depth - 1, scratch);
  t.nodes[static_cast<size_t>(id)].feat = sp.feat;
  t.nodes[static_cast<size_t>(id)].thr = sp.thr;
  t.nodes[static_cast<size_t>(id)].left = l;
  t.nodes[static_cast<size_t>(id)].right = rr;
  return id;
}

std::shared_ptr<FittedLearner::Model> fit_stumps(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                                 const LearnerSpec& spec) {
  if (spec.rounds < 1 || spec.depth < 1 || spec.learning_rate <= 0)
    throw data_error("BadSpec", "boosted-stumps: need rounds >= 1, depth >= 1, learning_rate > 0");
  auto m = std::make_shared<StumpsModel>();
  m->d = static_cast<int>(X.cols());
  m->f0 = y.mean();
  m->lr = spec.learning_rate;
  if (X.cols() == 0) return m;
  Eigen::Index n = X.rows();
  Eigen::VectorXd r = y.array() - m->f0;
  std::vector<Eigen::Index> rows(static_cast<size_t>(n)), scratch;
  std::iota(rows.begin(), rows.end(), 0);
  for (int t = 0; t < spec.rounds; ++t) {
    Tree tree;
    grow_tree(tree, X, r, rows, spec.depth, scratch);
    if (tree.nodes.size() == 1 && std::abs(tree.nodes[0].value) < 1e-14) break;  // nothing left
    for (Eigen::Index i = 0; i < n; ++i) r(i) -= m->lr * tree.eval(X.row(i));
    m->trees.push_back(std::move(tree));
  }
  return m;
}

}  // namespace

FittedLearner fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LearnerSpec& spec) {
  check_xy(X, y);
  std::shared_ptr<const FittedLearner::Model> m;
  if (spec.method == "least-squares")
    m = fit_least_squares(X, y);
  else if (spec.method == "ridge")
    m = fit_ridge(X, y, spec.lambda);
  else if (spec.method == "l1")
    m = fit_l1(X, y, spec);
  else if (spec.method == "kernel")
    m = fit_kernel(X, y, spec);
  else if (spec.method == "boosted-stumps")
    m = fit_stumps(X, y, spec);
  else if (spec.method == "k-nearest") {
    if (spec.k < 1) throw data_error("BadSpec", "k-nearest: k must be >= 1");
    auto km = std::make_shared<KnnModel>();
    km->d = static_cast<int>(X.cols());
    km->X = X;
    km->y = y;
    km->k = spec.k;
    m = km;
  } else {
    throw data_error("BadSpec", "unknown learner method '" + spec.method + "'");
  }
  return FittedLearner(m);
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& X) const {
  if (!impl_) throw data_error("BadSpec", "predict on an unfitted learner");
  if (X.cols() != impl_->d)
    throw data_error("DimensionMismatch", "predict: trained on " + std::to_string(impl_->d) +
                                              " features, got " + std::to_string(X.cols()));
  if (!X.allFinite()) throw numerical_error("NonFinite", "predict: non-finite inputs");
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = impl_->predict_one(X.row(i));
  return out;
}

double FittedLearner::predict_row(const Eigen::RowVectorXd& x) const {
  if (!impl_) throw data_error("BadSpec", "predict on an unfitted learner");
  return impl_->predict_one(x);
}

int FittedLearner::dim() const { return impl_ ? impl_->d : 0; }

bool FittedLearner::has_coefficients() const { return impl_ && impl_->linear(); }

Eigen::VectorXd FittedLearner::coefficients() const {
  if (!has_coefficients()) throw data_error("BadSpec", "learner has no linear coefficients");
  return impl_->coefs();
}

std::vector<int> make_folds(Eigen::Index n, int K, std::uint64_t seed) {
  if (K < 2) throw data_error("BadSpec", "cross_fit: K must be >= 2");
  if (n < K) throw data_error("TooFewRows", "cross_fit: fewer rows than folds");
  std::vector<Eigen::Index> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    Eigen::Index j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  std::vector<int> fold(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    fold[static_cast<size_t>(perm[static_cast<size_t>(i)])] = static_cast<int>(i % K);
  return fold;
}

OofPredictions cross_fit_with_folds(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const LearnerSpec& spec, const std::vector<int>& folds, int K) {
  check_xy(X, y);
  Eigen::Index n = X.rows();
  if (static_cast<Eigen::Index>(folds.size()) != n)
    throw data_error("DimensionMismatch", "cross_fit: fold plan length mismatch");
  OofPredictions out;
  out.values.resize(n);
  out.fold_id = folds;
  out.K = K;
  for (int f = 0; f < K; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < n; ++i) (folds[static_cast<size_t>(i)] == f ? te : tr).push_back(i);
    if (te.empty()) continue;
    if (tr.empty()) throw data_error("TooFewRows", "cross_fit: empty training complement");
    Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(tr.size()), X.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
    for (size_t i = 0; i < tr.size(); ++i) {
      Xtr.row(static_cast<Eigen::Index>(i)) = X.row(tr[i]);
      ytr(static_cast<Eigen::Index>(i)) = y(tr[i]);
    }
    FittedLearner fl = fit(Xtr, ytr, spec);
    for (Eigen::Index i : te) out.values(i) = fl.predict_row(X.row(i));
  }
  return out;
}

OofPredictions cross_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const LearnerSpec& spec, int K, std::uint64_t seed) {
  return cross_fit_with_folds(X, y, spec, make_folds(X.rows(), K, seed), K);
}

Eigen::VectorXd project_coefs(const Eigen::MatrixXd& D, const Eigen::VectorXd& y) {
  if (D.rows() != y.size()) throw data_error("DimensionMismatch", "project: rows mismatch");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  // the default pivot threshold (~eps * cols) can miss an exactly duplicated
  // column at large n, where pivot dirt reaches ~1e-13 of the leading pivot
  cod.setThreshold(1e-10);
  cod.compute(D);
  return cod.solve(y);
}

Eigen::VectorXd project_onto(const Eigen::MatrixXd& D, const Eigen::VectorXd& y) {
  return D * project_coefs(D, y);
}

Eigen::MatrixXd project_coefs_oof(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                  const std::vector<int>& folds, int K) {
  Eigen::Index n = D.rows();
  if (static_cast<Eigen::Index>(folds.size()) != n || y.size() != n)
    throw data_error("DimensionMismatch", "project_oof: size mismatch");
  Eigen::MatrixXd C(D.cols(), K);
  for (int f = 0; f < K; ++f) {
    std::vector<Eigen::Index> tr;
    for (Eigen::Index i = 0; i < n; ++i)
      if (folds[static_cast<size_t>(i)] != f) tr.push_back(i);
    if (tr.empty()) throw data_error("TooFewRows", "project_oof: empty training complement");
    Eigen::MatrixXd Dtr(static_cast<Eigen::Index>(tr.size()), D.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
    for (size_t i = 0; i < tr.size(); ++i) {
      Dtr.row(static_cast<Eigen::Index>(i)) = D.row(tr[i]);
      ytr(static_cast<Eigen::Index>(i)) = y(tr[i]);
    }
    C.col(f) = project_coefs(Dtr, ytr);
  }
  return C;
}

Eigen::VectorXd project_onto_oof(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                 const std::vector<int>& folds, int K) {
  Eigen::MatrixXd C = project_coefs_oof(D, y, folds, K);
  Eigen::VectorXd out(D.rows());
  for (Eigen::Index i = 0; i < D.rows(); ++i) out(i) = D.row(i).dot(C.col(folds[static_cast<size_t>(i)]));
  return out;
}

}  // namespace orthomom
