#include "orthomom/funcdiff.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "orthomom/rng.hpp"

namespace orthomom {

using json = nlohmann::json;

double MomentVector::norm() const {
  double s = 0;
  for (const auto& v : cell_values) s += v.squaredNorm();
  return std::sqrt(s);
}

int DiscreteMixtureModel::M(int c) const {
  const Cell& cell = cells[static_cast<size_t>(c)];
  if (family == "logit-panel-T2") return 4;
  return static_cast<int>(cell.table.rows());
}

static double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double DiscreteMixtureModel::pmf(int c, int m, int g, const Eigen::VectorXd& th) const {
  const Cell& cell = cells[static_cast<size_t>(c)];
  if (family == "logit-panel-T2") {
    // outcomes ordered (y1,y2) = (0,0), (1,0), (0,1), (1,1)
    int y1 = m & 1, y2 = (m >> 1) & 1;
    double l1 = logistic(alpha(g) + th(0) * cell.x[0]);
    double l2 = logistic(alpha(g) + th(0) * cell.x[1]);
    return (y1 ? l1 : 1 - l1) * (y2 ? l2 : 1 - l2);
  }
  if (family == "custom-table") return cell.table(m, g);
  throw data_error("BadSpec", "unknown mixture family '" + family + "'");
}

double DiscreteMixtureModel::dpmf(int c, int m, int g, const Eigen::VectorXd& th, int j) const {
  if (family == "custom-table") return 0.0;
  if (family == "logit-panel-T2") {
    if (j != 0) throw data_error("IndexOutOfRange", "logit-panel-T2 has one structural parameter");
    const Cell& cell = cells[static_cast<size_t>(c)];
    int y1 = m & 1, y2 = (m >> 1) & 1;
    double l1 = logistic(alpha(g) + th(0) * cell.x[0]);
    double l2 = logistic(alpha(g) + th(0) * cell.x[1]);
    double b1 = y1 ? l1 : 1 - l1, b2 = y2 ? l2 : 1 - l2;
    double d1 = (y1 ? 1.0 : -1.0) * cell.x[0] * l1 * (1 - l1);
    double d2 = (y2 ? 1.0 : -1.0) * cell.x[1] * l2 * (1 - l2);
    return d1 * b2 + b1 * d2;
  }
  throw data_error("BadSpec", "unknown mixture family '" + family + "'");
}

Eigen::MatrixXd DiscreteMixtureModel::conditional_matrix(const Eigen::VectorXd& th, int c) const {
  if (c < 0 || c >= n_cells()) throw data_error("IndexOutOfRange", "cell index out of range");
  int mm = M(c), gg = G();
  Eigen::MatrixXd L(mm, gg);
  for (int g = 0; g < gg; ++g) {
    double s = 0;
    for (int m = 0; m < mm; ++m) {
      double v = pmf(c, m, g, th);
      if (v < -1e-12)
        throw numerical_error("NonStochastic", "negative outcome probability in cell " + std::to_string(c));
      L(m, g) = v;
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-8)
      throw numerical_error("NonStochastic", "column " + std::to_string(g) + " of cell " +
                                                 std::to_string(c) + " sums to " + std::to_string(s));
  }
  return L;
}

Eigen::VectorXd DiscreteMixtureModel::mixture_pmf(const Eigen::VectorXd& th, int c,
                                                  const Eigen::VectorXd& eta_w) const {
  return conditional_matrix(th, c) * eta_w;
}

Eigen::VectorXd DiscreteMixtureModel::mixture_pmf(const Eigen::VectorXd& th, int c) const {
  return mixture_pmf(th, c, eta);
}

void DiscreteMixtureModel::validate() const {
  if (family != "logit-panel-T2" && family != "custom-table")
    throw data_error("BadSpec", "unknown mixture family '" + family + "'");
  if (alpha.size() < 1) throw data_error("BadSpec", "mixture: empty alpha grid");
  if (eta.size() != alpha.size())
    throw data_error("BadSpec", "mixture: weights must match the alpha grid");
  if (std::abs(eta.sum() - 1.0) > 1e-10 || eta.minCoeff() < 0)
    throw data_error("BadSpec", "mixture: eta must be a probability vector");
  if (cells.empty()) throw data_error("BadSpec", "mixture: no cells");
  double ws = 0;
  for (const auto& c : cells) {
    if (c.weight < 0) throw data_error("BadSpec", "mixture: negative cell weight");
    ws += c.weight;
    if (family == "logit-panel-T2" && c.x.size() != 2)
      throw data_error("BadSpec", "logit-panel-T2 cells need x = (x1, x2)");
    if (family == "custom-table" &&
        (c.table.rows() < 2 || c.table.cols() != alpha.size()))
      throw data_error("BadSpec", "custom-table cells need an M x G probability table");
  }
  if (std::abs(ws - 1.0) > 1e-10)
    throw data_error("BadSpec", "mixture: cell weights must sum to 1");
  if (family == "logit-panel-T2" && theta.size() != 1)
    throw data_error("BadSpec", "logit-panel-T2 needs a single theta");
}

Dataset DiscreteMixtureModel::simulate(Eigen::Index n, std::uint64_t seed,
                                       const Eigen::VectorXd& eta_w) const {
  if (n < 1) throw data_error("BadSpec", "simulate: need n >= 1");
  if (eta_w.size() != alpha.size() || eta_w.minCoeff() < -1e-12)
    throw data_error("PathInfeasible", "simulate: tilted weights are not a distribution");
  std::vector<double> cumc(cells.size());
  double acc = 0;
  for (size_t c = 0; c < cells.size(); ++c) cumc[c] = (acc += cells[c].weight);
  std::vector<double> cumg(static_cast<size_t>(eta_w.size()));
  acc = 0;
  for (Eigen::Index g = 0; g < eta_w.size(); ++g)
    cumg[static_cast<size_t>(g)] = (acc += std::max(0.0, eta_w(g)));
  if (std::abs(acc - 1.0) > 1e-8)
    throw data_error("PathInfeasible", "simulate: tilted weights sum to " + std::to_string(acc));

  Rng rng(seed);
  bool logit = family == "logit-panel-T2";
  Eigen::VectorXd cellv(n), outc(n), x1(n), x2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int c = rng.categorical(cumc);
    int g = rng.categorical(cumg);
    int mm = M(c);
    std::vector<double> cump(static_cast<size_t>(mm));
    double a = 0;
    for (int m = 0; m < mm; ++m) cump[static_cast<size_t>(m)] = (a += pmf(c, m, g, theta));
    int m = rng.categorical(cump);
    cellv(i) = c;
    outc(i) = m;
    if (logit) {
      x1(i) = cells[static_cast<size_t>(c)].x[0];
      x2(i) = cells[static_cast<size_t>(c)].x[1];
    }
  }
  if (logit) return Dataset({"cell", "outcome", "x1", "x2"}, {cellv, outc, x1, x2});
  return Dataset({"cell", "outcome"}, {cellv, outc});
}

Dataset DiscreteMixtureModel::simulate(Eigen::Index n, std::uint64_t seed) const {
  return simulate(n, seed, eta);
}

DiscreteMixtureModel DiscreteMixtureModel::logit_panel(
    double theta0, const Eigen::VectorXd& alpha_grid, const Eigen::VectorXd& weights,
    const std::vector<std::array<double, 2>>& cells) {
  DiscreteMixtureModel m;
  m.family = "logit-panel-T2";
  m.alpha = alpha_grid;
  m.eta = weights;
  m.theta = Eigen::VectorXd::Constant(1, theta0);
  double w = 1.0 / static_cast<double>(cells.size());
  for (const auto& c : cells) {
    Cell cc;
    cc.x = {c[0], c[1]};
    cc.weight = w;
    m.cells.push_back(cc);
  }
  m.validate();
  return m;
}

static Eigen::VectorXd vec_from_json(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

DiscreteMixtureModel DiscreteMixtureModel::from_json(const json& j) {
  DiscreteMixtureModel m;
  if (!j.is_object() || !j.contains("family"))
    throw data_error("BadSpec", "mixture model json needs a 'family'");
  m.family = j.at("family").get<std::string>();
  if (j.contains("alpha_grid")) m.alpha = vec_from_json(j.at("alpha_grid"));
  if (j.contains("weights")) m.eta = vec_from_json(j.at("weights"));
  if (j.contains("theta")) m.theta = vec_from_json(j.at("theta"));
  if (j.contains("cells")) {
    for (const auto& cj : j.at("cells")) {
      Cell c;
      if (cj.contains("x")) c.x = cj.at("x").get<std::vector<double>>();
      if (cj.contains("weight")) c.weight = cj.at("weight").get<double>();
      if (cj.contains("probs")) {
        const auto& rows = cj.at("probs");
        Eigen::Index M = static_cast<Eigen::Index>(rows.size());
        if (M < 1) throw data_error("BadSpec", "custom-table: empty probs");
        Eigen::Index G = static_cast<Eigen::Index>(rows[0].size());
        c.table.resize(M, G);
        for (Eigen::Index r = 0; r < M; ++r) {
          if (static_cast<Eigen::Index>(rows[r].size()) != G)
            throw data_error("BadSpec", "custom-table: ragged probs");
          for (Eigen::Index g = 0; g < G; ++g) c.table(r, g) = rows[r][g].get<double>();
        }
      }
      m.cells.push_back(std::move(c));
    }
  } else if (m.family == "logit-panel-T2") {
    Cell c;
    c.x = {0.0, 1.0};
    c.weight = 1.0;
    m.cells.push_back(c);
  }
  if (m.cells.size() == 1) m.cells[0].weight = 1.0;
  m.validate();
  return m;
}

DiscreteMixtureModel DiscreteMixtureModel::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error("ParseError", "model file " + path + ": " + e.what());
  }
  return from_json(j);
}

json DiscreteMixtureModel::to_json() const {
  json j;
  j["family"] = family;
  j["alpha_grid"] = std::vector<double>(alpha.data(), alpha.data() + alpha.size());
  j["weights"] = std::vector<double>(eta.data(), eta.data() + eta.size());
  if (theta.size()) j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  json cc = json::array();
  for (const auto& c : cells) {
    json cj;
    if (!c.x.empty()) cj["x"] = c.x;
    cj["weight"] = c.weight;
    if (c.table.size()) {
      json rows = json::array();
      for (Eigen::Index r = 0; r < c.table.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index g = 0; g < c.table.cols(); ++g) row.push_back(c.table(r, g));
        rows.push_back(row);
      }
      cj["probs"] = rows;
    }
    cc.push_back(cj);
  }
  j["cells"] = cc;
  return j;
}

double expectation(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                   const MomentVector& g) {
  if (static_cast<int>(g.cell_values.size()) != mod.n_cells())
    throw data_error("DimensionMismatch", "expectation: moment/cell count mismatch");
  double s = 0;
  for (int c = 0; c < mod.n_cells(); ++c) {
    Eigen::VectorXd f = mod.mixture_pmf(th, c);
    s += mod.cells[static_cast<size_t>(c)].weight * g.cell_values[static_cast<size_t>(c)].dot(f);
  }
  return s;
}

Eigen::VectorXd dexpectation_dtheta(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                    const MomentVector& g) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mod.p());
  for (int j = 0; j < mod.p(); ++j) {
    double s = 0;
    for (int c = 0; c < mod.n_cells(); ++c) {
      const Eigen::VectorXd& gv = g.cell_values[static_cast<size_t>(c)];
      for (int m = 0; m < mod.M(c); ++m) {
        double df = 0;
        for (int gg = 0; gg < mod.G(); ++gg) df += mod.eta(gg) * mod.dpmf(c, m, gg, th, j);
        s += mod.cells[static_cast<size_t>(c)].weight * gv(m) * df;
      }
    }
    out(j) = s;
  }
  return out;
}

std::vector<Eigen::VectorXd> nf_moments_cell(const DiscreteMixtureModel& mod,
                                             const Eigen::VectorXd& th, int c) {
  Eigen::MatrixXd L = mod.conditional_matrix(th, c);
  // nullspace of L': right singular vectors of L' past its numerical rank
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L.transpose(), Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  double smax = sv.size() ? sv(0) : 0.0;
  double tol = 1e-10 * smax;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rank;
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index i = rank; i < L.rows(); ++i) basis.push_back(svd.matrixV().col(i));
  return basis;
}

std::vector<MomentVector> nf_moments(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th) {
  std::vector<MomentVector> out;
  for (int c = 0; c < mod.n_cells(); ++c) {
    for (const auto& b : nf_moments_cell(mod, th, c)) {
      MomentVector m;
      for (int cc = 0; cc < mod.n_cells(); ++cc)
        m.cell_values.push_back(cc == c ? b : Eigen::VectorXd::Zero(mod.M(cc)));
      out.push_back(std::move(m));
    }
  }
  return out;
}

PartialMoment solve_partial_moment(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                   const Eigen::VectorXd& r) {
  if (r.size() != mod.alpha.size())
    throw data_error("DimensionMismatch", "solve_partial_moment: r must live on the alpha grid");
  PartialMoment out;
  out.psi = mod.eta.dot(r);
  Eigen::VectorXd rhs = r.array() - out.psi;
  for (int c = 0; c < mod.n_cells(); ++c) {
    Eigen::MatrixXd Lt = mod.conditional_matrix(th, c).transpose();  // G x M
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Lt);
    Eigen::VectorXd g = cod.solve(rhs);
    double resid = (Lt * g - rhs).norm();
    if (resid > 1e-6 * rhs.norm())
      throw numerical_error("NotSolvable", "conditional-mean restriction unsolvable in cell " +
                                               std::to_string(c) + " (residual " +
                                               std::to_string(resid) + ")");
    out.g.cell_values.push_back(g);
  }
  return out;
}

MomentVector fully_robust_moment(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                 const MomentVector& gt, const std::vector<MomentVector>& m) {
  int p = mod.p();
  if (p == 0) return gt;
  if (static_cast<int>(m.size()) != p)
    throw data_error("BadSpec", "fully_robust_moment: need exactly p = " + std::to_string(p) +
                                    " NF moments");
  // E[d m_k / d theta_j] = - sum_z m_k dmixture/dtheta_j (mixture identity)
  Eigen::MatrixXd Jm(p, p);
  for (int k = 0; k < p; ++k) Jm.col(k) = -dexpectation_dtheta(mod, th, m[static_cast<size_t>(k)]);
  Eigen::VectorXd Jg = -dexpectation_dtheta(mod, th, gt);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jm, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-10 * std::max(1e-300, sv(0)))
    throw numerical_error("SingularJacobian", "fully_robust_moment: NF moment Jacobian is singular");
  Eigen::VectorXd B = svd.solve(Jg);  // Jm B = Jg  (rows j: sum_k B_k Jm(j,k) = Jg(j))
  MomentVector out = gt;
  for (int k = 0; k < p; ++k)
    for (size_t c = 0; c < out.cell_values.size(); ++c)
      out.cell_values[c] -= B(k) * m[static_cast<size_t>(k)].cell_values[c];
  return out;
}

RelevanceResult relevance_constant(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                   const MomentVector& g, const Eigen::VectorXd& r) {
  if (r.size() != mod.alpha.size())
    throw data_error("DimensionMismatch", "relevance_constant: r must live on the alpha grid");
  double psi = mod.eta.dot(r);
  double stt = 0, svt = 0, svv = 0;
  std::vector<double> vals, tgts, wgts;
  for (int c = 0; c < mod.n_cells(); ++c) {
    Eigen::MatrixXd L = mod.conditional_matrix(th, c);
    Eigen::VectorXd cv = L.transpose() * g.cell_values[static_cast<size_t>(c)];  // E[g|alpha_g]
    for (int gg = 0; gg < mod.G(); ++gg) {
      double w = mod.cells[static_cast<size_t>(c)].weight * mod.eta(gg);
      double t = r(gg) - psi;
      vals.push_back(cv(gg));
      tgts.push_back(t);
      wgts.push_back(w);
      stt += w * t * t;
      svt += w * cv(gg) * t;
      svv += w * cv(gg) * cv(gg);
    }
  }
  if (stt <= 1e-300)
    throw numerical_error("DegenerateFunctional", "relevance_constant: r - psi vanishes on the grid");
  RelevanceResult out;
  out.C = svt / stt;
  double rss = 0;
  for (size_t i = 0; i < vals.size(); ++i) {
    double e = vals[i] - out.C * tgts[i];
    rss += wgts[i] * e * e;
  }
  out.residual = std::sqrt(rss);
  double scale = std::max(std::sqrt(stt), std::sqrt(svv));
  if (out.residual > 1e-6 * std::max(1.0, scale))
    throw numerical_error("NotProportional",
                          "conditional means of g are not proportional to r - psi (residual " +
                              std::to_string(out.residual) + ")");
  return out;
}

namespace {

// residuals of the two characterization conditions:
//   d/dtheta_j E[g] = r1_j  and  L'g = (r2 - psi) in every cell
void record_adjoints(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                     const Eigen::VectorXd& r1, const Eigen::VectorXd& r2, GeneralResult& out) {
  if (mod.p() > 0)
    out.adjoint_theta_residual =
        (dexpectation_dtheta(mod, th, out.g) - r1).lpNorm<Eigen::Infinity>();
  Eigen::VectorXd target = r2.array() - out.psi;
  double worst = 0;
  for (int c = 0; c < mod.n_cells(); ++c) {
    Eigen::MatrixXd L = mod.conditional_matrix(th, c);
    worst = std::max(worst, (L.transpose() * out.g.cell_values[static_cast<size_t>(c)] - target)
                                .lpNorm<Eigen::Infinity>());
  }
  out.adjoint_grid_residual = worst;
}

}  // namespace

GeneralResult general_algorithm(const DiscreteMixtureModel& mod, const Eigen::VectorXd& th,
                                const Eigen::VectorXd& r1, const Eigen::VectorXd& r2) {
  int p = mod.p();
  if (r1.size() != p)
    throw data_error("DimensionMismatch", "general_algorithm: r1 must have length p");
  GeneralResult out;
  PartialMoment pm = solve_partial_moment(mod, th, r2);
  out.gtilde = pm.g;
  out.psi = pm.psi;
  out.basis = nf_moments(mod, th);
  out.g = out.gtilde;
  if (p == 0) {
    if (r1.size()) throw data_error("BadSpec", "general_algorithm: r1 given but model has no theta");
    record_adjoints(mod, th, r1, r2, out);
    return out;
  }
  int q = static_cast<int>(out.basis.size());
  Eigen::VectorXd rhs = r1 + Eigen::VectorXd(-dexpectation_dtheta(mod, th, out.gtilde));
  if (q == 0) {
    if (rhs.norm() > 1e-8)
      throw numerical_error("ColumnSpaceFailure",
                            "general_algorithm: no NF moments available to absorb the theta direction");
    out.A.resize(0);
    record_adjoints(mod, th, r1, r2, out);
    return out;
  }
  Eigen::MatrixXd Mm(p, q);  // column k: E[d m_k / d theta]
  for (int k = 0; k < q; ++k)
    Mm.col(k) = -dexpectation_dtheta(mod, th, out.basis[static_cast<size_t>(k)]);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Mm);
  Eigen::VectorXd A = cod.solve(rhs);
  double resid = (Mm * A - rhs).norm();
  if (resid > 1e-8 * std::max(1.0, rhs.norm()))
    throw numerical_error("ColumnSpaceFailure",
                          "general_algorithm: theta direction outside the NF moment span (residual " +
                              std::to_string(resid) + ")");
  out.A = A;
  for (int k = 0; k < q; ++k)
    for (size_t c = 0; c < out.g.cell_values.size(); ++c)
      out.g.cell_values[c] -= A(k) * out.basis[static_cast<size_t>(k)].cell_values[c];
  record_adjoints(mod, th, r1, r2, out);
  return out;
}

namespace {

// exact integrals of hat functions against a N(center, sigma^2) density
struct HatGauss {
  double sigma;
  double cdf(double z, double a) const { return norm_cdf((z - a) / sigma); }
  double pdf(double z, double a) const { return norm_pdf((z - a) / sigma) / sigma; }
  // integral over [l, u] of (z - b) phi_sigma(z - a) dz
  double lin(double l, double u, double a, double b) const {
    double i0 = cdf(u, a) - cdf(l, a);
    double i1 = -sigma * sigma * (pdf(u, a) - pdf(l, a));  // integral of (z - a) phi
    return i1 + (a - b) * i0;
  }
};

}  // namespace

NormalMeansMoment normal_means_moment(const Eigen::VectorXd& support, double theta_bar,
                                      const Eigen::VectorXd& z_grid) {
  Eigen::Index J = support.size(), N = z_grid.size();
  if (J < 1) throw data_error("BadSpec", "normal_means_moment: empty support");
  if (theta_bar <= 0) throw data_error("BadSpec", "normal_means_moment: theta_bar must be > 0");
  if (N <= J + 1) throw data_error("BadSpec", "normal_means_moment: grid must exceed support size");
  double h = z_grid(1) - z_grid(0);
  for (Eigen::Index i = 1; i < N; ++i)
    if (std::abs((z_grid(i) - z_grid(i - 1)) - h) > 1e-9 * std::max(1.0, std::abs(h)))
      throw data_error("BadSpec", "normal_means_moment: grid must be uniform ascending");
  if (h <= 0) throw data_error("BadSpec", "normal_means_moment: grid must be ascending");
  double sigma = std::sqrt(theta_bar);
  if (z_grid(0) > support.minCoeff() - 8 * sigma || z_grid(N - 1) < support.maxCoeff() + 8 * sigma)
    throw numerical_error("QuadratureTooCoarse",
                          "normal_means_moment: grid must cover support +/- 8 sd");

  HatGauss hg{sigma};
  auto build_K = [&](const Eigen::VectorXd& zg) {
    Eigen::Index n = zg.size();
    double hh = zg(1) - zg(0);
    Eigen::MatrixXd K(J, n);
    for (Eigen::Index j = 0; j < J; ++j) {
      double a = support(j);
      for (Eigen::Index i = 0; i < n; ++i) {
        double v = 0;
        if (i > 0) v += hg.lin(zg(i - 1), zg(i), a, zg(i - 1)) / hh;          // rising side
        if (i + 1 < n) v -= hg.lin(zg(i), zg(i + 1), a, zg(i + 1)) / hh;      // falling side
        K(j, i) = v;
      }
    }
    return K;
  };

  auto residual_check = [&](const Eigen::VectorXd& zg, const Eigen::VectorXd& g) {
    // independent evaluation: 4-point Gauss-Legendre per segment of the
    // piecewise-linear interpolant
    static const double gl_x[4] = {-0.8611363115940526, -0.3399810435848563,
                                   0.3399810435848563, 0.8611363115940526};
    static const double gl_w[4] = {0.3478548451374538, 0.6521451548625461,
                                   0.6521451548625461, 0.3478548451374538};
    double worst = 0;
    for (Eigen::Index j = 0; j < J; ++j) {
      double a = support(j);
      KahanSum s;
      for (Eigen::Index i = 0; i + 1 < zg.size(); ++i) {
        double lo = zg(i), hi = zg(i + 1);
        if (hi < a - 10 * sigma || lo > a + 10 * sigma) continue;
        double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (int q = 0; q < 4; ++q) {
          double z = mid + half * gl_x[q];
          double t = (z - lo) / (hi - lo);
          double gz = (1 - t) * g(i) + t * g(i + 1);
          s.add(gl_w[q] * half * gz * hg.pdf(z, a));
        }
      }
      worst = std::max(worst, std::abs(s.value()));
    }
    return worst;
  };

  Eigen::VectorXd zg = z_grid;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::MatrixXd K = build_K(zg);
    // project a smooth seed onto the nullspace: g = v - K'(KK')^+ K v
    double c0 = support.sum() / static_cast<double>(J) + 1.5 * sigma;
    double sw = std::max(sigma, (support.maxCoeff() - support.minCoeff()) * 0.5 + sigma);
    Eigen::VectorXd g;
    for (int try_seed = 0; try_seed < 2; ++try_seed) {
      Eigen::VectorXd v(zg.size());
      double c = try_seed == 0 ? c0 : c0 - 3.0 * sw;
      for (Eigen::Index i = 0; i < zg.size(); ++i) {
        double t = (zg(i) - c) / sw;
        v(i) = std::exp(-0.5 * t * t);
      }
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(K.transpose());
      g = v - K.transpose() * Eigen::VectorXd(cod.solve(v));
      if (g.norm() > 1e-10 * v.norm()) break;
    }
    if (g.norm() <= 1e-300)
      throw numerical_error("QuadratureTooCoarse", "normal_means_moment: nullspace projection vanished");
    double hh = zg(1) - zg(0);
    g /= std::sqrt(hh * g.squaredNorm());  // unit quadrature L2 norm
    double res = residual_check(zg, g);
    if (res <= 1e-6) {
      NormalMeansMoment out;
      out.z = zg;
      out.g = g;
      out.residual = res;
      return out;
    }
    // refine once: halve the spacing
    Eigen::VectorXd z2(2 * zg.size() - 1);
    for (Eigen::Index i = 0; i + 1 < zg.size(); ++i) {
      z2(2 * i) = zg(i);
      z2(2 * i + 1) = 0.5 * (zg(i) + zg(i + 1));
    }
    z2(z2.size() - 1) = zg(zg.size() - 1);
    zg = z2;
  }
  throw numerical_error("QuadratureTooCoarse",
                        "normal_means_moment: orthogonality residual above 1e-6 after refinement");
}

AmeResult ame_moment(const Dataset& d, const std::string& ycol, const std::string& xcol,
                     const AmeDensity& dens,
                     const std::function<double(const Dataset&, Eigen::Index, double)>& mu) {
  const Eigen::VectorXd& y = d.col(ycol);
  const Eigen::VectorXd& x = d.col(xcol);
  Eigen::Index n = d.n();
  if (n < 2) throw data_error("TooFewRows", "ame_moment: need n >= 2");
  double sx = std::sqrt((x.array() - x.mean()).square().sum() / static_cast<double>(n - 1));
  double h = 1e-4 * std::max(sx, 1e-8);
  Eigen::VectorXd g(n);
  KahanSum sorth, splug;
  for (Eigen::Index i = 0; i < n; ++i) {
    double f = dens.f(d, i, x(i));
    if (!(f > 1e-12))
      throw numerical_error("DensityNearZero", "ame_moment: density below 1e-12 at row " +
                                                   std::to_string(i));
    double s = dens.dfdx(d, i, x(i)) / f;
    double dmu = (mu(d, i, x(i) + h) - mu(d, i, x(i) - h)) / (2 * h);
    double mui = mu(d, i, x(i));
    double orth = -y(i) * s - dmu - mui * s;
    g(i) = orth;
    sorth.add(orth);
    splug.add(dmu);
  }
  AmeResult out;
  double dn = static_cast<double>(n);
  out.psi_orth = sorth.value() / dn;
  out.psi_plug = splug.value() / dn;
  g.array() -= out.psi_orth;
  out.g = g;
  double sd = std::sqrt(g.squaredNorm() / (dn - 1));
  out.se = sd / std::sqrt(dn);
  if (!out.g.allFinite()) throw numerical_error("NonFinite", "ame_moment: non-finite moment values");
  return out;
}

}  // namespace orthomom
