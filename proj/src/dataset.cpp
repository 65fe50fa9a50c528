#include "orthomom/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "orthomom/rng.hpp"

namespace orthomom {

using json = nlohmann::json;

Roles roles_from_json(const json& j) {
  Roles r;
  if (!j.is_object()) throw data_error("BadSpec", "roles must be a JSON object");
  if (j.contains("y1")) r.y1 = j.at("y1").get<std::string>();
  if (j.contains("y2")) r.y2 = j.at("y2").get<std::string>();
  if (j.contains("z2")) r.z2 = j.at("z2").get<std::vector<std::string>>();
  if (j.contains("x")) r.x = j.at("x").get<std::vector<std::string>>();
  return r;
}

Roles roles_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open roles file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error("ParseError", "roles file " + path + ": " + e.what());
  }
  return roles_from_json(j);
}

Dataset::Dataset(std::vector<std::string> names, std::vector<Eigen::VectorXd> cols)
    : names_(std::move(names)), cols_(std::move(cols)) {
  if (names_.size() != cols_.size())
    throw data_error("DimensionMismatch", "column names/data count mismatch");
  for (size_t i = 1; i < cols_.size(); ++i)
    if (cols_[i].size() != cols_[0].size())
      throw data_error("DimensionMismatch", "ragged columns in dataset");
}

bool Dataset::has(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

int Dataset::idx(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw data_error("MissingColumn", "no column named '" + name + "'");
  return static_cast<int>(it - names_.begin());
}

const Eigen::VectorXd& Dataset::col(const std::string& name) const {
  return cols_[static_cast<size_t>(idx(name))];
}

Eigen::MatrixXd Dataset::matrix(const std::vector<std::string>& names) const {
  Eigen::MatrixXd m(n(), static_cast<Eigen::Index>(names.size()));
  for (size_t j = 0; j < names.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = col(names[j]);
  return m;
}

static std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error("EmptyFile", "no header in " + path);
  std::vector<std::string> names = split_csv_line(line);
  std::vector<std::vector<double>> raw(names.size());
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != names.size())
      throw data_error("ParseError", path + ":" + std::to_string(lineno) + ": expected " +
                                         std::to_string(names.size()) + " fields, got " +
                                         std::to_string(f.size()));
    for (size_t j = 0; j < f.size(); ++j) {
      const char* s = f[j].c_str();
      char* end = nullptr;
      double v = std::strtod(s, &end);
      if (end == s || *end != '\0')
        throw data_error("ParseError", path + ":" + std::to_string(lineno) +
                                           ": not a number: '" + f[j] + "'");
      raw[j].push_back(v);
    }
  }
  if (raw.empty() || raw[0].empty()) throw data_error("EmptyFile", "no data rows in " + path);
  std::vector<Eigen::VectorXd> cols;
  cols.reserve(raw.size());
  for (auto& v : raw)
    cols.push_back(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  return Dataset(std::move(names), std::move(cols));
}

Dataset load_csv(const std::string& path, const Roles& roles) {
  Dataset d = load_csv(path);
  auto need = [&](const std::string& c) {
    if (!c.empty() && !d.has(c)) throw data_error("MissingColumn", "role column '" + c + "' not in " + path);
  };
  need(roles.y1);
  need(roles.y2);
  for (const auto& c : roles.z2) need(c);
  for (const auto& c : roles.x) need(c);
  d.roles = roles;
  return d;
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("IoError", "cannot write " + path);
  for (int j = 0; j < d.ncols(); ++j) out << (j ? "," : "") << d.names()[static_cast<size_t>(j)];
  out << "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (int j = 0; j < d.ncols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", d.col(j)(i));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw data_error("IoError", "write failed: " + path);
}

static void check_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw numerical_error("NonFinite", std::string("non-finite values in ") + what);
}

Dataset gen_plm(const PlmDgp& s) {
  if (s.n < 2 || s.d < 1) throw data_error("BadSpec", "gen_plm: need n >= 2, d >= 1");
  if (s.pi == 0.0 && !s.allow_irrelevant)
    throw data_error("BadSpec", "gen_plm: pi = 0 gives an irrelevant instrument");
  if (std::abs(s.rho) >= 1.0) throw data_error("BadSpec", "gen_plm: need |rho| < 1");
  Rng rng(s.seed);
  Eigen::Index n = s.n;
  int d = s.d;
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.normal();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  beta(0) = 1.0;
  if (d > 1) beta(1) = 0.5;
  Eigen::VectorXd xb = X * beta;

  Eigen::VectorXd z2(n), pz(n);
  if (s.exclusion) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double nu = rng.normal();
      z2(i) = (xb(i) + nu > 0.0) ? 1.0 : 0.0;
      pz(i) = norm_cdf(xb(i));
    }
  } else {
    // no exclusion: the "instrument" is a copy of X1, hence sigma(X)-measurable
    z2 = X.col(0);
    pz = z2;
  }

  Eigen::VectorXd m0 = 0.5 * X.col(0);
  if (d > 1) m0 += 0.5 * X.col(1);
  Eigen::VectorXd eta0 = X.col(0) + 0.5 * X.col(0).cwiseProduct(X.col(0));
  if (d > 1) eta0 += 0.5 * X.col(1);

  double rc = std::sqrt(1.0 - s.rho * s.rho);
  Eigen::VectorXd y2(n), y1(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double xi1 = rng.normal(), xi2 = rng.normal();
    double u = s.sigma_u * xi1;
    double eps = s.sigma_eps * (s.rho * xi1 + rc * xi2);
    y2(i) = m0(i) + s.pi * z2(i) + u;
    y1(i) = s.theta0 * y2(i) + eta0(i) + eps;
  }

  Eigen::VectorXd r2 = m0 + s.pi * pz;              // E[Y2|X]
  Eigen::VectorXd mu = m0 + s.pi * z2;              // E[Y2|X,Z2]
  Eigen::VectorXd r1 = s.theta0 * r2 + eta0;        // E[Y1|X]

  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> cols;
  for (int j = 0; j < d; ++j) {
    names.push_back("x" + std::to_string(j + 1));
    cols.push_back(X.col(j));
  }
  names.insert(names.end(), {"z2", "y2", "y1", "oracle_r1", "oracle_r2", "oracle_mu",
                             "oracle_zeta", "oracle_eta", "oracle_pz"});
  cols.insert(cols.end(), {z2, y2, y1, r1, r2, mu, Eigen::VectorXd(mu - r2), eta0, pz});
  Dataset out(std::move(names), std::move(cols));
  for (int j = 0; j < out.ncols(); ++j) check_finite(out.col(j), out.names()[static_cast<size_t>(j)].c_str());
  out.roles.y1 = "y1";
  out.roles.y2 = "y2";
  out.roles.z2 = {"z2"};
  for (int j = 0; j < d; ++j) out.roles.x.push_back("x" + std::to_string(j + 1));
  return out;
}

Dataset gen_hte(const HteDgp& s) {
  if (s.n < 2 || s.d_x < 1) throw data_error("BadSpec", "gen_hte: need n >= 2, d_x >= 1");
  int d = s.d_x;
  Eigen::VectorXd eta02 = s.eta02.size() ? s.eta02 : Eigen::VectorXd::Constant(d, 0.5);
  Eigen::VectorXd eta03 = s.eta03.size() ? s.eta03 : Eigen::VectorXd::Zero(d);
  Eigen::VectorXd eta04 = s.eta04.size() ? s.eta04 : Eigen::VectorXd::Zero(d);
  if (eta02.size() != d || eta03.size() != d || eta04.size() != d)
    throw data_error("BadSpec", "gen_hte: eta02/eta03/eta04 must have length d_x");
  if (std::abs(s.rho) >= 1.0) throw data_error("BadSpec", "gen_hte: need |rho| < 1");

  Rng rng(s.seed);
  Eigen::Index n = s.n;
  Eigen::MatrixXd Xc(n, d);  // X - eta03
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) Xc(i, j) = rng.normal();

  Eigen::VectorXd idx = 0.5 * Xc.col(0);
  if (d > 1) idx += 0.5 * Xc.col(1);
  Eigen::VectorXd z2(n), y2(n), y1(n), p0(n);
  double rc = std::sqrt(1.0 - s.rho * s.rho);
  for (Eigen::Index i = 0; i < n; ++i) {
    double nu = rng.normal();
    z2(i) = (idx(i) + nu > 0.0) ? 1.0 : 0.0;
    double xi1 = rng.normal(), xi2 = rng.normal();
    double u = s.sigma_u * xi1;
    double eps = s.sigma_eps * (s.rho * xi1 + rc * xi2);
    double omega = idx(i);
    if (s.exogenous) {
      y2(i) = z2(i);
      p0(i) = z2(i);
    } else {
      y2(i) = s.pi * z2(i) + omega + u;
      p0(i) = s.pi * z2(i) + omega;
    }
    double het = Xc.row(i).dot(eta04);
    y1(i) = s.theta0 * y2(i) + s.eta01 + Xc.row(i).dot(eta02) + y2(i) * het + eps;
  }

  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> cols;
  for (int j = 0; j < d; ++j) {
    names.push_back("x" + std::to_string(j + 1));
    cols.push_back(Xc.col(j) + Eigen::VectorXd::Constant(n, eta03(j)));
  }
  names.insert(names.end(), {"z2", "y2", "y1", "oracle_p"});
  cols.insert(cols.end(), {z2, y2, y1, p0});
  Dataset out(std::move(names), std::move(cols));
  for (int j = 0; j < out.ncols(); ++j) check_finite(out.col(j), out.names()[static_cast<size_t>(j)].c_str());
  out.roles.y1 = "y1";
  out.roles.y2 = "y2";
  out.roles.z2 = {"z2"};
  for (int j = 0; j < d; ++j) out.roles.x.push_back("x" + std::to_string(j + 1));
  return out;
}

Dataset gen_rc(const RcDgp& s) {
  if (s.n < 2) throw data_error("BadSpec", "gen_rc: need n >= 2");
  // discrete grid for (alpha1, alpha2), independent of X
  const double a1[3] = {-1.0, 0.0, 1.0};
  const double a2[3] = {0.5, 1.0, 1.5};
  const double w[3] = {0.3, 0.4, 0.3};
  double ea1 = 0.0, ea2 = 0.0;
  for (int g = 0; g < 3; ++g) {
    ea1 += w[g] * a1[g];
    ea2 += w[g] * a2[g];
  }
  std::vector<double> cum = {w[0], w[0] + w[1], 1.0};
  Rng rng(s.seed);
  Eigen::Index n = s.n;
  Eigen::VectorXd y(n), x1(n), wv(n), aidx(n), x1t(n), yt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double W = rng.normal();
    double e = rng.normal();
    int g = rng.categorical(cum);
    double X1 = 0.7 * W + e;
    double Y = s.theta0 * X1 + a1[g] + a2[g] * W;
    y(i) = Y;
    x1(i) = X1;
    wv(i) = W;
    aidx(i) = g;
    x1t(i) = e;                                           // X1 - E[X1|X2]
    yt(i) = Y - (s.theta0 * 0.7 * W + ea1 + ea2 * W);     // Y - E[Y|X2]
  }
  Dataset out({"y", "x1", "w", "alpha_idx", "oracle_x1t", "oracle_yt"},
              {y, x1, wv, aidx, x1t, yt});
  return out;
}

static double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Dataset gen_logit_panel(const LogitPanelDgp& s) {
  if (s.n < 1) throw data_error("BadSpec", "gen_logit_panel: need n >= 1");
  Eigen::VectorXd grid = s.alpha_grid.size() ? s.alpha_grid : (Eigen::VectorXd(3) << -1, 0, 1).finished();
  Eigen::VectorXd w = s.weights.size() ? s.weights
                                       : Eigen::VectorXd::Constant(grid.size(), 1.0 / static_cast<double>(grid.size()));
  if (w.size() != grid.size()) throw data_error("BadSpec", "gen_logit_panel: weights/grid length mismatch");
  if (std::abs(w.sum() - 1.0) > 1e-10 || w.minCoeff() < 0)
    throw data_error("BadSpec", "gen_logit_panel: weights must be a probability vector");
  if (s.cells.empty()) throw data_error("BadSpec", "gen_logit_panel: need at least one covariate cell");
  Eigen::VectorXd cw = s.cell_weights.size()
                           ? s.cell_weights
                           : Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.cells.size()),
                                                       1.0 / static_cast<double>(s.cells.size()));
  if (cw.size() != static_cast<Eigen::Index>(s.cells.size()) || std::abs(cw.sum() - 1.0) > 1e-10 ||
      cw.minCoeff() < 0)
    throw data_error("BadSpec", "gen_logit_panel: cell_weights must be a probability vector");

  std::vector<double> cumw(static_cast<size_t>(w.size()));
  double acc = 0;
  for (Eigen::Index g = 0; g < w.size(); ++g) cumw[static_cast<size_t>(g)] = (acc += w(g));
  std::vector<double> cumc(static_cast<size_t>(cw.size()));
  acc = 0;
  for (Eigen::Index c = 0; c < cw.size(); ++c) cumc[static_cast<size_t>(c)] = (acc += cw(c));

  Rng rng(s.seed);
  Eigen::Index n = s.n;
  Eigen::VectorXd y1(n), y2(n), x1(n), x2(n), cell(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int c = rng.categorical(cumc);
    int g = rng.categorical(cumw);
    double a = grid(g);
    const auto& xc = s.cells[static_cast<size_t>(c)];
    y1(i) = rng.bernoulli(logistic(a + s.theta0 * xc[0]));
    y2(i) = rng.bernoulli(logistic(a + s.theta0 * xc[1]));
    x1(i) = xc[0];
    x2(i) = xc[1];
    cell(i) = c;
  }
  return Dataset({"y1", "y2", "x1", "x2", "cell"}, {y1, y2, x1, x2, cell});
}

Dataset gen_normal_means(const NormalMeansDgp& s) {
  if (s.n < 1) throw data_error("BadSpec", "gen_normal_means: need n >= 1");
  if (s.theta0 <= 0) throw data_error("BadSpec", "gen_normal_means: need theta0 > 0");
  Eigen::VectorXd sup = s.support.size() ? s.support : Eigen::VectorXd::Zero(1);
  Eigen::VectorXd w = s.weights.size() ? s.weights
                                       : Eigen::VectorXd::Constant(sup.size(), 1.0 / static_cast<double>(sup.size()));
  if (w.size() != sup.size() || std::abs(w.sum() - 1.0) > 1e-10 || w.minCoeff() < 0)
    throw data_error("BadSpec", "gen_normal_means: weights must match support and be a probability vector");
  std::vector<double> cum(static_cast<size_t>(w.size()));
  double acc = 0;
  for (Eigen::Index g = 0; g < w.size(); ++g) cum[static_cast<size_t>(g)] = (acc += w(g));
  Rng rng(s.seed);
  Eigen::VectorXd z(s.n), alpha(s.n);
  double sd = std::sqrt(s.theta0);
  for (Eigen::Index i = 0; i < s.n; ++i) {
    int g = rng.categorical(cum);
    alpha(i) = sup(g);
    z(i) = sup(g) + sd * rng.normal();
  }
  return Dataset({"z", "alpha"}, {z, alpha});
}

static void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const char* what) {
  if (!j.is_object())
    throw data_error("BadSpec", std::string(what) + ": settings must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw data_error("BadSpec", std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

static Eigen::VectorXd json_vec(const json& j, const char* key) {
  auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

PlmDgp plm_dgp_from_json(const json& j) {
  check_keys(j,
             {"n", "d", "theta0", "rho", "pi", "sigma_u", "sigma_eps", "exclusion",
              "allow_irrelevant", "seed"},
             "plm dgp");
  PlmDgp s;
  if (j.contains("n")) s.n = j.at("n").get<Eigen::Index>();
  if (j.contains("d")) s.d = j.at("d").get<int>();
  if (j.contains("theta0")) s.theta0 = j.at("theta0").get<double>();
  if (j.contains("rho")) s.rho = j.at("rho").get<double>();
  if (j.contains("pi")) s.pi = j.at("pi").get<double>();
  if (j.contains("sigma_u")) s.sigma_u = j.at("sigma_u").get<double>();
  if (j.contains("sigma_eps")) s.sigma_eps = j.at("sigma_eps").get<double>();
  if (j.contains("exclusion")) s.exclusion = j.at("exclusion").get<bool>();
  if (j.contains("allow_irrelevant")) s.allow_irrelevant = j.at("allow_irrelevant").get<bool>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

HteDgp hte_dgp_from_json(const json& j) {
  check_keys(j,
             {"n", "d_x", "theta0", "eta01", "eta02", "eta03", "eta04", "pi", "rho",
              "sigma_u", "sigma_eps", "exogenous", "seed"},
             "hte dgp");
  HteDgp s;
  if (j.contains("n")) s.n = j.at("n").get<Eigen::Index>();
  if (j.contains("d_x")) s.d_x = j.at("d_x").get<int>();
  if (j.contains("theta0")) s.theta0 = j.at("theta0").get<double>();
  if (j.contains("eta01")) s.eta01 = j.at("eta01").get<double>();
  if (j.contains("eta02")) s.eta02 = json_vec(j, "eta02");
  if (j.contains("eta03")) s.eta03 = json_vec(j, "eta03");
  if (j.contains("eta04")) s.eta04 = json_vec(j, "eta04");
  if (j.contains("pi")) s.pi = j.at("pi").get<double>();
  if (j.contains("rho")) s.rho = j.at("rho").get<double>();
  if (j.contains("sigma_u")) s.sigma_u = j.at("sigma_u").get<double>();
  if (j.contains("sigma_eps")) s.sigma_eps = j.at("sigma_eps").get<double>();
  if (j.contains("exogenous")) s.exogenous = j.at("exogenous").get<bool>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

RcDgp rc_dgp_from_json(const json& j) {
  check_keys(j, {"n", "theta0", "seed"}, "rc dgp");
  RcDgp s;
  if (j.contains("n")) s.n = j.at("n").get<Eigen::Index>();
  if (j.contains("theta0")) s.theta0 = j.at("theta0").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

LogitPanelDgp logit_panel_dgp_from_json(const json& j) {
  check_keys(j, {"n", "theta0", "alpha_grid", "weights", "cells", "cell_weights", "seed"},
             "logit-panel dgp");
  LogitPanelDgp s;
  if (j.contains("n")) s.n = j.at("n").get<Eigen::Index>();
  if (j.contains("theta0")) s.theta0 = j.at("theta0").get<double>();
  if (j.contains("alpha_grid")) s.alpha_grid = json_vec(j, "alpha_grid");
  if (j.contains("weights")) s.weights = json_vec(j, "weights");
  if (j.contains("cells")) {
    s.cells.clear();
    for (const auto& c : j.at("cells")) {
      auto v = c.get<std::vector<double>>();
      if (v.size() != 2)
        throw data_error("BadSpec", "logit-panel dgp: each cell must be a pair [x1, x2]");
      s.cells.push_back({v[0], v[1]});
    }
  }
  if (j.contains("cell_weights")) s.cell_weights = json_vec(j, "cell_weights");
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

NormalMeansDgp normal_means_dgp_from_json(const json& j) {
  check_keys(j, {"n", "theta0", "support", "weights", "seed"}, "normal-means dgp");
  NormalMeansDgp s;
  if (j.contains("n")) s.n = j.at("n").get<Eigen::Index>();
  if (j.contains("theta0")) s.theta0 = j.at("theta0").get<double>();
  if (j.contains("support")) s.support = json_vec(j, "support");
  if (j.contains("weights")) s.weights = json_vec(j, "weights");
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace orthomom
