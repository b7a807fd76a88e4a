#include "ivlate/estimators.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

#include "ivlate/errors.hpp"

namespace ivlate {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Restricted {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cells;
  Vector y, d, z;
  std::vector<std::int64_t> cluster;
};

Restricted restrict_to_retained(const Dataset& ds, const CellTable& ct) {
  Restricted r;
  r.cells = ct.retained();
  if (r.cells.empty()) throw IdentificationError("every covariate cell is degenerate");
  r.rows = ct.retained_rows();
  const auto m = static_cast<Eigen::Index>(r.rows.size());
  r.y.resize(m);
  r.d.resize(m);
  r.z.resize(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto i = static_cast<Eigen::Index>(r.rows[static_cast<std::size_t>(a)]);
    r.y[a] = ds.y()[i];
    r.d[a] = ds.d()[i];
    r.z[a] = ds.z()[i];
  }
  if (ds.cluster()) {
    r.cluster.reserve(r.rows.size());
    for (auto i : r.rows) r.cluster.push_back((*ds.cluster())[i]);
  }
  return r;
}

EstimateReport from_tsls(Estimand which, const RegressionFit& fit, const Restricted& r, SeType se) {
  EstimateReport rep;
  rep.estimand = which;
  const auto last = fit.coefficients.size() - 1;
  rep.estimate = fit.coefficients[last];
  rep.se = fit.se(last);
  rep.se_type = to_string(se);
  rep.n_used = r.rows.size();
  rep.cells_used = r.cells.size();
  rep.metadata["method"] = "2SLS with cell dummies";
  return rep;
}

double weighted_dot(const std::vector<CellWeight>& rows, double CellWeight::*w) {
  double s = 0.0;
  for (const auto& r : rows) s += r.*w * r.tau;
  return s;
}

}  // namespace

const char* to_string(Estimand e) {
  switch (e) {
    case Estimand::beta_iv: return "beta_iv";
    case Estimand::beta_ai: return "beta_ai";
    case Estimand::beta_late_saturated: return "beta_late_saturated";
    case Estimand::beta_late_ipw: return "beta_late_ipw";
  }
  return "unknown";
}

double WeightTable::dot_late() const { return weighted_dot(rows, &CellWeight::w_late); }
double WeightTable::dot_iv() const { return weighted_dot(rows, &CellWeight::w_iv); }
double WeightTable::dot_ai() const { return weighted_dot(rows, &CellWeight::w_ai); }

SeType resolve_se_type(const Dataset& ds, const EstimatorOptions& opts) {
  if (opts.se) {
    if (*opts.se == SeType::cluster && !ds.cluster()) {
      throw ConfigError("cluster-robust standard errors requested but no cluster column is mapped");
    }
    return *opts.se;
  }
  return ds.cluster() ? SeType::cluster : SeType::hc1;
}

Matrix cell_dummies(const CellTable& ct, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cells) {
  std::unordered_map<std::size_t, Eigen::Index> column;
  for (std::size_t a = 0; a < cells.size(); ++a) column.emplace(cells[a], static_cast<Eigen::Index>(a));
  Matrix X = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    auto it = column.find(ct.assignment[rows[a]]);
    if (it != column.end()) X(static_cast<Eigen::Index>(a), it->second) = 1.0;
  }
  return X;
}

EstimateReport estimate_beta_iv(const Dataset& ds, const CellTable& ct, const EstimatorOptions& opts) {
  const SeType se = resolve_se_type(ds, opts);
  const auto r = restrict_to_retained(ds, ct);
  const Matrix X = cell_dummies(ct, r.rows, r.cells);
  const auto fit = tsls(r.y, X, r.d, r.z, se, r.cluster);
  auto rep = from_tsls(Estimand::beta_iv, fit, r, se);
  rep.metadata["instruments"] = "Z";
  return rep;
}

EstimateReport estimate_beta_ai(const Dataset& ds, const CellTable& ct, const EstimatorOptions& opts) {
  const SeType se = resolve_se_type(ds, opts);
  const auto r = restrict_to_retained(ds, ct);
  const Matrix X = cell_dummies(ct, r.rows, r.cells);
  const Matrix Z = X.array().colwise() * r.z.array();
  const auto fit = tsls(r.y, X, r.d, Z, se, r.cluster);
  auto rep = from_tsls(Estimand::beta_ai, fit, r, se);
  rep.metadata["instruments"] = fmt::format("Z x cell dummies ({})", r.cells.size());
  return rep;
}

EstimateReport estimate_beta_iv_linear(const Dataset& ds, const EstimatorOptions& opts) {
  const SeType se = resolve_se_type(ds, opts);
  const auto n = static_cast<Eigen::Index>(ds.n());
  Matrix X(n, ds.x().cols() + 1);
  X << Vector::Ones(n), ds.x();
  std::vector<std::int64_t> cluster;
  if (ds.cluster()) cluster = *ds.cluster();
  const auto fit = tsls(ds.y(), X, ds.d(), ds.z(), se, cluster);
  EstimateReport rep;
  rep.estimand = Estimand::beta_iv;
  const auto last = fit.coefficients.size() - 1;
  rep.estimate = fit.coefficients[last];
  rep.se = fit.se(last);
  rep.se_type = to_string(se);
  rep.n_used = ds.n();
  rep.metadata["method"] = "2SLS with linear covariates";
  rep.metadata["instruments"] = "Z";
  return rep;
}

EstimateReport estimate_beta_late_saturated(const Dataset& ds, const CellTable& ct, const EstimatorOptions& opts) {
  const SeType se = resolve_se_type(ds, opts);
  const auto cells = ct.retained();
  if (cells.empty()) throw IdentificationError("every covariate cell is degenerate");
  double num = 0.0;
  double den = 0.0;
  double mass = 0.0;
  for (auto j : cells) {
    const auto& c = ct.cells[j];
    num += c.p * (c.mean_y1 - c.mean_y0);
    den += c.p * (c.mean_d1 - c.mean_d0);
    mass += c.p;
  }
  num /= mass;
  den /= mass;
  if (den == 0.0) throw IdentificationError("aggregate first stage is zero");
  const double theta = num / den;

  // Influence function of num - theta * den, scaled by 1/den.
  const auto rows = ct.retained_rows();
  const auto m = static_cast<double>(rows.size());
  Vector psi(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const auto i = static_cast<Eigen::Index>(rows[a]);
    const auto& c = ct.cells[ct.assignment[rows[a]]];
    const double dy = c.mean_y1 - c.mean_y0;
    const double dd = c.mean_d1 - c.mean_d0;
    double psi_num = dy - num;
    double psi_den = dd - den;
    if (ds.z()[i] == 1.0) {
      psi_num += (ds.y()[i] - c.mean_y1) / c.q;
      psi_den += (ds.d()[i] - c.mean_d1) / c.q;
    } else {
      psi_num -= (ds.y()[i] - c.mean_y0) / (1.0 - c.q);
      psi_den -= (ds.d()[i] - c.mean_d0) / (1.0 - c.q);
    }
    psi[static_cast<Eigen::Index>(a)] = (psi_num - theta * psi_den) / den;
  }

  double var = 0.0;
  if (se == SeType::cluster) {
    std::unordered_map<std::int64_t, double> sums;
    for (std::size_t a = 0; a < rows.size(); ++a) sums[(*ds.cluster())[rows[a]]] += psi[static_cast<Eigen::Index>(a)];
    const auto g = static_cast<double>(sums.size());
    if (g < 2) throw DomainError("cluster-robust standard errors need at least two clusters");
    for (const auto& [id, s] : sums) var += s * s;
    var *= g / (g - 1.0) / (m * m);
  } else {
    var = psi.squaredNorm() / (m * m);
  }

  EstimateReport rep;
  rep.estimand = Estimand::beta_late_saturated;
  rep.estimate = theta;
  rep.se = std::sqrt(var);
  rep.se_type = se == SeType::cluster ? "cluster (influence function)" : "robust (influence function)";
  rep.n_used = rows.size();
  rep.cells_used = cells.size();
  rep.metadata["method"] = "share-weighted within-cell Wald ratio";
  return rep;
}

WeightTable decompose_weights(const CellTable& ct) {
  const auto cells = ct.retained();
  if (cells.empty()) throw IdentificationError("every covariate cell is degenerate");
  WeightTable wt;
  double s_late = 0.0, s_iv = 0.0, s_ai = 0.0;
  for (auto j : cells) {
    const auto& c = ct.cells[j];
    CellWeight w;
    w.cell = j;
    w.tau = c.tau;
    w.w_late = c.p * c.pi;
    w.w_iv = c.p * c.pi * c.var_z;
    w.w_ai = c.p * c.pi * c.pi * c.var_z;
    s_late += w.w_late;
    s_iv += w.w_iv;
    s_ai += w.w_ai;
    wt.rows.push_back(w);
  }
  wt.late_defined = s_late != 0.0;
  wt.iv_defined = s_iv != 0.0;
  wt.ai_defined = s_ai != 0.0;
  for (auto& w : wt.rows) {
    w.w_late = wt.late_defined ? w.w_late / s_late : kNaN;
    w.w_iv = wt.iv_defined ? w.w_iv / s_iv : kNaN;
    w.w_ai = wt.ai_defined ? w.w_ai / s_ai : kNaN;
  }
  return wt;
}

}  // namespace ivlate
