#include "ivlate/many_iv.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ivlate/errors.hpp"
#include "ivlate/estimators.hpp"

namespace ivlate {
namespace {

constexpr double kLeverageLimit = 1.0 - 1e-8;

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

ManyIVFit from_fit(ManyIVEstimator which, const RegressionFit& fit, SeType se, const Matrix& X, const Matrix& Z) {
  ManyIVFit out;
  out.estimator = which;
  const auto last = fit.coefficients.size() - 1;
  out.estimate = fit.coefficients[last];
  out.se = fit.se(last);
  out.se_type = to_string(se);
  out.K = static_cast<std::size_t>(Z.cols());
  out.L = static_cast<std::size_t>(X.cols());
  out.n_used = static_cast<std::size_t>(X.rows());
  return out;
}

struct Interacted {
  std::vector<std::size_t> rows;
  Vector y, d;
  Matrix X, Z;
  std::vector<std::int64_t> cluster;
  SeType se = SeType::hc1;
};

Interacted interacted(const Dataset& ds, const CellTable& ct) {
  Interacted in;
  const auto cells = ct.retained();
  if (cells.empty()) throw IdentificationError("every covariate cell is degenerate");
  in.rows = ct.retained_rows();
  const auto m = static_cast<Eigen::Index>(in.rows.size());
  in.y.resize(m);
  in.d.resize(m);
  Vector z(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto i = static_cast<Eigen::Index>(in.rows[static_cast<std::size_t>(a)]);
    in.y[a] = ds.y()[i];
    in.d[a] = ds.d()[i];
    z[a] = ds.z()[i];
  }
  in.X = cell_dummies(ct, in.rows, cells);
  in.Z = in.X.array().colwise() * z.array();
  if (ds.cluster()) {
    for (auto i : in.rows) in.cluster.push_back((*ds.cluster())[i]);
  }
  in.se = resolve_se_type(ds, {});
  return in;
}

}  // namespace

const char* to_string(ManyIVEstimator e) {
  switch (e) {
    case ManyIVEstimator::tsls: return "2SLS";
    case ManyIVEstimator::jive: return "JIVE";
    case ManyIVEstimator::ujive: return "UJIVE";
  }
  return "unknown";
}

Vector loo_fitted(const Matrix& W, const Vector& v, double* leverage_max, std::span<const std::size_t> row_ids) {
  const auto keep = screen_columns(W);
  const LeastSquares ls(select_columns(W, keep));
  const Vector fitted = ls.design() * ls.solve(v);
  const Vector h = ls.hat_diagonals();
  Vector out(v.size());
  double hmax = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    hmax = std::max(hmax, h[i]);
    if (h[i] > kLeverageLimit) {
      const auto row = row_ids.empty() ? static_cast<std::size_t>(i) : row_ids[static_cast<std::size_t>(i)];
      throw LeverageError(fmt::format(
          "observation {} has leverage {:.10f}; its leave-one-out fit is undefined "
          "(a singleton instrument group; raise the minimum arm size)",
          row, h[i]));
    }
    out[i] = (fitted[i] - h[i] * v[i]) / (1.0 - h[i]);
  }
  if (leverage_max) *leverage_max = std::max(*leverage_max, hmax);
  return out;
}

ManyIVFit many_tsls(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se,
                    std::span<const std::int64_t> cluster) {
  const auto fit = tsls(y, X, d, Z, se, cluster);
  auto out = from_fit(ManyIVEstimator::tsls, fit, se, X, Z);
  out.leverage_max = hat_diagonals(select_columns(hcat(X, Z), screen_columns(hcat(X, Z)))).maxCoeff();
  return out;
}

ManyIVFit jive(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se,
               std::span<const std::int64_t> cluster, std::span<const std::size_t> row_ids) {
  double hmax = 0.0;
  const Vector inst = loo_fitted(hcat(X, Z), d, &hmax, row_ids);
  const auto fit = tsls(y, X, d, inst, se, cluster);
  auto out = from_fit(ManyIVEstimator::jive, fit, se, X, Z);
  out.leverage_max = hmax;
  return out;
}

ManyIVFit ujive(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se,
                std::span<const std::int64_t> cluster, std::span<const std::size_t> row_ids) {
  double hmax = 0.0;
  const Vector full = loo_fitted(hcat(X, Z), d, &hmax, row_ids);
  const Vector exog = loo_fitted(X, d, &hmax, row_ids);
  const Vector inst = full - exog;
  const auto fit = tsls(y, X, d, inst, se, cluster);
  auto out = from_fit(ManyIVEstimator::ujive, fit, se, X, Z);
  out.leverage_max = hmax;
  return out;
}

ManyIVFit many_tsls(const Dataset& ds, const CellTable& ct) {
  const auto in = interacted(ds, ct);
  return many_tsls(in.y, in.X, in.d, in.Z, in.se, in.cluster);
}

ManyIVFit jive(const Dataset& ds, const CellTable& ct) {
  const auto in = interacted(ds, ct);
  return jive(in.y, in.X, in.d, in.Z, in.se, in.cluster, in.rows);
}

ManyIVFit ujive(const Dataset& ds, const CellTable& ct) {
  const auto in = interacted(ds, ct);
  return ujive(in.y, in.X, in.d, in.Z, in.se, in.cluster, in.rows);
}

}  // namespace ivlate
