#include "ivlate/regression.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

#include "ivlate/errors.hpp"

namespace ivlate {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector expand(const Vector& kept_values, const std::vector<Eigen::Index>& kept, Eigen::Index full) {
  Vector out = Vector::Constant(full, kNaN);
  for (std::size_t a = 0; a < kept.size(); ++a) out[kept[a]] = kept_values[static_cast<Eigen::Index>(a)];
  return out;
}

Matrix expand(const Matrix& kept_values, const std::vector<Eigen::Index>& kept, Eigen::Index full) {
  Matrix out = Matrix::Constant(full, full, kNaN);
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = 0; b < kept.size(); ++b) {
      out(kept[a], kept[b]) = kept_values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
  return out;
}

std::vector<bool> aliased_flags(const std::vector<Eigen::Index>& kept, Eigen::Index full) {
  std::vector<bool> flags(static_cast<std::size_t>(full), true);
  for (auto c : kept) flags[static_cast<std::size_t>(c)] = false;
  return flags;
}

}  // namespace

const char* to_string(SeType s) {
  switch (s) {
    case SeType::classical: return "classical";
    case SeType::hc0: return "hc0";
    case SeType::hc1: return "hc1";
    case SeType::cluster: return "cluster";
  }
  return "unknown";
}

SeType parse_se_type(const std::string& s) {
  if (s == "classical") return SeType::classical;
  if (s == "hc0" || s == "HC0") return SeType::hc0;
  if (s == "hc1" || s == "HC1") return SeType::hc1;
  if (s == "cluster") return SeType::cluster;
  throw ConfigError(fmt::format("unknown standard error type '{}'", s));
}

double RegressionFit::se(Eigen::Index j) const { return std::sqrt(vcov(j, j)); }

std::vector<Eigen::Index> screen_columns(const Matrix& X, double tol) {
  const Eigen::Index n = X.rows();
  Matrix basis(n, std::min(n, X.cols()));
  Eigen::Index r = 0;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double norm0 = X.col(j).norm();
    if (norm0 == 0.0 || r == n) continue;
    Vector v = X.col(j);
    // Two projection passes keep the basis orthogonal to working precision.
    for (int pass = 0; pass < 2; ++pass) {
      if (r > 0) v -= basis.leftCols(r) * (basis.leftCols(r).transpose() * v);
    }
    const double norm = v.norm();
    if (norm <= tol * norm0) continue;
    basis.col(r) = v / norm;
    ++r;
    kept.push_back(j);
  }
  return kept;
}

Matrix select_columns(const Matrix& X, const std::vector<Eigen::Index>& cols) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) out.col(static_cast<Eigen::Index>(a)) = X.col(cols[a]);
  return out;
}

LeastSquares::LeastSquares(Matrix X) : x_(std::move(X)), qr_(x_) {}

Vector LeastSquares::solve(const Vector& y) const {
  const Eigen::Index k = x_.cols();
  Vector qty = qr_.householderQ().transpose() * y;
  return qr_.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(qty.head(k));
}

Matrix LeastSquares::bread() const {
  const Eigen::Index k = x_.cols();
  const auto R = qr_.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  Matrix rinv = R.solve(Matrix::Identity(k, k));
  return rinv * rinv.transpose();
}

Matrix LeastSquares::thin_q() const {
  const Eigen::Index k = x_.cols();
  const auto R = qr_.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  // Q = X R^{-1}
  return R.transpose().solve(x_.transpose()).transpose();
}

Vector LeastSquares::hat_diagonals() const { return thin_q().rowwise().squaredNorm(); }

Matrix sandwich_vcov(const Matrix& design, const Matrix& bread, const Vector& resid, SeType se,
                     std::span<const std::int64_t> cluster) {
  const auto n = static_cast<double>(design.rows());
  const auto k = static_cast<double>(design.cols());
  if (se == SeType::classical) {
    return bread * (resid.squaredNorm() / (n - k));
  }
  if (se == SeType::cluster) {
    if (cluster.size() != static_cast<std::size_t>(design.rows())) {
      throw ConfigError("cluster-robust standard errors need one cluster label per observation");
    }
    std::unordered_map<std::int64_t, Eigen::Index> ids;
    for (auto c : cluster) ids.emplace(c, static_cast<Eigen::Index>(ids.size()));
    const auto G = static_cast<Eigen::Index>(ids.size());
    if (G < 2) throw DomainError("cluster-robust standard errors need at least two clusters");
    Matrix scores = Matrix::Zero(G, design.cols());
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      scores.row(ids.at(cluster[static_cast<std::size_t>(i)])) += design.row(i) * resid[i];
    }
    const double g = static_cast<double>(G);
    const double factor = g / (g - 1.0) * (n - 1.0) / (n - k);
    Matrix meat = scores.transpose() * scores;
    return factor * bread * meat * bread;
  }
  Matrix u = design.array().colwise() * resid.array();
  Matrix meat = u.transpose() * u;
  Matrix v = bread * meat * bread;
  if (se == SeType::hc1) v *= n / (n - k);
  return v;
}

RegressionFit ols(const Vector& y, const Matrix& X, SeType se, std::span<const std::int64_t> cluster) {
  if (X.rows() == 0 || y.size() == 0) throw EmptyDataError("regression on zero rows");
  if (y.size() != X.rows()) throw DomainError("regression: outcome length does not match design rows");
  const auto kept = screen_columns(X);
  if (kept.empty()) throw RankError("regression: every design column is zero or collinear");
  LeastSquares ls(select_columns(X, kept));
  if (X.rows() <= ls.rank() && se != SeType::hc0) {
    // No residual degrees of freedom; vcov would divide by zero.
    throw RankError("regression: as many columns as rows");
  }
  RegressionFit fit;
  const Vector b = ls.solve(y);
  fit.fitted = ls.design() * b;
  fit.residuals = y - fit.fitted;
  fit.coefficients = expand(b, kept, X.cols());
  fit.vcov = expand(sandwich_vcov(ls.design(), ls.bread(), fit.residuals, se, cluster), kept, X.cols());
  fit.aliased = aliased_flags(kept, X.cols());
  fit.rank = ls.rank();
  fit.df_resid = X.rows() - ls.rank();
  fit.se_type = se;
  return fit;
}

RegressionFit tsls(const Vector& y, const Matrix& X_exog, const Vector& d, const Matrix& Z, SeType se,
                   std::span<const std::int64_t> cluster) {
  const Eigen::Index n = y.size();
  if (n == 0) throw EmptyDataError("2SLS on zero rows");
  if (X_exog.rows() != n || d.size() != n || Z.rows() != n) {
    throw DomainError("2SLS: inconsistent row counts");
  }
  if (Z.cols() < 1) throw IdentificationError("2SLS needs at least one excluded instrument");
  const Eigen::Index kx = X_exog.cols();

  // First stage on [X_exog, Z].
  Matrix W(n, kx + Z.cols());
  W << X_exog, Z;
  const auto w_kept = screen_columns(W);
  LeastSquares first(select_columns(W, w_kept));
  const Vector dhat = first.design() * first.solve(d);

  const auto x_kept = screen_columns(X_exog);
  Matrix xhat(n, static_cast<Eigen::Index>(x_kept.size()) + 1);
  xhat << select_columns(X_exog, x_kept), dhat;
  const auto second_kept = screen_columns(xhat);
  if (second_kept.size() != x_kept.size() + 1) {
    throw IdentificationError("2SLS: fitted treatment is collinear with the exogenous regressors");
  }
  LeastSquares second(xhat);
  if (n <= second.rank()) throw RankError("2SLS: as many regressors as rows");
  const Vector b = second.solve(y);

  Matrix xfull(n, xhat.cols());
  xfull << select_columns(X_exog, x_kept), d;
  RegressionFit fit;
  fit.fitted = xfull * b;
  fit.residuals = y - fit.fitted;

  std::vector<Eigen::Index> kept = x_kept;
  kept.push_back(kx);
  fit.coefficients = expand(b, kept, kx + 1);
  fit.vcov = expand(sandwich_vcov(xhat, second.bread(), fit.residuals, se, cluster), kept, kx + 1);
  fit.aliased = aliased_flags(kept, kx + 1);
  fit.rank = second.rank();
  fit.df_resid = n - second.rank();
  fit.se_type = se;
  return fit;
}

Vector hat_diagonals(const Matrix& X) {
  if (X.rows() == 0) throw EmptyDataError("hat diagonals of an empty design");
  const auto kept = screen_columns(X);
  if (static_cast<Eigen::Index>(kept.size()) != X.cols()) {
    throw RankError(fmt::format("hat diagonals: design has rank {} < {} columns", kept.size(), X.cols()));
  }
  return LeastSquares(X).hat_diagonals();
}

}  // namespace ivlate
