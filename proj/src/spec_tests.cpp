#include "ivlate/spec_tests.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <fmt/format.h>

#include "ivlate/errors.hpp"
#include "ivlate/regression.hpp"

namespace ivlate {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_powers(const std::vector<int>& powers) {
  if (powers.empty()) throw ConfigError("RESET needs at least one power");
  std::set<int> seen;
  for (int k : powers) {
    if (k < 2 || k > 4) throw ConfigError(fmt::format("RESET power {} outside {{2,3,4}}", k));
    if (!seen.insert(k).second) throw ConfigError(fmt::format("RESET power {} listed twice", k));
  }
}

std::string join(const std::vector<int>& powers) {
  std::string s;
  for (int k : powers) s += (s.empty() ? "" : ",") + std::to_string(k);
  return s;
}

Matrix with_intercept(const Matrix& X) {
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (X.rows() > 0 && X(0, j) != 0.0 && (X.col(j).array() == X(0, j)).all()) return X;
  }
  Matrix out(X.rows(), X.cols() + 1);
  out << Vector::Ones(X.rows()), X;
  return out;
}

TestReport trivial_pass(std::string name, const std::vector<int>& powers) {
  TestReport rep;
  rep.test = std::move(name);
  rep.statistic = 0.0;
  rep.df1 = 0.0;
  rep.p_value = 1.0;
  rep.trivial = true;
  rep.method["powers"] = join(powers);
  rep.method["note"] = "trivially passes: fitted values span no new direction";
  return rep;
}

}  // namespace

double f_upper_tail(double stat, double df1, double df2) {
  if (!(stat > 0.0)) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f_distribution<>(df1, df2), stat));
}

double chi2_upper_tail(double stat, double df) {
  if (!(stat > 0.0)) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<>(df), stat));
}

TestReport reset_linear(const Vector& z, const Matrix& X_in, const std::vector<int>& powers) {
  check_powers(powers);
  const Matrix X = with_intercept(X_in);
  const auto base_kept = screen_columns(X);
  const Matrix Xk = select_columns(X, base_kept);
  const Vector zhat = Xk * LeastSquares(Xk).solve(z);

  const auto k = Xk.cols();
  Matrix aug(X.rows(), k + static_cast<Eigen::Index>(powers.size()));
  aug.leftCols(k) = Xk;
  for (std::size_t a = 0; a < powers.size(); ++a) {
    aug.col(k + static_cast<Eigen::Index>(a)) = zhat.array().pow(powers[a]).matrix();
  }
  const auto fit = ols(z, aug, SeType::hc1);
  std::vector<Eigen::Index> added;
  for (Eigen::Index c = k; c < aug.cols(); ++c) {
    if (!fit.aliased[static_cast<std::size_t>(c)]) added.push_back(c);
  }
  if (added.empty()) return trivial_pass("RESET (linear probability)", powers);

  const auto q = static_cast<Eigen::Index>(added.size());
  Vector b(q);
  Matrix V(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    b[a] = fit.coefficients[added[static_cast<std::size_t>(a)]];
    for (Eigen::Index c = 0; c < q; ++c) V(a, c) = fit.vcov(added[static_cast<std::size_t>(a)], added[static_cast<std::size_t>(c)]);
  }
  const double wald = b.dot(V.ldlt().solve(b));
  TestReport rep;
  rep.test = "RESET (linear probability)";
  rep.df1 = static_cast<double>(q);
  rep.df2 = static_cast<double>(fit.df_resid);
  rep.statistic = wald / rep.df1;
  rep.p_value = f_upper_tail(rep.statistic, rep.df1, rep.df2);
  rep.method["powers"] = join(powers);
  rep.method["terms"] = "powers of fitted values";
  rep.method["vcov"] = "HC1";
  rep.method["reference"] = "F";
  return rep;
}

TestReport reset_binary_index(const PropensityFit& pf, const Vector& z, const std::vector<int>& powers) {
  check_powers(powers);
  if (pf.link == Link::linear) throw ConfigError("binary-index RESET needs a logit or probit fit");
  if (!pf.converged) throw ConvergenceError("binary-index RESET needs a converged base fit");
  const std::string name = fmt::format("RESET ({} index)", to_string(pf.link));

  const Eigen::Index n = pf.index.size();
  const double mean = pf.index.mean();
  const double sd = std::sqrt((pf.index.array() - mean).square().sum() / static_cast<double>(n));
  const double scale = std::max(1.0, pf.index.cwiseAbs().maxCoeff());
  if (!(sd > 1e-12 * scale)) return trivial_pass(name, powers);
  const Vector s = (pf.index.array() - mean) / sd;

  std::vector<Eigen::Index> base_kept;
  for (Eigen::Index c = 0; c < pf.design.cols(); ++c) {
    if (!pf.aliased[static_cast<std::size_t>(c)]) base_kept.push_back(c);
  }
  const Matrix Xk = select_columns(pf.design, base_kept);
  const auto k = Xk.cols();
  Matrix aug(n, k + static_cast<Eigen::Index>(powers.size()));
  aug.leftCols(k) = Xk;
  for (std::size_t a = 0; a < powers.size(); ++a) {
    aug.col(k + static_cast<Eigen::Index>(a)) = s.array().pow(powers[a]).matrix();
  }
  const auto kept = screen_columns(aug);
  const auto added = static_cast<Eigen::Index>(std::count_if(kept.begin(), kept.end(), [&](Eigen::Index c) { return c >= k; }));
  if (added == 0) return trivial_pass(name, powers);

  TestReport rep;
  rep.test = name;
  rep.df1 = static_cast<double>(added);
  rep.df2 = kNaN;
  rep.method["powers"] = join(powers);
  rep.method["terms"] = "powers of the centered and scaled fitted index";
  rep.method["reference"] = "chi-square (likelihood ratio)";
  try {
    const auto refit = fit_binary_index(z, select_columns(aug, kept), pf.link);
    rep.statistic = std::max(0.0, 2.0 * (refit.loglik - pf.loglik));
    rep.p_value = chi2_upper_tail(rep.statistic, rep.df1);
  } catch (const DomainError& e) {
    rep.statistic = kNaN;
    rep.p_value = kNaN;
    rep.error = e.what();
  }
  return rep;
}

}  // namespace ivlate
