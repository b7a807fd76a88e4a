#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivlate/dataset.hpp"
#include "ivlate/estimators.hpp"

namespace ivlate {

enum class Link { logit, probit, linear };

const char* to_string(Link l);
Link parse_link(const std::string& s);

// Standard normal CDF, 0.5 * erfc(-x / sqrt(2)).
double normal_cdf(double x);
double log_normal_cdf(double x);

// Fitted instrument propensity score model.
struct PropensityFit {
  Link link = Link::logit;
  Matrix design;               // design actually fitted (intercept prepended if absent)
  bool intercept_added = false;
  Vector coefficients;         // NaN for aliased columns of `design`
  std::vector<bool> aliased;
  Vector index;                // x_i'b
  Vector phat;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;         // NaN for the linear link
  double score_max = 0.0;      // max-norm of the score at the reported coefficients
  std::size_t outside_unit = 0;  // linear link: fitted values outside (0, 1)
};

struct FitOptions {
  int max_iterations = 100;
  double rel_loglik_tol = 1e-10;
  double score_tol = 1e-6;
  // A coefficient beyond this magnitude while the likelihood keeps
  // improving is reported as separation.
  double separation_bound = 30.0;
};

// Bernoulli log-likelihood of z under index X b, its gradient and Hessian.
// X must not contain aliased columns.
double binary_loglik(Link link, const Vector& z, const Matrix& X, const Vector& b);
Vector binary_score(Link link, const Vector& z, const Matrix& X, const Vector& b);
Matrix binary_hessian(Link link, const Vector& z, const Matrix& X, const Vector& b);

// Maximum likelihood (logit/probit) or least squares (linear) fit of z on X.
// An intercept column is prepended when X has no nonzero constant column.
PropensityFit fit_binary_index(const Vector& z, const Matrix& X, Link link, const FitOptions& opts = {});

struct TrimBounds {
  double lo = 0.01;
  double hi = 0.99;
};

struct IpwOptions {
  TrimBounds trim;
  // 0: delta-method standard error treating phat as known. Otherwise the
  // nonparametric bootstrap that refits the propensity model per draw.
  std::size_t bootstrap_reps = 0;
  std::uint64_t seed = 0;
};

// Normalized inverse-probability-weighted Wald ratio.
EstimateReport ipw_late(const Dataset& ds, const PropensityFit& pf, const IpwOptions& opts = {});

// Point estimate only; exposed for the bootstrap and tests. Returns the
// estimate and the number of rows kept after trimming.
std::pair<double, std::size_t> ipw_late_point(const Vector& y, const Vector& d, const Vector& z, const Vector& phat,
                                              TrimBounds trim);

}  // namespace ivlate
