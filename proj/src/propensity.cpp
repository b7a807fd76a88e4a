#include "ivlate/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include <fmt/format.h>

#include "ivlate/errors.hpp"
#include "ivlate/regression.hpp"
#include "ivlate/rng.hpp"

namespace ivlate {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPMin = 1e-300;
constexpr double kPMax = 1.0 - 1e-16;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_normal_pdf(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

// phi(x) / Phi(x), stable in the lower tail.
double inverse_mills(double x) { return std::exp(log_normal_pdf(x) - log_normal_cdf(x)); }

double probability(Link link, double eta) {
  const double p = link == Link::logit ? logistic(eta) : normal_cdf(eta);
  return std::clamp(p, kPMin, kPMax);
}

bool has_intercept(const Matrix& X) {
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (X(0, j) != 0.0 && (X.col(j).array() == X(0, j)).all()) return true;
  }
  return false;
}

}  // namespace

const char* to_string(Link l) {
  switch (l) {
    case Link::logit: return "logit";
    case Link::probit: return "probit";
    case Link::linear: return "linear";
  }
  return "unknown";
}

Link parse_link(const std::string& s) {
  if (s == "logit") return Link::logit;
  if (s == "probit") return Link::probit;
  if (s == "linear") return Link::linear;
  throw ConfigError(fmt::format("unknown link '{}'", s));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  // Asymptotic series of the Mills ratio.
  const double x2 = x * x;
  return log_normal_pdf(x) - std::log(-x) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

double binary_loglik(Link link, const Vector& z, const Matrix& X, const Vector& b) {
  const Vector eta = X * b;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (link == Link::logit) {
      ll -= z[i] == 1.0 ? softplus(-eta[i]) : softplus(eta[i]);
    } else {
      ll += z[i] == 1.0 ? log_normal_cdf(eta[i]) : log_normal_cdf(-eta[i]);
    }
  }
  return ll;
}

Vector binary_score(Link link, const Vector& z, const Matrix& X, const Vector& b) {
  const Vector eta = X * b;
  Vector g(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (link == Link::logit) {
      g[i] = z[i] - logistic(eta[i]);
    } else {
      g[i] = z[i] == 1.0 ? inverse_mills(eta[i]) : -inverse_mills(-eta[i]);
    }
  }
  return X.transpose() * g;
}

Matrix binary_hessian(Link link, const Vector& z, const Matrix& X, const Vector& b) {
  const Vector eta = X * b;
  Vector w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (link == Link::logit) {
      const double p = logistic(eta[i]);
      w[i] = p * (1.0 - p);
    } else if (z[i] == 1.0) {
      const double lam = inverse_mills(eta[i]);
      w[i] = lam * (eta[i] + lam);
    } else {
      const double lam = inverse_mills(-eta[i]);
      w[i] = lam * (lam - eta[i]);
    }
  }
  return -(X.transpose() * (X.array().colwise() * w.array()).matrix());
}

PropensityFit fit_binary_index(const Vector& z, const Matrix& X, Link link, const FitOptions& opts) {
  const Eigen::Index n = z.size();
  if (n == 0) throw EmptyDataError("propensity model on zero rows");
  if (X.rows() != n) throw DomainError("propensity model: design rows do not match instrument length");
  const double zsum = z.sum();
  if (zsum == 0.0 || zsum == static_cast<double>(n)) throw DomainError("instrument has no variation");

  PropensityFit fit;
  fit.link = link;
  fit.intercept_added = !has_intercept(X);
  if (fit.intercept_added) {
    fit.design.resize(n, X.cols() + 1);
    fit.design << Vector::Ones(n), X;
  } else {
    fit.design = X;
  }
  const auto kept = screen_columns(fit.design);
  const Matrix Xk = select_columns(fit.design, kept);
  fit.aliased.assign(static_cast<std::size_t>(fit.design.cols()), true);
  for (auto c : kept) fit.aliased[static_cast<std::size_t>(c)] = false;

  Vector b = Vector::Zero(Xk.cols());
  if (link == Link::linear) {
    b = LeastSquares(Xk).solve(z);
    fit.converged = true;
    fit.loglik = kNaN;
    fit.score_max = (Xk.transpose() * (z - Xk * b)).cwiseAbs().maxCoeff();
  } else {
    double ll = binary_loglik(link, z, Xk, b);
    bool done = false;
    for (int it = 1; it <= opts.max_iterations && !done; ++it) {
      const Vector g = binary_score(link, z, Xk, b);
      const Matrix H = binary_hessian(link, z, Xk, b);
      const Vector step = (-H).ldlt().solve(g);
      double t = 1.0;
      Vector b_new = b + step;
      double ll_new = binary_loglik(link, z, Xk, b_new);
      for (int halving = 0; halving < 50 && !(ll_new >= ll); ++halving) {
        t *= 0.5;
        b_new = b + t * step;
        ll_new = binary_loglik(link, z, Xk, b_new);
      }
      if (!(ll_new >= ll)) {
        // No ascent along the Newton direction: at the optimum to working precision.
        fit.iterations = it;
        done = true;
        break;
      }
      const double rel = std::abs(ll_new - ll) / std::max(std::abs(ll), 1e-300);
      const bool improved = ll_new > ll;
      b = b_new;
      ll = ll_new;
      fit.iterations = it;
      const double gmax = binary_score(link, z, Xk, b).cwiseAbs().maxCoeff();
      if (rel < opts.rel_loglik_tol || gmax < opts.score_tol) {
        // Polishing Newton steps drive the score to roundoff level.
        double gnow = gmax;
        for (int polish = 0; polish < 3 && gnow > 0.0; ++polish) {
          const Vector g2 = binary_score(link, z, Xk, b);
          const Vector b2 = b + (-binary_hessian(link, z, Xk, b)).ldlt().solve(g2);
          const double gnext = binary_score(link, z, Xk, b2).cwiseAbs().maxCoeff();
          if (!(gnext < gnow)) break;
          b = b2;
          gnow = gnext;
          ll = binary_loglik(link, z, Xk, b);
        }
        done = true;
        break;
      }
      Eigen::Index worst = 0;
      const double bmax = b.cwiseAbs().maxCoeff(&worst);
      if (bmax > opts.separation_bound && improved) {
        const Eigen::Index col = kept[static_cast<std::size_t>(worst)];
        throw SeparationError(fmt::format(
            "perfect separation: coefficient on design column {} diverging toward {}infinity (|b| = {:.3g} at "
            "iteration {}, loglik {:.6g})",
            col, b[worst] > 0 ? "+" : "-", bmax, it, ll));
      }
    }
    if (!done) {
      throw ConvergenceError(fmt::format("propensity model did not converge in {} iterations (loglik {:.6g}, |score| {:.3g})",
                                         opts.max_iterations, ll,
                                         binary_score(link, z, Xk, b).cwiseAbs().maxCoeff()));
    }
    fit.converged = true;
    fit.loglik = ll;
    fit.score_max = binary_score(link, z, Xk, b).cwiseAbs().maxCoeff();
  }

  fit.coefficients = Vector::Constant(fit.design.cols(), kNaN);
  for (std::size_t a = 0; a < kept.size(); ++a) fit.coefficients[kept[a]] = b[static_cast<Eigen::Index>(a)];
  fit.index = Xk * b;
  fit.phat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (link == Link::linear) {
      fit.phat[i] = fit.index[i];
      if (fit.index[i] <= 0.0 || fit.index[i] >= 1.0) ++fit.outside_unit;
    } else {
      fit.phat[i] = probability(link, fit.index[i]);
    }
  }
  return fit;
}

std::pair<double, std::size_t> ipw_late_point(const Vector& y, const Vector& d, const Vector& z, const Vector& phat,
                                              TrimBounds trim) {
  double w1 = 0.0, w0 = 0.0, y1 = 0.0, y0 = 0.0, d1 = 0.0, d0 = 0.0;
  std::size_t kept = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = phat[i];
    if (!(p >= trim.lo && p <= trim.hi) || p <= 0.0 || p >= 1.0) continue;
    ++kept;
    if (z[i] == 1.0) {
      const double w = 1.0 / p;
      w1 += w;
      y1 += w * y[i];
      d1 += w * d[i];
    } else {
      const double w = 1.0 / (1.0 - p);
      w0 += w;
      y0 += w * y[i];
      d0 += w * d[i];
    }
  }
  if (w1 == 0.0 || w0 == 0.0) throw TrimError("an instrument arm is empty after trimming");
  const double den = d1 / w1 - d0 / w0;
  if (den == 0.0) throw IdentificationError("weighted first stage is zero");
  return {(y1 / w1 - y0 / w0) / den, kept};
}

EstimateReport ipw_late(const Dataset& ds, const PropensityFit& pf, const IpwOptions& opts) {
  const auto& trim = opts.trim;
  if (!(trim.lo >= 0.0 && trim.lo < trim.hi && trim.hi <= 1.0)) {
    throw ConfigError(fmt::format("invalid trim bounds [{}, {}]", trim.lo, trim.hi));
  }
  if (pf.phat.size() != static_cast<Eigen::Index>(ds.n())) {
    throw DomainError("propensity scores do not match the dataset");
  }
  const auto& y = ds.y();
  const auto& d = ds.d();
  const auto& z = ds.z();
  const auto& p = pf.phat;
  const auto [theta, kept] = ipw_late_point(y, d, z, p, trim);

  // Normalized arm means and the influence function with phat held fixed.
  const auto n = static_cast<Eigen::Index>(ds.n());
  std::vector<Eigen::Index> rows;
  double m1 = 0.0, m0 = 0.0, sy1 = 0.0, sy0 = 0.0, sd1 = 0.0, sd0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(p[i] >= trim.lo && p[i] <= trim.hi) || p[i] <= 0.0 || p[i] >= 1.0) continue;
    rows.push_back(i);
    if (z[i] == 1.0) {
      m1 += 1.0 / p[i];
      sy1 += y[i] / p[i];
      sd1 += d[i] / p[i];
    } else {
      m0 += 1.0 / (1.0 - p[i]);
      sy0 += y[i] / (1.0 - p[i]);
      sd0 += d[i] / (1.0 - p[i]);
    }
  }
  const double mu1y = sy1 / m1, mu0y = sy0 / m0, mu1d = sd1 / m1, mu0d = sd0 / m0;
  const double den = mu1d - mu0d;
  const auto m = static_cast<double>(rows.size());
  m1 /= m;
  m0 /= m;
  Vector psi(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const auto i = rows[a];
    double v;
    if (z[i] == 1.0) {
      v = ((y[i] - mu1y) - theta * (d[i] - mu1d)) / (p[i] * m1);
    } else {
      v = -((y[i] - mu0y) - theta * (d[i] - mu0d)) / ((1.0 - p[i]) * m0);
    }
    psi[static_cast<Eigen::Index>(a)] = v / den;
  }

  EstimateReport rep;
  rep.estimand = Estimand::beta_late_ipw;
  rep.estimate = theta;
  rep.n_used = kept;
  rep.cells_used = 0;
  rep.metadata["link"] = to_string(pf.link);
  rep.metadata["trim"] = fmt::format("[{}, {}]", trim.lo, trim.hi);
  rep.metadata["trimmed_rows"] = fmt::format("{}", ds.n() - kept);

  if (opts.bootstrap_reps == 0) {
    double var = 0.0;
    if (ds.cluster()) {
      std::unordered_map<std::int64_t, double> sums;
      for (std::size_t a = 0; a < rows.size(); ++a) {
        sums[(*ds.cluster())[static_cast<std::size_t>(rows[a])]] += psi[static_cast<Eigen::Index>(a)];
      }
      const auto g = static_cast<double>(sums.size());
      for (const auto& [id, s] : sums) var += s * s;
      var *= g > 1.0 ? g / (g - 1.0) / (m * m) : kNaN;
      rep.se_type = "cluster delta method (propensity treated as known)";
    } else {
      var = psi.squaredNorm() / (m * m);
      rep.se_type = "delta method (propensity treated as known)";
    }
    rep.se = std::sqrt(var);
    return rep;
  }

  // Nonparametric bootstrap over rows, refitting the propensity model.
  Matrix X = pf.design;
  std::vector<double> draws;
  draws.reserve(opts.bootstrap_reps);
  std::size_t failed = 0;
  Vector yb(n), db(n), zb(n);
  Matrix Xb(n, X.cols());
  for (std::size_t r = 0; r < opts.bootstrap_reps; ++r) {
    Rng rng(opts.seed, r);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto src = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      yb[i] = y[src];
      db[i] = d[src];
      zb[i] = z[src];
      Xb.row(i) = X.row(src);
    }
    try {
      const auto refit = fit_binary_index(zb, Xb, pf.link);
      draws.push_back(ipw_late_point(yb, db, zb, refit.phat, trim).first);
    } catch (const DomainError&) {
      ++failed;
    }
  }
  if (draws.size() < 2) throw IdentificationError("bootstrap produced fewer than two usable replications");
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  double ss = 0.0;
  for (double v : draws) ss += (v - mean) * (v - mean);
  rep.se = std::sqrt(ss / static_cast<double>(draws.size() - 1));
  rep.se_type = "bootstrap (propensity refit per draw)";
  rep.metadata["bootstrap_reps"] = fmt::format("{}", opts.bootstrap_reps);
  rep.metadata["bootstrap_failed"] = fmt::format("{}", failed);
  rep.metadata["seed"] = fmt::format("{}", opts.seed);
  return rep;
}

}  // namespace ivlate
