#include <doctest.h>

#include "ivlate/errors.hpp"
#include "ivlate/estimators.hpp"
#include "ivlate/propensity.hpp"
#include "fixtures.hpp"

using namespace ivlate;

namespace {

struct LogitSample {
  Vector z;
  Matrix X;  // with intercept
};

LogitSample logit_sample(Rng& rng, Eigen::Index n, double b0, double b1) {
  LogitSample s{Vector(n), Matrix(n, 2)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = rng.normal();
    s.X(i, 0) = 1.0;
    s.X(i, 1) = x;
    s.z[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-(b0 + b1 * x)))) ? 1 : 0;
  }
  return s;
}

Matrix dummies_of(const Dataset& ds) {
  const auto ct = build_cells(ds, {1, 1});
  std::vector<std::size_t> rows(ds.n()), cells(ct.J());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (std::size_t j = 0; j < cells.size(); ++j) cells[j] = j;
  return cell_dummies(ct, rows, cells);
}

}  // namespace

TEST_CASE("normal CDF accuracy and tails") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-13));
  CHECK(normal_cdf(-3.0) == doctest::Approx(0.0013498980316300946).epsilon(1e-13));
  CHECK(log_normal_cdf(-40.0) == doctest::Approx(-804.6084420137538).epsilon(1e-10));
  CHECK(log_normal_cdf(-20.0) == doctest::Approx(std::log(normal_cdf(-20.0))).epsilon(1e-12));
  CHECK(std::isfinite(log_normal_cdf(-200.0)));
  CHECK(std::abs(log_normal_cdf(-29.999) - log_normal_cdf(-30.001)) < 0.1);
}

TEST_CASE("intercept-only logit reproduces the mean") {
  Rng rng(31);
  const Vector z = oracle::random_binary(rng, 150, 0.3);
  for (auto link : {Link::logit, Link::probit, Link::linear}) {
    const auto fit = fit_binary_index(z, Matrix(150, 0), link);
    CHECK(fit.intercept_added);
    CHECK(fit.converged);
    CHECK((fit.phat.array() - z.mean()).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("perfect separation is reported") {
  Rng rng(32);
  Matrix X(100, 1);
  Vector z(100);
  for (Eigen::Index i = 0; i < 100; ++i) {
    X(i, 0) = rng.normal();
    z[i] = X(i, 0) > 0 ? 1 : 0;
  }
  CHECK_THROWS_AS(fit_binary_index(z, X, Link::logit), SeparationError);
  CHECK_THROWS_AS(fit_binary_index(z, X, Link::probit), SeparationError);
  try {
    fit_binary_index(z, X, Link::logit);
  } catch (const SeparationError& e) {
    CHECK(std::string(e.what()).find("column 1") != std::string::npos);
  }
}

TEST_CASE("constant instrument is rejected") {
  CHECK_THROWS_AS(fit_binary_index(Vector::Ones(10), Matrix::Ones(10, 1), Link::logit), DomainError);
}

TEST_CASE("logit fit agrees with a grid-search likelihood oracle") {
  Rng rng(33);
  const auto s = logit_sample(rng, 200, 0.3, -0.8);
  const auto fit = fit_binary_index(s.z, s.X, Link::logit);
  CHECK_FALSE(fit.intercept_added);
  const double step = 0.01;
  double best = -1e300;
  Vector arg(2);
  for (int a = -200; a <= 200; ++a) {
    for (int b = -200; b <= 200; ++b) {
      Vector beta(2);
      beta << a * step, b * step;
      const double ll = binary_loglik(Link::logit, s.z, s.X, beta);
      if (ll > best) best = ll, arg = beta;
    }
  }
  CHECK(std::abs(fit.coefficients[0] - arg[0]) <= 2 * step);
  CHECK(std::abs(fit.coefficients[1] - arg[1]) <= 2 * step);
  CHECK(fit.loglik >= best);
  CHECK(fit.score_max < 1e-6);
  CHECK(fit.phat.minCoeff() > 0.0);
  CHECK(fit.phat.maxCoeff() < 1.0);
}

TEST_CASE("analytic score and Hessian match central differences") {
  Rng rng(34);
  const auto s = logit_sample(rng, 120, -0.2, 0.7);
  Matrix X(120, 3);
  X << s.X, oracle::random_vector(rng, 120);
  for (auto link : {Link::logit, Link::probit}) {
    for (int point = 0; point < 10; ++point) {
      const Vector b = oracle::random_vector(rng, 3);
      const Vector g = binary_score(link, s.z, X, b);
      const Matrix H = binary_hessian(link, s.z, X, b);
      const double h = 1e-6;
      for (Eigen::Index j = 0; j < 3; ++j) {
        Vector bp = b, bm = b;
        bp[j] += h;
        bm[j] -= h;
        const double fd = (binary_loglik(link, s.z, X, bp) - binary_loglik(link, s.z, X, bm)) / (2 * h);
        CHECK(std::abs(fd - g[j]) <= 1e-5 * std::max(1.0, std::abs(g[j])));
        const Vector gd = (binary_score(link, s.z, X, bp) - binary_score(link, s.z, X, bm)) / (2 * h);
        CHECK((gd - H.col(j)).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, H.col(j).cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("normalized IPW with a saturated propensity model equals the saturated LATE") {
  Rng rng(35);
  for (int rep = 0; rep < 10; ++rep) {
    const auto ds = fixture::random_saturated(rng, 2 + rng.below(6), 500 + rng.below(1000));
    const auto ct = build_cells(ds, {1, 1});
    const double late = estimate_beta_late_saturated(ds, ct).estimate;
    const Matrix D = dummies_of(ds);
    for (auto link : {Link::logit, Link::probit, Link::linear}) {
      const auto pf = fit_binary_index(ds.z(), D, link);
      const auto rep_ipw = ipw_late(ds, pf, {{0.0, 1.0}});
      CHECK(std::abs(rep_ipw.estimate - late) < 1e-8);
    }
  }
}

TEST_CASE("constant propensity gives the unconditional Wald ratio") {
  Rng rng(36);
  const auto ds = fixture::random_saturated(rng, 3, 800);
  const Dataset bare(ds.y(), ds.d(), ds.z(), Matrix(static_cast<Eigen::Index>(ds.n()), 0), {});
  const auto pf = fit_binary_index(ds.z(), Matrix(static_cast<Eigen::Index>(ds.n()), 0), Link::logit);
  const double wald = build_cells(bare).cells[0].tau;
  CHECK(ipw_late(ds, pf).estimate == doctest::Approx(wald).epsilon(1e-10));
}

TEST_CASE("trimming and error conditions") {
  Rng rng(37);
  const auto s = logit_sample(rng, 600, 0.0, 2.5);
  Vector d(600), y(600);
  for (Eigen::Index i = 0; i < 600; ++i) {
    d[i] = rng.bernoulli(0.2 + 0.6 * s.z[i]) ? 1 : 0;
    y[i] = d[i] + rng.normal();
  }
  const Dataset ds(y, d, s.z, s.X.rightCols(1), {"x"});
  const auto pf = fit_binary_index(ds.z(), ds.x(), Link::logit);
  std::size_t last = ds.n() + 1;
  for (double lo : {0.0, 0.02, 0.05, 0.1, 0.2}) {
    const auto rep = ipw_late(ds, pf, {{lo, 1.0 - lo}});
    CHECK(rep.n_used <= last);
    last = rep.n_used;
  }
  CHECK(last < ds.n());
  CHECK_THROWS_AS(ipw_late(ds, pf, {{0.5, 0.4}}), ConfigError);
  CHECK_THROWS_AS(ipw_late(ds, pf, {{0.999, 1.0}}), TrimError);
}

TEST_CASE("logit and probit IPW estimates agree within their standard errors") {
  Rng rng(38);
  const auto s = logit_sample(rng, 3000, 0.2, 0.6);
  Vector d(3000), y(3000);
  for (Eigen::Index i = 0; i < 3000; ++i) {
    d[i] = rng.bernoulli(0.15 + 0.5 * s.z[i] + 0.1 * (s.X(i, 1) > 0)) ? 1 : 0;
    y[i] = 0.5 * s.X(i, 1) + d[i] * (1.0 + 0.5 * s.X(i, 1)) + rng.normal();
  }
  const Dataset ds(y, d, s.z, s.X.rightCols(1), {"x"});
  const auto a = ipw_late(ds, fit_binary_index(ds.z(), ds.x(), Link::logit));
  const auto b = ipw_late(ds, fit_binary_index(ds.z(), ds.x(), Link::probit));
  CHECK(std::abs(a.estimate - b.estimate) <= std::max(a.se, b.se));
}

TEST_CASE("bootstrap standard errors are seeded and reproducible") {
  Rng rng(39);
  const auto s = logit_sample(rng, 300, 0.2, 0.6);
  Vector d(300), y(300);
  for (Eigen::Index i = 0; i < 300; ++i) {
    d[i] = rng.bernoulli(0.2 + 0.6 * s.z[i]) ? 1 : 0;
    y[i] = d[i] + rng.normal();
  }
  const Dataset ds(y, d, s.z, s.X.rightCols(1), {"x"});
  const auto pf = fit_binary_index(ds.z(), ds.x(), Link::logit);
  const auto a = ipw_late(ds, pf, {{}, 50, 7});
  const auto b = ipw_late(ds, pf, {{}, 50, 7});
  const auto c = ipw_late(ds, pf, {{}, 50, 8});
  CHECK(a.se == b.se);
  CHECK(a.se != c.se);
  CHECK(a.se > 0);
  const auto delta = ipw_late(ds, pf);
  CHECK(a.se == doctest::Approx(delta.se).epsilon(0.5));
}

TEST_CASE("linear link flags fitted values outside the unit interval") {
  Rng rng(40);
  const auto s = logit_sample(rng, 400, 0.0, 3.0);
  const auto fit = fit_binary_index(s.z, s.X, Link::linear);
  CHECK(fit.outside_unit > 0);
  CHECK(std::isnan(fit.loglik));
}

TEST_CASE("link names") {
  CHECK(parse_link("probit") == Link::probit);
  CHECK_THROWS_AS(parse_link("cloglog"), ConfigError);
}
