#include <doctest.h>

#include "ivlate/errors.hpp"
#include "ivlate/regression.hpp"
#include "oracles.hpp"

using namespace ivlate;

namespace {

Matrix with_intercept(const Matrix& X) {
  Matrix out(X.rows(), X.cols() + 1);
  out << Vector::Ones(X.rows()), X;
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("noiseless fit recovers coefficients") {
  Rng rng(1);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 25, 3));
  Vector b(4);
  b << 1.5, -2, 0.25, 3;
  const auto fit = ols(X * b, X);
  CHECK(max_abs_diff(fit.coefficients, b) < 1e-10);
  CHECK(fit.residuals.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("intercept-only regression returns the mean") {
  Vector y(5);
  y << 1, 2, 3, 4, 10;
  const auto fit = ols(y, Matrix::Ones(5, 1));
  CHECK(fit.coefficients[0] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("OLS matches the normal-equations oracle on random instances") {
  Rng rng(2);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.below(40));
    const Eigen::Index k = 1 + static_cast<Eigen::Index>(rng.below(5));
    const Matrix X = with_intercept(oracle::random_matrix(rng, n, k));
    const Vector y = oracle::random_vector(rng, n);
    const auto fit = ols(y, X);
    const Vector b = oracle::ols_coef(y, X);
    CHECK(max_abs_diff(fit.coefficients, b) < 1e-8);
    CHECK(max_abs_diff(fit.vcov, oracle::hc1_vcov(X, y - X * b)) < 1e-8);
    CHECK(max_abs_diff(fit.residuals, y - fit.fitted) == 0.0);
    CHECK((X.transpose() * fit.residuals).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, y.norm()));
    CHECK(max_abs_diff(fit.vcov, fit.vcov.transpose()) < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(fit.vcov).eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("refitting on fitted values is idempotent") {
  Rng rng(3);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 40, 3));
  const auto fit = ols(oracle::random_vector(rng, 40), X);
  const auto refit = ols(fit.fitted, X);
  CHECK(max_abs_diff(refit.coefficients, fit.coefficients) < 1e-10);
}

TEST_CASE("collinear columns are flagged, later columns lose") {
  Rng rng(4);
  Matrix X(30, 4);
  X.col(0).setOnes();
  X.col(1) = oracle::random_vector(rng, 30);
  X.col(2) = 2.0 * X.col(1) - X.col(0);
  X.col(3) = oracle::random_vector(rng, 30);
  const auto fit = ols(oracle::random_vector(rng, 30), X);
  CHECK(fit.aliased == std::vector<bool>{false, false, true, false});
  CHECK(std::isnan(fit.coefficients[2]));
  CHECK(std::isnan(fit.se(2)));
  CHECK(fit.rank == 3);
  CHECK(fit.df_resid == 27);
  CHECK(screen_columns(X) == std::vector<Eigen::Index>{0, 1, 3});
}

TEST_CASE("all-zero design is a rank error; empty data is an empty-data error") {
  CHECK_THROWS_AS(ols(Vector::Ones(5), Matrix::Zero(5, 2)), RankError);
  CHECK_THROWS_AS(ols(Vector(0), Matrix(0, 1)), EmptyDataError);
}

TEST_CASE("cluster covariance with singleton clusters equals HC1") {
  Rng rng(5);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 50, 2));
  const Vector y = oracle::random_vector(rng, 50);
  std::vector<std::int64_t> ids(50);
  for (std::size_t i = 0; i < 50; ++i) ids[i] = static_cast<std::int64_t>(i);
  const auto hc1 = ols(y, X, SeType::hc1);
  const auto cl = ols(y, X, SeType::cluster, ids);
  CHECK(max_abs_diff(hc1.vcov, cl.vcov) < 1e-12);
}

TEST_CASE("cluster covariance sums scores within clusters") {
  Rng rng(6);
  const Eigen::Index n = 60;
  const Matrix X = with_intercept(oracle::random_matrix(rng, n, 2));
  const Vector y = oracle::random_vector(rng, n);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i % 7);
  const auto fit = ols(y, X, SeType::cluster, ids);
  const Matrix inv = (X.transpose() * X).inverse();
  Matrix meat = Matrix::Zero(3, 3);
  for (int g = 0; g < 7; ++g) {
    Vector s = Vector::Zero(3);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ids[static_cast<std::size_t>(i)] == g) s += X.row(i).transpose() * fit.residuals[i];
    }
    meat += s * s.transpose();
  }
  const double factor = 7.0 / 6.0 * (n - 1.0) / (n - 3.0);
  CHECK(max_abs_diff(fit.vcov, factor * inv * meat * inv) < 1e-10);
  CHECK_THROWS_AS(ols(y, X, SeType::cluster, std::vector<std::int64_t>(static_cast<std::size_t>(n), 1)), DomainError);
}

TEST_CASE("HC0 and classical variants") {
  Rng rng(7);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 30, 2));
  const Vector y = oracle::random_vector(rng, 30);
  const auto hc0 = ols(y, X, SeType::hc0);
  const auto hc1 = ols(y, X, SeType::hc1);
  CHECK(max_abs_diff(hc0.vcov * (30.0 / 27.0), hc1.vcov) < 1e-12);
  const auto cl = ols(y, X, SeType::classical);
  const Matrix expect = (X.transpose() * X).inverse() * (cl.residuals.squaredNorm() / 27.0);
  CHECK(max_abs_diff(cl.vcov, expect) < 1e-12);
}

TEST_CASE("2SLS without covariates is the Wald ratio") {
  Rng rng(8);
  const Eigen::Index n = 200;
  const Vector z = oracle::random_binary(rng, n, 0.4);
  Vector d(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d[i] = rng.bernoulli(0.2 + 0.5 * z[i]) ? 1 : 0;
    y[i] = 1 + 2 * d[i] + rng.normal();
  }
  double y1 = 0, y0 = 0, d1 = 0, d0 = 0, n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (z[i] == 1) {
      y1 += y[i], d1 += d[i], ++n1;
    } else {
      y0 += y[i], d0 += d[i], ++n0;
    }
  }
  const double wald = (y1 / n1 - y0 / n0) / (d1 / n1 - d0 / n0);
  const auto fit = tsls(y, Matrix::Ones(n, 1), d, z);
  CHECK(std::abs(fit.coefficients[1] - wald) < 1e-10);
}

TEST_CASE("2SLS with the regressor as its own instrument is OLS") {
  Rng rng(9);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 50, 2));
  const Vector d = oracle::random_vector(rng, 50);
  const Vector y = oracle::random_vector(rng, 50);
  Matrix Xd(50, 4);
  Xd << X, d;
  const auto iv = tsls(y, X, d, d);
  const auto ls = ols(y, Xd);
  CHECK(max_abs_diff(iv.coefficients, ls.coefficients) < 1e-10);
  CHECK(max_abs_diff(iv.vcov, ls.vcov) < 1e-10);
}

TEST_CASE("2SLS matches the dense sandwich oracle") {
  Rng rng(10);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index n = 50 + static_cast<Eigen::Index>(rng.below(50));
    const Matrix X = with_intercept(oracle::random_matrix(rng, n, 2));
    const Matrix Z = oracle::random_matrix(rng, n, 1 + static_cast<Eigen::Index>(rng.below(3)));
    const Vector e = oracle::random_vector(rng, n);
    const Vector d = Z.rowwise().sum() + X.col(1) + e;
    const Vector y = 0.5 * d + X.col(2) + e + oracle::random_vector(rng, n);
    const auto fit = tsls(y, X, d, Z);
    const auto ref = oracle::tsls(y, X, d, Z);
    CHECK(max_abs_diff(fit.coefficients, ref.coef) < 1e-8);
    CHECK(max_abs_diff(fit.vcov, ref.vcov) < 1e-8);
  }
}

TEST_CASE("instrument spanned by the exogenous block is an identification error") {
  Rng rng(11);
  const Matrix X = with_intercept(oracle::random_matrix(rng, 40, 1));
  const Vector d = oracle::random_vector(rng, 40);
  CHECK_THROWS_AS(tsls(oracle::random_vector(rng, 40), X, d, Vector(X.col(1) * 3.0)), IdentificationError);
  CHECK_THROWS_AS(tsls(oracle::random_vector(rng, 40), X, d, Matrix(40, 0)), IdentificationError);
}

TEST_CASE("hat diagonals") {
  SUBCASE("intercept column gives 1/n") {
    const Vector h = hat_diagonals(Matrix::Ones(8, 1));
    CHECK((h.array() - 1.0 / 8.0).abs().maxCoeff() < 1e-14);
  }
  SUBCASE("cell dummies give 1/n_j") {
    Matrix X = Matrix::Zero(6, 2);
    X(0, 0) = X(1, 0) = 1;
    for (int i = 2; i < 6; ++i) X(i, 1) = 1;
    const Vector h = hat_diagonals(X);
    CHECK(h[0] == doctest::Approx(0.5));
    CHECK(h[5] == doctest::Approx(0.25));
  }
  SUBCASE("random designs match the dense oracle and sum to the rank") {
    Rng rng(12);
    for (int rep = 0; rep < 100; ++rep) {
      const Matrix X = oracle::random_matrix(rng, 30, 4);
      const Vector h = hat_diagonals(X);
      CHECK(max_abs_diff(h, oracle::hat(X)) < 1e-10);
      CHECK(std::abs(h.sum() - 4.0) < 1e-8);
      CHECK(h.minCoeff() >= 0.0);
      CHECK(h.maxCoeff() <= 1.0 + 1e-12);
    }
  }
  SUBCASE("rank deficiency is an error") {
    Matrix X(10, 2);
    X.col(0).setOnes();
    X.col(1).setConstant(2.0);
    CHECK_THROWS_AS(hat_diagonals(X), RankError);
  }
}

TEST_CASE("SE type names") {
  CHECK(parse_se_type("hc1") == SeType::hc1);
  CHECK(parse_se_type("cluster") == SeType::cluster);
  CHECK_THROWS_AS(parse_se_type("hc9"), ConfigError);
}
