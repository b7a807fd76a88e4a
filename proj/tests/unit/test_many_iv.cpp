#include <doctest.h>

#include <numeric>

#include "ivlate/errors.hpp"
#include "ivlate/estimators.hpp"
#include "ivlate/many_iv.hpp"
#include "fixtures.hpp"

using namespace ivlate;

namespace {

struct Design {
  Vector y, d;
  Matrix X, Z;
};

// Cell dummies X and Z x dummies, from a random saturated sample.
Design interacted(const Dataset& ds, const CellTable& ct) {
  Design out;
  const auto rows = ct.retained_rows();
  const auto cells = ct.retained();
  out.X = cell_dummies(ct, rows, cells);
  Vector z(static_cast<Eigen::Index>(rows.size()));
  out.y.resize(z.size());
  out.d.resize(z.size());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const auto i = static_cast<Eigen::Index>(rows[a]);
    z[static_cast<Eigen::Index>(a)] = ds.z()[i];
    out.y[static_cast<Eigen::Index>(a)] = ds.y()[i];
    out.d[static_cast<Eigen::Index>(a)] = ds.d()[i];
  }
  out.Z = out.X.array().colwise() * z.array();
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

TEST_CASE("interacted 2SLS on the fixture") {
  const auto ds = fixture::three_wave();
  const auto ct = build_cells(ds, {1, 1});
  const auto fit = many_tsls(ds, ct);
  CHECK(std::abs(fit.estimate - 2.268) < 5e-4);
  CHECK(fit.K == 3);
  CHECK(fit.L == 3);
  CHECK(fit.leverage_max == doctest::Approx(1.0));
}

TEST_CASE("one instrument: interacted 2SLS is plain IV") {
  Rng rng(61);
  const auto ds = fixture::random_saturated(rng, 1, 500);
  const auto ct = build_cells(ds);
  CHECK(many_tsls(ds, ct).estimate == doctest::Approx(estimate_beta_iv(ds, ct).estimate).epsilon(1e-12));
  CHECK(many_tsls(ds, ct).K == 1);
}

TEST_CASE("interacted 2SLS matches the dense oracle") {
  Rng rng(62);
  for (int rep = 0; rep < 20; ++rep) {
    const auto ds = fixture::random_saturated(rng, 2 + rng.below(5), 150 + rng.below(50));
    const auto ct = build_cells(ds);
    const auto des = interacted(ds, ct);
    const auto ref = oracle::tsls(des.y, des.X, des.d, des.Z);
    const auto fit = many_tsls(ds, ct);
    CHECK(std::abs(fit.estimate - ref.coef[des.X.cols()]) < 1e-8);
    CHECK(std::abs(fit.se - std::sqrt(ref.vcov(des.X.cols(), des.X.cols()))) < 1e-8);
  }
}

TEST_CASE("jackknife closed forms match drop-one refits") {
  Rng rng(63);
  for (int rep = 0; rep < 10; ++rep) {
    const auto ds = fixture::random_saturated(rng, 2 + rng.below(4), 100 + rng.below(100));
    const auto ct = build_cells(ds);
    const auto des = interacted(ds, ct);
    const Matrix W = hcat(des.X, des.Z);
    const Vector loo_w = oracle::loo_refit(W, des.d);
    const Vector loo_x = oracle::loo_refit(des.X, des.d);
    CHECK((loo_fitted(W, des.d) - loo_w).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((loo_fitted(des.X, des.d) - loo_x).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(jive(ds, ct).estimate - oracle::iv_coef(des.y, des.X, des.d, loo_w)) < 1e-6);
    CHECK(std::abs(ujive(ds, ct).estimate - oracle::iv_coef(des.y, des.X, des.d, loo_w - loo_x)) < 1e-6);
  }
}

TEST_CASE("jackknife on general dense designs") {
  Rng rng(64);
  const Eigen::Index n = 120;
  Matrix X(n, 3);
  X << Vector::Ones(n), oracle::random_matrix(rng, n, 2);
  const Matrix Z = oracle::random_matrix(rng, n, 5);
  const Vector e = oracle::random_vector(rng, n);
  const Vector d = Z.rowwise().sum() * 0.3 + e;
  const Vector y = d + X.col(1) + e;
  const Vector loo_w = oracle::loo_refit(hcat(X, Z), d);
  const Vector loo_x = oracle::loo_refit(X, d);
  CHECK(std::abs(jive(y, X, d, Z).estimate - oracle::iv_coef(y, X, d, loo_w)) < 1e-6);
  CHECK(std::abs(ujive(y, X, d, Z).estimate - oracle::iv_coef(y, X, d, loo_w - loo_x)) < 1e-6);
}

TEST_CASE("intercept-only covariates: UJIVE instrument is the JIVE instrument minus the leave-one-out mean") {
  Rng rng(65);
  const Eigen::Index n = 150;
  const Matrix X = Matrix::Ones(n, 1);
  const Vector z = oracle::random_binary(rng, n, 0.5);
  Vector d(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d[i] = rng.bernoulli(0.2 + 0.5 * z[i]) ? 1 : 0;
    y[i] = 2 * d[i] + rng.normal();
  }
  Vector loo_mean(n);
  for (Eigen::Index i = 0; i < n; ++i) loo_mean[i] = (d.sum() - d[i]) / static_cast<double>(n - 1);
  const Vector jive_inst = loo_fitted(hcat(X, z), d);
  const Vector ujive_inst = jive_inst - loo_fitted(X, d);
  CHECK((ujive_inst - (jive_inst - loo_mean)).cwiseAbs().maxCoeff() < 1e-12);
  const double j = jive(y, X, d, z).estimate;
  const double u = ujive(y, X, d, z).estimate;
  CHECK(std::abs(j - u) < 0.05 * std::abs(j));
}

TEST_CASE("singleton instrument arm triggers the leverage guard") {
  const auto ds = fixture::three_wave();
  const auto ct = build_cells(ds, {1, 1});
  try {
    jive(ds, ct);
    FAIL("expected a leverage error");
  } catch (const LeverageError& e) {
    CHECK(std::string(e.what()).find("observation") != std::string::npos);
    CHECK(std::string(e.what()).find("minimum arm size") != std::string::npos);
  }
  CHECK_THROWS_AS(ujive(ds, ct), LeverageError);
}

TEST_CASE("strong single instrument: JIVE and 2SLS agree") {
  Rng rng(66);
  const Eigen::Index n = 20000;
  const Vector z = oracle::random_binary(rng, n, 0.5);
  Vector d(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.normal();
    d[i] = (0.8 * z[i] + 0.3 * u + 0.3 * rng.normal()) > 0.4 ? 1 : 0;
    y[i] = 1.5 * d[i] + u;
  }
  const Matrix X = Matrix::Ones(n, 1);
  const double t = many_tsls(y, X, d, z).estimate;
  CHECK(std::abs(jive(y, X, d, z).estimate - t) < 0.01 * std::abs(t));
  CHECK(std::abs(ujive(y, X, d, z).estimate - t) < 0.01 * std::abs(t));
}

TEST_CASE("jackknife gap shrinks as the sample grows") {
  Rng rng(67);
  auto spec = oracle::random_spec(rng, 4);
  double last = 1e300;
  double total = 0;
  for (std::size_t n : {500, 2000, 8000}) {
    double gap = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto ds = generate(spec, n, 100 + s).data;
      const auto ct = build_cells(ds);
      gap += std::abs(jive(ds, ct).estimate - many_tsls(ds, ct).estimate);
    }
    total += gap;
    CHECK(gap < last * 1.2);
    last = gap;
  }
  CHECK(last < total / 3);
}

TEST_CASE("estimates are invariant to row order") {
  Rng rng(68);
  const auto ds = fixture::random_saturated(rng, 5, 600);
  std::vector<std::size_t> perm(ds.n());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const auto shuffled = ds.subset(perm);
  const auto ct = build_cells(ds);
  const auto ct2 = build_cells(shuffled);
  CHECK(jive(ds, ct).estimate == doctest::Approx(jive(shuffled, ct2).estimate).epsilon(1e-10));
  CHECK(ujive(ds, ct).estimate == doctest::Approx(ujive(shuffled, ct2).estimate).epsilon(1e-10));
  CHECK(many_tsls(ds, ct).estimate == doctest::Approx(many_tsls(shuffled, ct2).estimate).epsilon(1e-10));
}

TEST_CASE("diagnostics") {
  Rng rng(69);
  const auto ds = fixture::random_saturated(rng, 6, 900);
  const auto ct = build_cells(ds);
  const auto fit = ujive(ds, ct);
  CHECK(fit.K == ct.retained().size());
  CHECK(fit.L == ct.retained().size());
  CHECK(fit.leverage_max > 0);
  CHECK(fit.leverage_max < 1);
  CHECK(fit.se > 0);
  CHECK(std::string(to_string(fit.estimator)) == "UJIVE");
}
