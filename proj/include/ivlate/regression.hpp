#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivlate/dataset.hpp"

namespace ivlate {

enum class SeType { classical, hc0, hc1, cluster };

const char* to_string(SeType s);
SeType parse_se_type(const std::string& s);

// Relative tolerance of the column screen: a column whose component
// orthogonal to the preceding kept columns has norm below this fraction of
// its own norm is treated as collinear.
inline constexpr double kPivotTolerance = 1e-10;

struct RegressionFit {
  Vector coefficients;         // NaN for aliased columns
  Vector fitted;
  Vector residuals;            // y - fitted
  Matrix vcov;                 // NaN rows/columns for aliased columns
  std::vector<bool> aliased;   // column dropped by the rank screen
  Eigen::Index df_resid = 0;
  Eigen::Index rank = 0;
  SeType se_type = SeType::hc1;

  double coef(Eigen::Index j) const { return coefficients[j]; }
  double se(Eigen::Index j) const;
};

// Indices of the columns kept by a Gram-Schmidt screen in design order;
// later columns lose ties.
std::vector<Eigen::Index> screen_columns(const Matrix& X, double tol = kPivotTolerance);

// Full-rank least-squares machinery over a fixed design.
class LeastSquares {
 public:
  // X must have full column rank; callers screen first.
  explicit LeastSquares(Matrix X);

  const Matrix& design() const noexcept { return x_; }
  Eigen::Index rank() const noexcept { return x_.cols(); }

  Vector solve(const Vector& y) const;
  // (X'X)^{-1}
  Matrix bread() const;
  // Orthonormal basis of the column space, n x rank.
  Matrix thin_q() const;
  Vector hat_diagonals() const;

 private:
  Matrix x_;
  Eigen::HouseholderQR<Matrix> qr_;
};

// Sandwich covariance bread * meat * bread for scores design_i * resid_i.
Matrix sandwich_vcov(const Matrix& design, const Matrix& bread, const Vector& resid, SeType se,
                     std::span<const std::int64_t> cluster);

RegressionFit ols(const Vector& y, const Matrix& X, SeType se = SeType::hc1,
                  std::span<const std::int64_t> cluster = {});

// Two-stage least squares with one endogenous regressor. Coefficients are
// ordered [X_exog..., D]; the coefficient on D is the last entry.
RegressionFit tsls(const Vector& y, const Matrix& X_exog, const Vector& d, const Matrix& Z,
                   SeType se = SeType::hc1, std::span<const std::int64_t> cluster = {});

// Leverages x_i'(X'X)^{-1}x_i. Throws RankError for rank-deficient X.
Vector hat_diagonals(const Matrix& X);

// Columns of X selected by index.
Matrix select_columns(const Matrix& X, const std::vector<Eigen::Index>& cols);

}  // namespace ivlate
