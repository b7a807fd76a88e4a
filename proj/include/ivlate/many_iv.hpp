#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "ivlate/cells.hpp"
#include "ivlate/dataset.hpp"
#include "ivlate/regression.hpp"

namespace ivlate {

enum class ManyIVEstimator { tsls, jive, ujive };

const char* to_string(ManyIVEstimator e);

struct ManyIVFit {
  ManyIVEstimator estimator = ManyIVEstimator::tsls;
  double estimate = 0.0;
  double se = 0.0;
  std::string se_type;
  std::size_t K = 0;          // excluded instruments
  std::size_t L = 0;          // exogenous columns
  std::size_t n_used = 0;
  double leverage_max = 0.0;  // largest hat diagonal met by a leave-one-out step
};

// Leave-one-out fitted values (W_i'b - h_i v_i) / (1 - h_i) of v regressed on
// W. Throws LeverageError when some h_i exceeds 1 - 1e-8; row labels in the
// message come from `row_ids` when given.
Vector loo_fitted(const Matrix& W, const Vector& v, double* leverage_max = nullptr,
                  std::span<const std::size_t> row_ids = {});

// Matrix forms: outcome y, exogenous X, endogenous d, excluded instruments Z.
ManyIVFit many_tsls(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se = SeType::hc1,
                    std::span<const std::int64_t> cluster = {});
ManyIVFit jive(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se = SeType::hc1,
               std::span<const std::int64_t> cluster = {}, std::span<const std::size_t> row_ids = {});
ManyIVFit ujive(const Vector& y, const Matrix& X, const Vector& d, const Matrix& Z, SeType se = SeType::hc1,
                std::span<const std::int64_t> cluster = {}, std::span<const std::size_t> row_ids = {});

// Interacted specification over the non-degenerate cells: X = cell dummies,
// Z = instrument x cell dummies.
ManyIVFit many_tsls(const Dataset& ds, const CellTable& ct);
ManyIVFit jive(const Dataset& ds, const CellTable& ct);
ManyIVFit ujive(const Dataset& ds, const CellTable& ct);

}  // namespace ivlate
