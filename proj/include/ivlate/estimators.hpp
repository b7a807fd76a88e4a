#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivlate/cells.hpp"
#include "ivlate/dataset.hpp"
#include "ivlate/regression.hpp"
#include "ivlate/weights.hpp"

namespace ivlate {

enum class Estimand { beta_iv, beta_ai, beta_late_saturated, beta_late_ipw };

const char* to_string(Estimand e);

struct EstimateReport {
  Estimand estimand = Estimand::beta_iv;
  double estimate = 0.0;
  double se = 0.0;
  std::string se_type;
  std::size_t n_used = 0;
  std::size_t cells_used = 0;
  std::map<std::string, std::string> metadata;
};

struct EstimatorOptions {
  // Unset: cluster-robust when the dataset carries cluster labels, else HC1.
  std::optional<SeType> se;
};

SeType resolve_se_type(const Dataset& ds, const EstimatorOptions& opts);

// Cell dummies (one column per listed cell) for the listed rows.
Matrix cell_dummies(const CellTable& ct, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cells);

// 2SLS of Y on cell dummies and D, instrumented by Z, over non-degenerate cells.
EstimateReport estimate_beta_iv(const Dataset& ds, const CellTable& ct, const EstimatorOptions& opts = {});

// 2SLS of Y on cell dummies and D, instrumented by Z x cell dummies.
EstimateReport estimate_beta_ai(const Dataset& ds, const CellTable& ct, const EstimatorOptions& opts = {});

// Ratio of share-weighted within-cell Z-arm differences of Y and D. The
// standard error comes from the stacked influence function of numerator
// and denominator (clustered when the dataset has cluster labels).
EstimateReport estimate_beta_late_saturated(const Dataset& ds, const CellTable& ct,
                                            const EstimatorOptions& opts = {});

// 2SLS of Y on an intercept, the raw covariates and D, instrumented by Z.
EstimateReport estimate_beta_iv_linear(const Dataset& ds, const EstimatorOptions& opts = {});

// Weights proportional to p*pi (LATE), p*pi*Var(Z) (IV) and p*pi^2*Var(Z) (AI).
WeightTable decompose_weights(const CellTable& ct);

}  // namespace ivlate
