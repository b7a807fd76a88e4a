#pragma once

#include <cstddef>
#include <vector>

namespace ivlate {

// Implicit weight of one covariate cell in each target parameter.
struct CellWeight {
  std::size_t cell = 0;  // index into the CellTable
  double w_late = 0.0;
  double w_iv = 0.0;
  double w_ai = 0.0;
  double tau = 0.0;
};

// Weight decomposition over the non-degenerate cells. A family whose
// normalizer is zero is marked undefined and its weights are NaN.
struct WeightTable {
  std::vector<CellWeight> rows;
  bool late_defined = true;
  bool iv_defined = true;
  bool ai_defined = true;

  double dot_late() const;
  double dot_iv() const;
  double dot_ai() const;
};

}  // namespace ivlate
