#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivlate/cells.hpp"
#include "ivlate/dataset.hpp"

namespace ivlate {

// Cut points c_0 < ... < c_{m-1} split the real line into m + 1 intervals
// (-inf, c_0), [c_0, c_1), ..., [c_{m-1}, inf). Candidate outcome sets are
// unions of consecutive intervals.
struct OutcomeSetPartition {
  std::vector<double> cut_points;

  void check() const;
  std::size_t intervals() const noexcept { return cut_points.size() + 1; }
  std::size_t locate(double y) const;
  // Union of intervals [first, last) as text.
  std::string describe(std::size_t first, std::size_t last) const;

  // Interior deciles of y, deduplicated.
  static OutcomeSetPartition deciles(const Vector& y);
  // One interval per support point.
  static OutcomeSetPartition support(const Vector& y);
  // Support for outcomes with at most max_support distinct values, else deciles.
  static OutcomeSetPartition automatic(const Vector& y, std::size_t max_support = 10);
};

struct ValidityOptions {
  std::size_t reps = 999;
  std::uint64_t seed = 0;
  double sigma_floor = 1e-6;
};

struct ValidityReport {
  std::string test;  // "BP", "MW" or "FS"
  double statistic = 0.0;
  double p_value = 1.0;
  std::string worst_set;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::size_t moments = 0;
  std::size_t skipped = 0;
  bool conditional = false;
  std::string variant;
};

// Moment inequality on one candidate set, for inspection and tests.
struct MomentValue {
  std::string label;
  double estimate = 0.0;  // sample analogue; nonnegative under validity
  double sigma = 0.0;     // plug-in standard error (before flooring)
};

// Outcome-set inequalities: for every set A and side, the sample analogue of
// P(Y in A, D=1 | Z=1) - P(Y in A, D=1 | Z=0) and
// P(Y in A, D=0 | Z=0) - P(Y in A, D=0 | Z=1), within each supported cell
// when ct is given. Max studentized violation, multiplier bootstrap p-value.
ValidityReport bp_test(const Dataset& ds, const CellTable* ct, const OutcomeSetPartition& partition,
                       const ValidityOptions& opts = {});

// Same inequalities with Y as a conditioning variable: conditional means of
// the inverse-propensity contrast given (cell, Y in partition interval).
ValidityReport mw_test(const Dataset& ds, const CellTable& ct, const OutcomeSetPartition& partition,
                       const ValidityOptions& opts = {});

// Nonnegativity of the within-cell first stage.
ValidityReport first_stage_nonneg_test(const Dataset& ds, const CellTable& ct, const ValidityOptions& opts = {});

// Moment estimates behind bp_test / mw_test, without bootstrapping.
std::vector<MomentValue> bp_moments(const Dataset& ds, const CellTable* ct, const OutcomeSetPartition& partition);
std::vector<MomentValue> mw_moments(const Dataset& ds, const CellTable& ct, const OutcomeSetPartition& partition);

}  // namespace ivlate
