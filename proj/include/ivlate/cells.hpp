#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivlate/dataset.hpp"
#include "ivlate/weights.hpp"

namespace ivlate {

enum class CellStatus {
  ok,
  too_small,         // n_j below the minimum cell size
  thin_arm,          // an instrument arm has fewer than min_arm_size rows
  zero_first_stage,  // both arms present but pi_j == 0
};

const char* to_string(CellStatus s);

struct Cell {
  std::string key;
  std::vector<double> values;  // covariate tuple
  std::size_t n = 0;
  std::size_t n1 = 0;  // Z = 1 arm
  std::size_t n0 = 0;  // Z = 0 arm
  double p = 0.0;
  double q = 0.0;      // mean of Z in the cell
  double var_z = 0.0;  // q (1 - q), population formula
  double mean_y1 = 0.0, mean_y0 = 0.0;
  double mean_d1 = 0.0, mean_d0 = 0.0;
  double pi = 0.0;     // first stage mean(D|Z=1) - mean(D|Z=0); NaN without both arms
  double tau = 0.0;    // within-cell Wald ratio; NaN when degenerate
  CellStatus status = CellStatus::ok;

  bool degenerate() const noexcept { return status != CellStatus::ok; }
  // Both arms meet the size screen; validity tests use these cells.
  bool supported() const noexcept { return status == CellStatus::ok || status == CellStatus::zero_first_stage; }
};

struct CellOptions {
  std::size_t min_cell_size = 1;
  std::size_t min_arm_size = 3;
};

// Saturated partition of the sample by covariate tuple.
struct CellTable {
  std::vector<std::size_t> assignment;  // cell index of each observation
  std::vector<Cell> cells;              // ordered by covariate values
  std::size_t n = 0;
  CellOptions options;
  std::vector<std::string> warnings;

  std::size_t J() const noexcept { return cells.size(); }
  std::vector<std::size_t> retained() const;  // indices of non-degenerate cells
  std::vector<std::size_t> supported() const;
  // Observation indices belonging to non-degenerate cells, in row order.
  std::vector<std::size_t> retained_rows() const;
};

// Throws IdentificationError when no cell has both instrument arms.
CellTable build_cells(const Dataset& ds, CellOptions options = {});

struct CellStatsRow {
  std::string cell;
  std::size_t n = 0;
  double p = 0.0;
  double var_z = 0.0;
  double pi = 0.0;
  double tau = 0.0;
  std::string status;
  std::optional<double> w_late, w_iv, w_ai;
};

struct CellStatsTable {
  std::vector<CellStatsRow> rows;

  // Aligned text, three decimals.
  std::string to_text() const;
  // Array of per-cell records at full precision.
  nlohmann::json to_json() const;
  static CellStatsTable from_json(const nlohmann::json& j);
};

CellStatsTable cell_stats_table(const CellTable& ct, const WeightTable* weights = nullptr);

}  // namespace ivlate
