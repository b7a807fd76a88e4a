#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ivlate {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Which source columns play which role.
struct ColumnMap {
  std::string outcome;
  std::string treatment;
  std::string instrument;
  std::vector<std::string> covariates;
  std::optional<std::string> cluster;

  // Throws ConfigError when a name is empty or two roles share a column.
  void check() const;
};

ColumnMap load_column_map(const std::filesystem::path& json_path);

struct IngestStats {
  std::size_t raw_rows = 0;
  std::size_t dropped_rows = 0;
};

// Observation-level container shared by every estimator. Immutable once
// constructed; the constructor enforces the structural invariants.
class Dataset {
 public:
  // cell_keys may be empty, in which case keys are derived from x.
  Dataset(Vector y, Vector d, Vector z, Matrix x, std::vector<std::string> covariate_names,
          std::optional<std::vector<std::int64_t>> cluster = std::nullopt,
          std::vector<std::string> cell_keys = {}, IngestStats stats = {});

  std::size_t n() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t k() const noexcept { return static_cast<std::size_t>(x_.cols()); }

  const Vector& y() const noexcept { return y_; }
  const Vector& d() const noexcept { return d_; }
  const Vector& z() const noexcept { return z_; }
  const Matrix& x() const noexcept { return x_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const std::optional<std::vector<std::int64_t>>& cluster() const noexcept { return cluster_; }
  // Normalized covariate tuple of each row; rows with equal keys share a cell.
  const std::vector<std::string>& cell_keys() const noexcept { return cell_keys_; }
  const IngestStats& ingest() const noexcept { return stats_; }

  // Rows in the given order (duplicates allowed, as in a bootstrap draw).
  Dataset subset(std::span<const std::size_t> rows) const;

  // Same data with the outcome replaced.
  Dataset with_outcome(Vector y) const;

 private:
  Vector y_;
  Vector d_;
  Vector z_;
  Matrix x_;
  std::vector<std::string> covariate_names_;
  std::optional<std::vector<std::int64_t>> cluster_;
  std::vector<std::string> cell_keys_;
  IngestStats stats_;
};

// Reads a comma-delimited file with a header row. Rows with a missing or
// unparseable mapped field are dropped and counted; binary columns accept
// only "0", "1", "0.0" and "1.0".
Dataset load_dataset(const std::filesystem::path& path, const ColumnMap& map);

// Parses CSV text held in memory; load_dataset delegates here.
Dataset parse_dataset(std::string_view csv_text, const ColumnMap& map);

struct ValidationReport {
  bool passed = true;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::vector<std::string> constant_covariates;
};

ValidationReport validate(const Dataset& ds);

// RFC 4180 record splitting. Exposed for the CLI and tests.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace ivlate
