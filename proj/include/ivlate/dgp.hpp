#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivlate/dataset.hpp"
#include "ivlate/weights.hpp"

namespace ivlate {

enum class ComplianceType { always_taker = 0, never_taker = 1, complier = 2, defier = 3 };

const char* to_string(ComplianceType t);

struct SyntheticUnit {
  std::size_t cell = 0;
  ComplianceType ctype = ComplianceType::complier;
  double y1 = 0.0;
  double y0 = 0.0;
  int d1 = 0;
  int d0 = 0;
  int z = 0;
  int d = 0;
  double y = 0.0;  // observed outcome, including any exclusion shift
};

struct CellSpec {
  double share = 1.0;
  double q = 0.5;
  // Indexed by ComplianceType.
  std::array<double, 4> types{0.0, 0.0, 1.0, 0.0};
  std::array<double, 4> mean_y0{};
  std::array<double, 4> mean_y1{};
  std::array<double, 4> noise_y0{};
  std::array<double, 4> noise_y1{};
};

struct DGPSpec {
  std::vector<CellSpec> cells;
  double exclusion_shift = 0.0;  // added to never-takers' observed Y when z = 1
  bool allow_defiers = false;
  std::uint64_t seed = 0;

  std::size_t J() const noexcept { return cells.size(); }
  // Throws ConfigError.
  void check() const;

  static DGPSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

DGPSpec load_dgp_spec(const std::filesystem::path& path);

struct SyntheticSample {
  Dataset data;  // covariate "cell" holds the cell index
  std::vector<SyntheticUnit> units;
};

// Independent draws; unit i uses its own stream of the root seed.
SyntheticSample generate(const DGPSpec& spec, std::size_t n, std::uint64_t seed);

// Deterministic finite population: cell sizes, arm sizes and type counts
// are the largest-remainder roundings of the spec proportions, and outcomes
// sit at their means.
SyntheticSample generate_exact(const DGPSpec& spec, std::size_t n);

// Mean of y1 - y0 over compliers.
double brute_force_late(const std::vector<SyntheticUnit>& units);

// Population weights from the latent table: p_j, net complier share pi_j,
// q_j (1 - q_j) and the cell Wald ratio tau_j.
WeightTable brute_force_weights(const std::vector<SyntheticUnit>& units);

void write_latent_csv(std::ostream& out, const std::vector<SyntheticUnit>& units);
void write_observed_csv(std::ostream& out, const std::vector<SyntheticUnit>& units);

}  // namespace ivlate
