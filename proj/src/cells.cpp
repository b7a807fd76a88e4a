#include "ivlate/cells.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "ivlate/errors.hpp"

namespace ivlate {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json nan_to_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::too_small: return "too_small";
    case CellStatus::thin_arm: return "thin_arm";
    case CellStatus::zero_first_stage: return "zero_first_stage";
  }
  return "unknown";
}

std::vector<std::size_t> CellTable::retained() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (!cells[j].degenerate()) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> CellTable::supported() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (cells[j].supported()) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> CellTable::retained_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(assignment.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (!cells[assignment[i]].degenerate()) rows.push_back(i);
  }
  return rows;
}

CellTable build_cells(const Dataset& ds, CellOptions options) {
  if (options.min_arm_size < 1) throw ConfigError("min_arm_size must be at least 1");
  CellTable ct;
  ct.n = ds.n();
  ct.options = options;

  // Distinct tuples, ordered by covariate values then by key text.
  std::map<std::string, std::size_t> first_row;
  const auto& keys = ds.cell_keys();
  for (std::size_t i = 0; i < keys.size(); ++i) first_row.emplace(keys[i], i);
  std::vector<std::pair<std::vector<double>, std::string>> order;
  order.reserve(first_row.size());
  for (const auto& [key, row] : first_row) {
    const auto r = static_cast<Eigen::Index>(row);
    std::vector<double> values(ds.x().cols());
    for (Eigen::Index c = 0; c < ds.x().cols(); ++c) values[static_cast<std::size_t>(c)] = ds.x()(r, c);
    order.emplace_back(std::move(values), key);
  }
  std::sort(order.begin(), order.end());
  std::map<std::string, std::size_t> index;
  ct.cells.resize(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    ct.cells[j].values = order[j].first;
    ct.cells[j].key = order[j].second;
    index.emplace(order[j].second, j);
  }

  std::vector<double> sy1(ct.J(), 0.0), sy0(ct.J(), 0.0), sd1(ct.J(), 0.0), sd0(ct.J(), 0.0);
  ct.assignment.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const std::size_t j = index.at(keys[i]);
    ct.assignment[i] = j;
    auto& cell = ct.cells[j];
    const auto r = static_cast<Eigen::Index>(i);
    ++cell.n;
    if (ds.z()[r] == 1.0) {
      ++cell.n1;
      sy1[j] += ds.y()[r];
      sd1[j] += ds.d()[r];
    } else {
      ++cell.n0;
      sy0[j] += ds.y()[r];
      sd0[j] += ds.d()[r];
    }
  }

  for (std::size_t j = 0; j < ct.J(); ++j) {
    auto& c = ct.cells[j];
    c.p = static_cast<double>(c.n) / static_cast<double>(ct.n);
    c.q = static_cast<double>(c.n1) / static_cast<double>(c.n);
    c.var_z = c.q * (1.0 - c.q);
    c.mean_y1 = c.n1 > 0 ? sy1[j] / static_cast<double>(c.n1) : kNaN;
    c.mean_d1 = c.n1 > 0 ? sd1[j] / static_cast<double>(c.n1) : kNaN;
    c.mean_y0 = c.n0 > 0 ? sy0[j] / static_cast<double>(c.n0) : kNaN;
    c.mean_d0 = c.n0 > 0 ? sd0[j] / static_cast<double>(c.n0) : kNaN;
    c.pi = (c.n1 > 0 && c.n0 > 0) ? c.mean_d1 - c.mean_d0 : kNaN;
    if (c.n < options.min_cell_size) {
      c.status = CellStatus::too_small;
    } else if (c.n1 < options.min_arm_size || c.n0 < options.min_arm_size) {
      c.status = CellStatus::thin_arm;
    } else if (c.pi == 0.0) {
      c.status = CellStatus::zero_first_stage;
    } else {
      c.status = CellStatus::ok;
    }
    c.tau = c.degenerate() ? kNaN : (c.mean_y1 - c.mean_y0) / c.pi;
  }

  if (ct.supported().empty()) {
    throw IdentificationError("no covariate cell contains both instrument arms at the required size");
  }
  if (2 * ct.J() > ct.n) {
    ct.warnings.push_back(fmt::format("{} cells for {} observations; covariates may not be discrete", ct.J(), ct.n));
  }
  return ct;
}

CellStatsTable cell_stats_table(const CellTable& ct, const WeightTable* weights) {
  CellStatsTable table;
  table.rows.reserve(ct.J());
  for (const auto& c : ct.cells) {
    table.rows.push_back(CellStatsRow{c.key, c.n, c.p, c.var_z, c.pi, c.tau, to_string(c.status), {}, {}, {}});
  }
  if (weights != nullptr) {
    for (const auto& w : weights->rows) {
      auto& row = table.rows.at(w.cell);
      row.w_late = w.w_late;
      row.w_iv = w.w_iv;
      row.w_ai = w.w_ai;
    }
  }
  return table;
}

std::string CellStatsTable::to_text() const {
  auto num = [](double v) { return std::isnan(v) ? std::string("NA") : fmt::format("{:.3f}", v); };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("-"); };
  std::size_t key_width = 4;
  for (const auto& r : rows) key_width = std::max(key_width, r.cell.size());
  std::string out = fmt::format("{:<{}} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}  {}\n", "cell", key_width,
                                "n", "p", "Var(Z)", "pi", "w_LATE", "w_IV", "w_AI", "tau", "status");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}  {}\n", r.cell, key_width, r.n,
                       num(r.p), num(r.var_z), num(r.pi), opt(r.w_late), opt(r.w_iv), opt(r.w_ai), num(r.tau),
                       r.status);
  }
  return out;
}

nlohmann::json CellStatsTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"cell", r.cell},      {"n", r.n},
                     {"p", r.p},            {"var_z", r.var_z},
                     {"pi", nan_to_null(r.pi)}, {"tau", nan_to_null(r.tau)},
                     {"status", r.status}};
    if (r.w_late) j["w_late"] = nan_to_null(*r.w_late);
    if (r.w_iv) j["w_iv"] = nan_to_null(*r.w_iv);
    if (r.w_ai) j["w_ai"] = nan_to_null(*r.w_ai);
    arr.push_back(std::move(j));
  }
  return arr;
}

CellStatsTable CellStatsTable::from_json(const nlohmann::json& j) {
  CellStatsTable table;
  for (const auto& r : j) {
    CellStatsRow row;
    row.cell = r.at("cell").get<std::string>();
    row.n = r.at("n").get<std::size_t>();
    row.p = r.at("p").get<double>();
    row.var_z = r.at("var_z").get<double>();
    row.pi = number_or_nan(r.at("pi"));
    row.tau = number_or_nan(r.at("tau"));
    row.status = r.at("status").get<std::string>();
    if (r.contains("w_late")) row.w_late = number_or_nan(r.at("w_late"));
    if (r.contains("w_iv")) row.w_iv = number_or_nan(r.at("w_iv"));
    if (r.contains("w_ai")) row.w_ai = number_or_nan(r.at("w_ai"));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace ivlate
