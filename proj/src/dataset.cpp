#include "ivlate/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ivlate/errors.hpp"

namespace ivlate {
namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

// "0"/"1"/"0.0"/"1.0" only.
std::optional<double> parse_binary(std::string_view s) {
  if (s == "0" || s == "0.0") return 0.0;
  if (s == "1" || s == "1.0") return 1.0;
  return std::nullopt;
}

std::string key_from_row(const Matrix& x, Eigen::Index i) {
  std::string key;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (j > 0) key += '|';
    key += fmt::format("{}", x(i, j));
  }
  return key;
}

}  // namespace

void ColumnMap::check() const {
  if (outcome.empty()) throw ConfigError("column map: outcome column not set");
  if (treatment.empty()) throw ConfigError("column map: treatment column not set");
  if (instrument.empty()) throw ConfigError("column map: instrument column not set");
  std::set<std::string> seen;
  auto claim = [&](const std::string& name) {
    if (!seen.insert(name).second) {
      throw ConfigError(fmt::format("column map: column '{}' assigned to more than one role", name));
    }
  };
  claim(outcome);
  claim(treatment);
  claim(instrument);
  for (const auto& c : covariates) claim(c);
  if (cluster) claim(*cluster);
}

ColumnMap load_column_map(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ConfigError(fmt::format("cannot open column map '{}'", json_path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("column map '{}': {}", json_path.string(), e.what()));
  }
  ColumnMap map;
  try {
    map.outcome = j.at("outcome").get<std::string>();
    map.treatment = j.at("treatment").get<std::string>();
    map.instrument = j.at("instrument").get<std::string>();
    if (j.contains("covariates")) map.covariates = j.at("covariates").get<std::vector<std::string>>();
    if (j.contains("cluster") && !j.at("cluster").is_null()) map.cluster = j.at("cluster").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("column map '{}': {}", json_path.string(), e.what()));
  }
  map.check();
  return map;
}

Dataset::Dataset(Vector y, Vector d, Vector z, Matrix x, std::vector<std::string> covariate_names,
                 std::optional<std::vector<std::int64_t>> cluster, std::vector<std::string> cell_keys,
                 IngestStats stats)
    : y_(std::move(y)),
      d_(std::move(d)),
      z_(std::move(z)),
      x_(std::move(x)),
      covariate_names_(std::move(covariate_names)),
      cluster_(std::move(cluster)),
      cell_keys_(std::move(cell_keys)),
      stats_(stats) {
  const auto n = y_.size();
  if (n == 0) throw EmptyDataError("dataset has no usable rows");
  if (d_.size() != n || z_.size() != n || x_.rows() != n) {
    throw DomainError("dataset columns have inconsistent lengths");
  }
  if (n < 2) throw DomainError("dataset needs at least two rows");
  if (static_cast<std::size_t>(x_.cols()) != covariate_names_.size()) {
    throw DomainError("covariate names do not match covariate matrix width");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d_[i] != 0.0 && d_[i] != 1.0) throw DomainError(fmt::format("treatment is not binary at row {}", i));
    if (z_[i] != 0.0 && z_[i] != 1.0) throw DomainError(fmt::format("instrument is not binary at row {}", i));
  }
  if (cluster_ && static_cast<Eigen::Index>(cluster_->size()) != n) {
    throw DomainError("cluster labels have inconsistent length");
  }
  if (cell_keys_.empty()) {
    cell_keys_.reserve(n);
    for (Eigen::Index i = 0; i < n; ++i) cell_keys_.push_back(key_from_row(x_, i));
  } else if (static_cast<Eigen::Index>(cell_keys_.size()) != n) {
    throw DomainError("cell keys have inconsistent length");
  }
  if (stats_.raw_rows == 0) stats_.raw_rows = static_cast<std::size_t>(n);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Vector y(m), d(m), z(m);
  Matrix x(m, x_.cols());
  std::vector<std::string> keys;
  keys.reserve(rows.size());
  std::optional<std::vector<std::int64_t>> cl;
  if (cluster_) cl.emplace().reserve(rows.size());
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    y[r] = y_[i];
    d[r] = d_[i];
    z[r] = z_[i];
    x.row(r) = x_.row(i);
    keys.push_back(cell_keys_[static_cast<std::size_t>(i)]);
    if (cl) cl->push_back((*cluster_)[static_cast<std::size_t>(i)]);
  }
  return Dataset(std::move(y), std::move(d), std::move(z), std::move(x), covariate_names_, std::move(cl),
                 std::move(keys), IngestStats{rows.size(), 0});
}

Dataset Dataset::with_outcome(Vector y) const {
  return Dataset(std::move(y), d_, z_, x_, covariate_names_, cluster_, cell_keys_, stats_);
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !record.empty()) {
          record.push_back(std::move(field));
          records.push_back(std::move(record));
        }
        field.clear();
        record.clear();
        field_started = false;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (in_quotes) throw ConfigError("CSV input ends inside a quoted field");
  if (field_started || !field.empty() || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

Dataset parse_dataset(std::string_view csv_text, const ColumnMap& map) {
  map.check();
  const auto records = parse_csv(csv_text);
  if (records.empty()) throw ConfigError("CSV input has no header row");

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < records[0].size(); ++c) index.emplace(std::string(trim(records[0][c])), c);
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError(fmt::format("column '{}' not found in input header", name));
    return it->second;
  };
  const std::size_t cy = column(map.outcome);
  const std::size_t cd = column(map.treatment);
  const std::size_t cz = column(map.instrument);
  std::vector<std::size_t> cx;
  for (const auto& name : map.covariates) cx.push_back(column(name));
  const std::optional<std::size_t> cc = map.cluster ? std::optional(column(*map.cluster)) : std::nullopt;

  std::vector<double> ys, ds, zs, xs;
  std::vector<std::string> keys;
  std::vector<std::string> cluster_text;
  IngestStats stats;
  stats.raw_rows = records.size() - 1;

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto field = [&](std::size_t c) -> std::string_view {
      return c < rec.size() ? trim(rec[c]) : std::string_view{};
    };
    auto binary = [&](std::size_t c, const std::string& name) -> std::optional<double> {
      const auto s = field(c);
      if (is_missing(s)) return std::nullopt;
      auto v = parse_binary(s);
      if (!v) {
        throw DomainError(fmt::format("column '{}' has non-binary value '{}' on data row {}", name, s, r));
      }
      return v;
    };
    const auto d = binary(cd, map.treatment);
    const auto z = binary(cz, map.instrument);
    const auto ys_field = field(cy);
    const auto y = is_missing(ys_field) ? std::nullopt : parse_real(ys_field);
    bool ok = d && z && y;
    std::vector<double> xrow;
    std::string key;
    for (std::size_t j = 0; ok && j < cx.size(); ++j) {
      const auto s = field(cx[j]);
      const auto v = is_missing(s) ? std::nullopt : parse_real(s);
      if (!v) {
        ok = false;
        break;
      }
      xrow.push_back(*v);
      if (j > 0) key += '|';
      key += s;
    }
    std::string_view cl;
    if (ok && cc) {
      cl = field(*cc);
      if (is_missing(cl)) ok = false;
    }
    if (!ok) {
      ++stats.dropped_rows;
      continue;
    }
    ys.push_back(*y);
    ds.push_back(*d);
    zs.push_back(*z);
    xs.insert(xs.end(), xrow.begin(), xrow.end());
    keys.push_back(std::move(key));
    if (cc) cluster_text.emplace_back(cl);
  }

  const auto n = static_cast<Eigen::Index>(ys.size());
  if (n == 0) throw EmptyDataError("no usable rows after dropping rows with missing values");
  const auto k = static_cast<Eigen::Index>(cx.size());
  Matrix x(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) x(i, j) = xs[static_cast<std::size_t>(i * k + j)];
  }
  std::optional<std::vector<std::int64_t>> cluster;
  if (cc) {
    std::unordered_map<std::string, std::int64_t> ids;
    auto& out = cluster.emplace();
    out.reserve(cluster_text.size());
    for (const auto& label : cluster_text) {
      auto [it, inserted] = ids.emplace(label, static_cast<std::int64_t>(ids.size()));
      out.push_back(it->second);
    }
  }
  return Dataset(Eigen::Map<Vector>(ys.data(), n), Eigen::Map<Vector>(ds.data(), n),
                 Eigen::Map<Vector>(zs.data(), n), std::move(x), map.covariates, std::move(cluster),
                 std::move(keys), stats);
}

Dataset load_dataset(const std::filesystem::path& path, const ColumnMap& map) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open input file '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), map);
}

ValidationReport validate(const Dataset& ds) {
  ValidationReport report;
  const double zsum = ds.z().sum();
  const double dsum = ds.d().sum();
  const auto n = static_cast<double>(ds.n());
  if (zsum == 0.0 || zsum == n) {
    report.passed = false;
    report.errors.emplace_back("instrument has no variation");
  }
  if (dsum == 0.0 || dsum == n) {
    report.passed = false;
    report.errors.emplace_back("treatment has no variation");
  }
  const auto& x = ds.x();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if ((x.col(j).array() == x(0, j)).all()) {
      report.constant_covariates.push_back(ds.covariate_names()[static_cast<std::size_t>(j)]);
    }
  }
  if (!report.constant_covariates.empty()) {
    std::string list;
    for (const auto& c : report.constant_covariates) list += (list.empty() ? "" : ", ") + c;
    report.warnings.push_back("constant covariate columns: " + list);
  }
  if (ds.ingest().dropped_rows > 0) {
    report.warnings.push_back(fmt::format("{} rows dropped for missing values", ds.ingest().dropped_rows));
  }
  return report;
}

}  // namespace ivlate
