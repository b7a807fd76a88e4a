#include "ivlate/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ivlate/errors.hpp"
#include "ivlate/rng.hpp"

namespace ivlate {
namespace {

constexpr std::array<ComplianceType, 4> kTypes{ComplianceType::always_taker, ComplianceType::never_taker,
                                               ComplianceType::complier, ComplianceType::defier};

int d1_of(ComplianceType t) { return t == ComplianceType::always_taker || t == ComplianceType::complier; }
int d0_of(ComplianceType t) { return t == ComplianceType::always_taker || t == ComplianceType::defier; }

ComplianceType parse_type(const std::string& s) {
  for (auto t : kTypes) {
    if (s == to_string(t)) return t;
  }
  throw ConfigError(fmt::format("unknown compliance type '{}'", s));
}

// Number per compliance type, or one number for all of them.
std::array<double, 4> per_type(const nlohmann::json& j, const char* field, double fallback) {
  std::array<double, 4> out;
  out.fill(fallback);
  if (!j.contains(field)) return out;
  const auto& v = j.at(field);
  if (v.is_number()) {
    out.fill(v.get<double>());
  } else if (v.is_object()) {
    for (const auto& [k, x] : v.items()) out[static_cast<std::size_t>(parse_type(k))] = x.get<double>();
  } else {
    throw ConfigError(fmt::format("'{}' must be a number or an object keyed by compliance type", field));
  }
  return out;
}

nlohmann::json type_object(const std::array<double, 4>& v) {
  nlohmann::json j = nlohmann::json::object();
  for (auto t : kTypes) j[to_string(t)] = v[static_cast<std::size_t>(t)];
  return j;
}

// Largest-remainder rounding of total * weights; ties go to the lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += out[i];
    rem.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < total && r < rem.size(); ++r, ++used) ++out[rem[r].second];
  return out;
}

SyntheticUnit make_unit(const DGPSpec& spec, std::size_t cell, ComplianceType t, int z, double y0, double y1) {
  SyntheticUnit u;
  u.cell = cell;
  u.ctype = t;
  u.z = z;
  u.d1 = d1_of(t);
  u.d0 = d0_of(t);
  u.y0 = y0;
  u.y1 = y1;
  u.d = z ? u.d1 : u.d0;
  u.y = u.d ? y1 : y0;
  if (t == ComplianceType::never_taker && z == 1) u.y += spec.exclusion_shift;
  return u;
}

SyntheticSample to_sample(std::vector<SyntheticUnit> units) {
  const auto n = static_cast<Eigen::Index>(units.size());
  Vector y(n), d(n), z(n);
  Matrix x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = units[static_cast<std::size_t>(i)];
    y[i] = u.y;
    d[i] = u.d;
    z[i] = u.z;
    x(i, 0) = static_cast<double>(u.cell);
  }
  return {Dataset(std::move(y), std::move(d), std::move(z), std::move(x), {"cell"}), std::move(units)};
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

const char* to_string(ComplianceType t) {
  switch (t) {
    case ComplianceType::always_taker: return "always_taker";
    case ComplianceType::never_taker: return "never_taker";
    case ComplianceType::complier: return "complier";
    case ComplianceType::defier: return "defier";
  }
  return "unknown";
}

void DGPSpec::check() const {
  if (cells.empty()) throw ConfigError("DGP spec has no cells");
  double shares = 0.0;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto& c = cells[j];
    if (!(c.share >= 0.0)) throw ConfigError(fmt::format("cell {}: share must be nonnegative", j));
    shares += c.share;
    if (!(c.q > 0.0 && c.q < 1.0)) throw ConfigError(fmt::format("cell {}: q must lie in (0, 1)", j));
    double types = 0.0;
    for (double t : c.types) {
      if (!(t >= 0.0)) throw ConfigError(fmt::format("cell {}: type probabilities must be nonnegative", j));
      types += t;
    }
    if (std::abs(types - 1.0) > 1e-9) throw ConfigError(fmt::format("cell {}: type probabilities sum to {}", j, types));
    if (!allow_defiers && c.types[static_cast<std::size_t>(ComplianceType::defier)] > 0.0) {
      throw ConfigError(fmt::format("cell {}: defiers present but allow_defiers is false", j));
    }
    for (const auto* arr : {&c.mean_y0, &c.mean_y1, &c.noise_y0, &c.noise_y1}) {
      for (double v : *arr) {
        if (!std::isfinite(v)) throw ConfigError(fmt::format("cell {}: outcome parameters must be finite", j));
      }
    }
    for (const auto* arr : {&c.noise_y0, &c.noise_y1}) {
      for (double v : *arr) {
        if (v < 0.0) throw ConfigError(fmt::format("cell {}: noise scales must be nonnegative", j));
      }
    }
  }
  if (std::abs(shares - 1.0) > 1e-9) throw ConfigError(fmt::format("cell shares sum to {}", shares));
  if (!std::isfinite(exclusion_shift)) throw ConfigError("exclusion_shift must be finite");
}

DGPSpec DGPSpec::from_json(const nlohmann::json& j) {
  try {
    DGPSpec s;
    s.exclusion_shift = j.value("exclusion_shift", 0.0);
    s.allow_defiers = j.value("allow_defiers", false);
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& cj : j.at("cells")) {
      CellSpec c;
      c.share = cj.at("share").get<double>();
      c.q = cj.at("q").get<double>();
      c.types = per_type(cj, "types", 0.0);
      c.mean_y0 = per_type(cj, "mean_y0", 0.0);
      c.mean_y1 = per_type(cj, "mean_y1", 0.0);
      const auto noise = per_type(cj, "noise", 1.0);
      c.noise_y0 = per_type(cj, "noise_y0", 1.0);
      c.noise_y1 = per_type(cj, "noise_y1", 1.0);
      if (cj.contains("noise")) {
        if (!cj.contains("noise_y0")) c.noise_y0 = noise;
        if (!cj.contains("noise_y1")) c.noise_y1 = noise;
      }
      s.cells.push_back(c);
    }
    s.check();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid DGP spec: {}", e.what()));
  }
}

nlohmann::json DGPSpec::to_json() const {
  nlohmann::json j;
  j["exclusion_shift"] = exclusion_shift;
  j["allow_defiers"] = allow_defiers;
  j["seed"] = seed;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"share", c.share},
                          {"q", c.q},
                          {"types", type_object(c.types)},
                          {"mean_y0", type_object(c.mean_y0)},
                          {"mean_y1", type_object(c.mean_y1)},
                          {"noise_y0", type_object(c.noise_y0)},
                          {"noise_y1", type_object(c.noise_y1)}});
  }
  return j;
}

DGPSpec load_dgp_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open DGP spec '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("cannot parse DGP spec '{}': {}", path.string(), e.what()));
  }
  return DGPSpec::from_json(j);
}

SyntheticSample generate(const DGPSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.check();
  if (n < spec.J()) throw ConfigError(fmt::format("n = {} is below the cell count {}", n, spec.J()));
  std::vector<double> cum_share;
  double run = 0.0;
  for (const auto& c : spec.cells) cum_share.push_back(run += c.share);
  std::vector<SyntheticUnit> units;
  units.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, i);
    const double u_cell = rng.uniform() * run;
    const auto j = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cum_share.begin(), cum_share.end(), u_cell) - cum_share.begin()),
        spec.J() - 1);
    const auto& c = spec.cells[j];
    const int z = rng.bernoulli(c.q) ? 1 : 0;
    const double u_type = rng.uniform();
    std::size_t t = 0;
    double acc = c.types[0];
    while (t < 3 && u_type >= acc) acc += c.types[++t];
    while (c.types[t] == 0.0 && t > 0) --t;  // guard against rounding past the last positive type
    const double e0 = rng.normal();
    const double e1 = rng.normal();
    const double y0 = c.mean_y0[t] + c.noise_y0[t] * e0;
    const double y1 = c.mean_y1[t] + c.noise_y1[t] * e1;
    units.push_back(make_unit(spec, j, kTypes[t], z, y0, y1));
  }
  return to_sample(std::move(units));
}

SyntheticSample generate_exact(const DGPSpec& spec, std::size_t n) {
  spec.check();
  if (n < spec.J()) throw ConfigError(fmt::format("n = {} is below the cell count {}", n, spec.J()));
  std::vector<double> shares;
  for (const auto& c : spec.cells) shares.push_back(c.share);
  const auto sizes = apportion(n, shares);
  std::vector<SyntheticUnit> units;
  units.reserve(n);
  for (std::size_t j = 0; j < spec.J(); ++j) {
    const auto& c = spec.cells[j];
    const auto arms = apportion(sizes[j], {1.0 - c.q, c.q});
    for (int z = 0; z < 2; ++z) {
      const auto counts = apportion(arms[static_cast<std::size_t>(z)],
                                    std::vector<double>(c.types.begin(), c.types.end()));
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t r = 0; r < counts[t]; ++r) {
          units.push_back(make_unit(spec, j, kTypes[t], z, c.mean_y0[t], c.mean_y1[t]));
        }
      }
    }
  }
  return to_sample(std::move(units));
}

double brute_force_late(const std::vector<SyntheticUnit>& units) {
  if (units.empty()) throw EmptyDataError("latent table is empty");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& u : units) {
    if (u.ctype == ComplianceType::complier) {
      sum += u.y1 - u.y0;
      ++count;
    }
  }
  if (count == 0) throw IdentificationError("no compliers in the latent table");
  return sum / static_cast<double>(count);
}

WeightTable brute_force_weights(const std::vector<SyntheticUnit>& units) {
  if (units.empty()) throw EmptyDataError("latent table is empty");
  std::size_t J = 0;
  for (const auto& u : units) J = std::max(J, u.cell + 1);
  struct Acc {
    double n = 0, n1 = 0, net = 0, effect = 0;
  };
  std::vector<Acc> acc(J);
  for (const auto& u : units) {
    auto& a = acc[u.cell];
    a.n += 1;
    a.n1 += u.z;
    const int sign = u.ctype == ComplianceType::complier ? 1 : u.ctype == ComplianceType::defier ? -1 : 0;
    a.net += sign;
    a.effect += sign * (u.y1 - u.y0);
  }
  const auto N = static_cast<double>(units.size());
  WeightTable wt;
  double s_late = 0.0, s_iv = 0.0, s_ai = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& a = acc[j];
    if (a.n == 0 || a.net == 0) continue;
    const double p = a.n / N;
    const double q = a.n1 / a.n;
    const double pi = a.net / a.n;
    const double var = q * (1.0 - q);
    CellWeight w;
    w.cell = j;
    w.tau = a.effect / a.net;
    w.w_late = p * pi;
    w.w_iv = p * pi * var;
    w.w_ai = p * pi * pi * var;
    s_late += w.w_late;
    s_iv += w.w_iv;
    s_ai += w.w_ai;
    wt.rows.push_back(w);
  }
  if (wt.rows.empty()) throw IdentificationError("no cell has a nonzero net complier share");
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  wt.late_defined = s_late != 0.0;
  wt.iv_defined = s_iv != 0.0;
  wt.ai_defined = s_ai != 0.0;
  for (auto& w : wt.rows) {
    w.w_late = wt.late_defined ? w.w_late / s_late : nan;
    w.w_iv = wt.iv_defined ? w.w_iv / s_iv : nan;
    w.w_ai = wt.ai_defined ? w.w_ai / s_ai : nan;
  }
  return wt;
}

void write_latent_csv(std::ostream& out, const std::vector<SyntheticUnit>& units) {
  out << "cell,ctype,z,d1,d0,d,y1,y0,y\n";
  for (const auto& u : units) {
    fmt::print(out, "{},{},{},{},{},{},{},{},{}\n", u.cell, to_string(u.ctype), u.z, u.d1, u.d0, u.d, num(u.y1),
               num(u.y0), num(u.y));
  }
}

void write_observed_csv(std::ostream& out, const std::vector<SyntheticUnit>& units) {
  out << "y,d,z,cell\n";
  for (const auto& u : units) fmt::print(out, "{},{},{},{}\n", num(u.y), u.d, u.z, u.cell);
}

}  // namespace ivlate
