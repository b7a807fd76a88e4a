#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ivlate/cells.hpp"
#include "ivlate/dataset.hpp"
#include "ivlate/dgp.hpp"
#include "ivlate/errors.hpp"
#include "ivlate/estimators.hpp"
#include "ivlate/many_iv.hpp"
#include "ivlate/propensity.hpp"
#include "ivlate/report.hpp"
#include "ivlate/spec_tests.hpp"
#include "ivlate/validity.hpp"

namespace ivlate::cli {
namespace {

using json = nlohmann::json;

// Raw flags; unset optionals fall back to the --config file, then defaults.
struct Flags {
  std::optional<std::string> input, outcome, treatment, instrument, covariates, cluster, config;
  std::optional<std::string> link, trim, powers, cuts, se, design;
  std::optional<std::size_t> reps, min_arm, min_cell;
  std::optional<std::uint64_t> seed;
  bool as_json = false;
  std::optional<std::string> spec, output, latent;
  std::optional<std::size_t> n;
  bool exact = false;
};

struct RunConfig {
  std::string command;
  std::string input;
  ColumnMap map;
  std::string design = "auto";
  std::vector<Link> links;
  TrimBounds trim;
  std::vector<int> powers{2, 3, 4};
  std::string cuts = "auto";
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::optional<SeType> se;
  CellOptions cells;
  bool as_json = false;

  nlohmann::json echo() const {
    json j{{"input", input},
           {"outcome", map.outcome},
           {"treatment", map.treatment},
           {"instrument", map.instrument},
           {"covariates", map.covariates},
           {"design", design},
           {"trim", {trim.lo, trim.hi}},
           {"powers", powers},
           {"cuts", cuts},
           {"reps", reps},
           {"seed", seed},
           {"min_arm", cells.min_arm_size},
           {"min_cell", cells.min_cell_size}};
    j["cluster"] = map.cluster ? json(*map.cluster) : json(nullptr);
    j["se"] = se ? json(to_string(*se)) : json("auto");
    j["link"] = json::array();
    for (auto l : links) j["link"].push_back(to_string(l));
    return j;
  }
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("{}: '{}' is not a number", what, s));
  return v;
}

std::string json_list(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ',';
    out += x.is_string() ? x.get<std::string>() : x.dump();
  }
  return out;
}

RunConfig resolve(const std::string& command, const Flags& f) {
  json file = json::object();
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", *f.config));
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("cannot parse config file '{}': {}", *f.config, e.what()));
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  auto str = [&](const std::optional<std::string>& flag, const char* key) -> std::optional<std::string> {
    if (flag) return flag;
    if (file.contains(key)) return json_list(file.at(key));
    return std::nullopt;
  };
  auto count = [&](const std::optional<std::size_t>& flag, const char* key) -> std::optional<std::size_t> {
    if (flag) return flag;
    if (file.contains(key)) return file.at(key).get<std::size_t>();
    return std::nullopt;
  };

  RunConfig rc;
  rc.command = command;
  rc.as_json = f.as_json || file.value("json", false);
  rc.input = str(f.input, "input").value_or("");
  rc.map.outcome = str(f.outcome, "outcome").value_or("");
  rc.map.treatment = str(f.treatment, "treatment").value_or("");
  rc.map.instrument = str(f.instrument, "instrument").value_or("");
  if (auto c = str(f.covariates, "covariates")) rc.map.covariates = split(*c);
  rc.map.cluster = str(f.cluster, "cluster");
  if (auto d = str(f.design, "design")) {
    if (*d != "auto" && *d != "saturated" && *d != "linear") {
      throw ConfigError(fmt::format("--design must be auto, saturated or linear, got '{}'", *d));
    }
    rc.design = *d;
  }
  if (auto l = str(f.link, "link")) {
    for (const auto& s : split(*l)) rc.links.push_back(parse_link(s));
  }
  if (auto t = str(f.trim, "trim")) {
    const auto parts = split(*t);
    if (parts.size() != 2) throw ConfigError("--trim expects lo,hi");
    rc.trim = {parse_double(parts[0], "--trim"), parse_double(parts[1], "--trim")};
    if (!(rc.trim.lo >= 0.0 && rc.trim.lo < rc.trim.hi && rc.trim.hi <= 1.0)) {
      throw ConfigError("--trim needs 0 <= lo < hi <= 1");
    }
  }
  if (auto p = str(f.powers, "powers")) {
    rc.powers.clear();
    for (const auto& s : split(*p)) {
      const double v = parse_double(s, "--powers");
      if (v != std::floor(v)) throw ConfigError("--powers must be integers");
      rc.powers.push_back(static_cast<int>(v));
    }
  }
  if (auto c = str(f.cuts, "cuts")) rc.cuts = *c;
  rc.reps = count(f.reps, "reps").value_or(command == "validity" ? 999 : 0);
  if (f.seed) {
    rc.seed = *f.seed;
  } else if (file.contains("seed")) {
    rc.seed = file.at("seed").get<std::uint64_t>();
  }
  if (auto s = str(f.se, "se")) {
    if (*s != "hc1" && *s != "cluster") throw ConfigError(fmt::format("--se must be hc1 or cluster, got '{}'", *s));
    rc.se = parse_se_type(*s);
  }
  rc.cells.min_arm_size = count(f.min_arm, "min_arm").value_or(3);
  rc.cells.min_cell_size = count(f.min_cell, "min_cell").value_or(1);
  return rc;
}

Dataset load(const RunConfig& rc, std::vector<std::string>& warnings) {
  if (rc.input.empty()) throw ConfigError("no input file given");
  rc.map.check();
  auto ds = load_dataset(rc.input, rc.map);
  const auto report = validate(ds);
  if (!report.passed) throw IdentificationError(report.errors.front());
  for (const auto& w : report.warnings) warnings.push_back(w);
  if (ds.ingest().dropped_rows > 0) {
    warnings.push_back(fmt::format("dropped {} of {} rows with missing or unparseable values", ds.ingest().dropped_rows,
                                   ds.ingest().raw_rows));
  }
  return ds;
}

std::size_t distinct_cells(const Dataset& ds) {
  return std::set<std::string>(ds.cell_keys().begin(), ds.cell_keys().end()).size();
}

bool saturation_applies(const Dataset& ds) {
  for (Eigen::Index i = 0; i < ds.x().size(); ++i) {
    const double v = ds.x().data()[i];
    if (v != std::floor(v)) return false;
  }
  return 2 * distinct_cells(ds) <= ds.n();
}

bool use_saturated(const RunConfig& rc, const Dataset& ds) {
  if (rc.design == "saturated") return true;
  if (rc.design == "linear") return false;
  return saturation_applies(ds);
}

void require_saturated(const RunConfig& rc, const Dataset& ds) {
  if (!use_saturated(rc, ds)) {
    throw ConfigError(fmt::format("'{}' needs saturated covariates: integer-valued cells with 2J <= n", rc.command));
  }
}

CellTable cells_for(const Dataset& ds, const RunConfig& rc, std::vector<std::string>& warnings) {
  auto ct = build_cells(ds, rc.cells);
  for (const auto& w : ct.warnings) warnings.push_back(w);
  std::size_t dropped = 0;
  for (const auto& c : ct.cells) dropped += c.degenerate();
  if (dropped > 0) warnings.push_back(fmt::format("{} of {} cells excluded as degenerate", dropped, ct.J()));
  return ct;
}

struct Output {
  json results;
  std::string text;
};

Output cmd_estimate(const RunConfig& rc, const Dataset& ds, std::vector<std::string>& warnings) {
  EstimatorOptions eo{rc.se};
  std::vector<EstimateReport> rows;
  std::string head;
  if (use_saturated(rc, ds)) {
    const auto ct = cells_for(ds, rc, warnings);
    rows.push_back(estimate_beta_late_saturated(ds, ct, eo));
    rows.push_back(estimate_beta_iv(ds, ct, eo));
    rows.push_back(estimate_beta_ai(ds, ct, eo));
    head = fmt::format("saturated design: n = {}, cells = {} ({} retained)\n", ds.n(), ct.J(), ct.retained().size());
  } else {
    rows.push_back(estimate_beta_iv_linear(ds, eo));
    auto links = rc.links.empty() ? std::vector<Link>{Link::logit, Link::probit} : rc.links;
    for (auto link : links) {
      const auto pf = fit_binary_index(ds.z(), ds.x(), link);
      auto rep = ipw_late(ds, pf, {rc.trim, rc.reps, rc.seed});
      rep.metadata["link"] = to_string(link);
      rows.push_back(std::move(rep));
    }
    head = fmt::format("linear design: n = {}, covariates = {}\n", ds.n(), ds.k());
  }
  Output o;
  o.results = json::array();
  for (const auto& r : rows) o.results.push_back(to_json(r));
  o.text = head + render_estimates(rows);
  return o;
}

Output cmd_weights(const RunConfig& rc, const Dataset& ds, std::vector<std::string>& warnings) {
  require_saturated(rc, ds);
  const auto ct = cells_for(ds, rc, warnings);
  const auto wt = decompose_weights(ct);
  const auto table = cell_stats_table(ct, &wt);
  Output o;
  o.results = {{"cells", table.to_json()},
               {"dot_products",
                {{"late", wt.late_defined ? json(wt.dot_late()) : json(nullptr)},
                 {"iv", wt.iv_defined ? json(wt.dot_iv()) : json(nullptr)},
                 {"ai", wt.ai_defined ? json(wt.dot_ai()) : json(nullptr)}}}};
  o.text = table.to_text();
  o.text += fmt::format("weighted sums of tau: late {}, iv {}, ai {}\n",
                        wt.late_defined ? format_estimate(wt.dot_late()) : "undefined",
                        wt.iv_defined ? format_estimate(wt.dot_iv()) : "undefined",
                        wt.ai_defined ? format_estimate(wt.dot_ai()) : "undefined");
  return o;
}

Output cmd_reset(const RunConfig& rc, const Dataset& ds, std::vector<std::string>&) {
  auto links = rc.links.empty() ? std::vector<Link>{Link::linear, Link::logit, Link::probit} : rc.links;
  std::vector<TestReport> rows;
  for (auto link : links) {
    try {
      if (link == Link::linear) {
        rows.push_back(reset_linear(ds.z(), ds.x(), rc.powers));
      } else {
        const auto pf = fit_binary_index(ds.z(), ds.x(), link);
        rows.push_back(reset_binary_index(pf, ds.z(), rc.powers));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const DomainError& e) {
      TestReport t;
      t.test = fmt::format("RESET ({})", to_string(link));
      t.p_value = std::nan("");
      t.error = e.what();
      rows.push_back(t);
    }
  }
  Output o;
  o.results = json::array();
  for (const auto& r : rows) o.results.push_back(to_json(r));
  o.text = fmt::format("instrument propensity score RESET, powers {}\n", fmt::join(rc.powers, ","));
  o.text += render_reset(rows);
  return o;
}

OutcomeSetPartition partition_for(const RunConfig& rc, const Vector& y) {
  if (rc.cuts == "auto") return OutcomeSetPartition::automatic(y);
  if (rc.cuts == "deciles") return OutcomeSetPartition::deciles(y);
  if (rc.cuts == "support") return OutcomeSetPartition::support(y);
  OutcomeSetPartition p;
  for (const auto& s : split(rc.cuts)) p.cut_points.push_back(parse_double(s, "--cuts"));
  p.check();
  return p;
}

Output cmd_validity(const RunConfig& rc, const Dataset& ds, std::vector<std::string>& warnings) {
  if (rc.reps == 0) throw ConfigError("--reps must be positive for validity tests");
  const bool saturated = use_saturated(rc, ds);
  if (!saturated && ds.k() > 0) {
    warnings.push_back("covariates are not saturated; validity tests run without conditioning");
  }
  const Dataset pooled = saturated ? ds : Dataset(ds.y(), ds.d(), ds.z(), Matrix(static_cast<Eigen::Index>(ds.n()), 0), {});
  const auto ct = cells_for(pooled, rc, warnings);
  const auto partition = partition_for(rc, ds.y());
  const ValidityOptions vo{rc.reps, rc.seed};
  std::vector<ValidityReport> rows;
  rows.push_back(bp_test(pooled, &ct, partition, vo));
  rows.push_back(mw_test(pooled, ct, partition, vo));
  rows.push_back(first_stage_nonneg_test(pooled, ct, vo));
  Output o;
  o.results = json::array();
  for (const auto& r : rows) o.results.push_back(to_json(r));
  o.text = fmt::format("instrument validity: {} outcome intervals, {} bootstrap draws, seed {}\n",
                       partition.intervals(), rc.reps, rc.seed);
  o.text += render_validity(rows);
  return o;
}

Output cmd_manyiv(const RunConfig& rc, const Dataset& ds, std::vector<std::string>& warnings) {
  require_saturated(rc, ds);
  const auto ct = cells_for(ds, rc, warnings);
  std::vector<ManyIVFit> rows{many_tsls(ds, ct), jive(ds, ct), ujive(ds, ct)};
  Output o;
  o.results = json::array();
  for (const auto& r : rows) o.results.push_back(to_json(r));
  o.text = render_many_iv(rows);
  return o;
}

Output cmd_simulate(const Flags& f, json& echo) {
  if (!f.spec) throw ConfigError("simulate needs --spec");
  if (!f.output) throw ConfigError("simulate needs --output");
  if (!f.n) throw ConfigError("simulate needs --n");
  const auto spec = load_dgp_spec(*f.spec);
  const std::uint64_t seed = f.seed.value_or(spec.seed);
  echo = {{"spec", *f.spec}, {"n", *f.n}, {"seed", seed}, {"exact", f.exact}, {"output", *f.output}};
  const auto sample = f.exact ? generate_exact(spec, *f.n) : generate(spec, *f.n, seed);
  {
    std::ofstream out(*f.output, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", *f.output));
    write_observed_csv(out, sample.units);
  }
  if (f.latent) {
    echo["latent"] = *f.latent;
    std::ofstream out(*f.latent, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", *f.latent));
    write_latent_csv(out, sample.units);
  }
  const double late = brute_force_late(sample.units);
  const auto wt = brute_force_weights(sample.units);
  Output o;
  json cells = json::array();
  for (const auto& w : wt.rows) {
    cells.push_back({{"cell", w.cell}, {"w_late", w.w_late}, {"w_iv", w.w_iv}, {"w_ai", w.w_ai}, {"tau", w.tau}});
  }
  o.results = {{"late", late},
               {"beta_late", wt.dot_late()},
               {"beta_iv", wt.dot_iv()},
               {"beta_ai", wt.dot_ai()},
               {"cells", cells},
               {"rows", sample.units.size()}};
  o.text = fmt::format("wrote {} rows to {}\n", sample.units.size(), *f.output);
  o.text += fmt::format("complier LATE {}\nweighted sums of tau: late {}, iv {}, ai {}\n", format_estimate(late),
                        format_estimate(wt.dot_late()), format_estimate(wt.dot_iv()), format_estimate(wt.dot_ai()));
  return o;
}

void add_data_options(CLI::App* sub, Flags& f) {
  sub->add_option("input,--input", f.input, "CSV file with a header row");
  sub->add_option("--outcome", f.outcome, "outcome column");
  sub->add_option("--treatment", f.treatment, "binary treatment column");
  sub->add_option("--instrument", f.instrument, "binary instrument column");
  sub->add_option("--covariates", f.covariates, "comma-separated covariate columns");
  sub->add_option("--cluster", f.cluster, "cluster column");
  sub->add_option("--config", f.config, "JSON file with column roles and options");
  sub->add_option("--design", f.design, "auto, saturated or linear");
  sub->add_option("--se", f.se, "hc1 or cluster");
  sub->add_option("--min-arm", f.min_arm, "minimum rows per instrument arm in a cell (default 3)");
  sub->add_option("--min-cell", f.min_cell, "minimum rows per cell (default 1)");
  sub->add_option("--seed", f.seed, "root seed (default 0)");
  sub->add_flag("--json", f.as_json, "emit JSON");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instrumental variables estimands, weights and diagnostics", "ivlate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Flags f;

  auto* estimate = app.add_subcommand("estimate", "LATE, linear IV and interacted IV estimates");
  add_data_options(estimate, f);
  estimate->add_option("--link", f.link, "propensity links for IPW (logit,probit)");
  estimate->add_option("--trim", f.trim, "propensity trimming bounds lo,hi (default 0.01,0.99)");
  estimate->add_option("--reps", f.reps, "bootstrap draws for the IPW standard error (default 0: delta method)");

  auto* weights = app.add_subcommand("weights", "per-cell weights behind each estimand");
  add_data_options(weights, f);

  auto* reset = app.add_subcommand("reset", "RESET tests of the instrument propensity score");
  add_data_options(reset, f);
  reset->add_option("--link", f.link, "models to test (linear,logit,probit)");
  reset->add_option("--powers", f.powers, "powers of the fitted index (default 2,3,4)");

  auto* validity = app.add_subcommand("validity", "testable implications of instrument validity");
  add_data_options(validity, f);
  validity->add_option("--cuts", f.cuts, "auto, deciles, support or a comma list of cut points");
  validity->add_option("--reps", f.reps, "bootstrap draws (default 999)");

  auto* manyiv = app.add_subcommand("manyiv", "2SLS, JIVE and UJIVE on the interacted specification");
  add_data_options(manyiv, f);

  auto* simulate = app.add_subcommand("simulate", "draw a synthetic sample with known compliance types");
  simulate->add_option("--spec", f.spec, "DGP spec JSON");
  simulate->add_option("--n", f.n, "sample size");
  simulate->add_option("--seed", f.seed, "root seed (default: the spec seed)");
  simulate->add_option("--output", f.output, "observed CSV to write");
  simulate->add_option("--latent", f.latent, "latent-type CSV to write");
  simulate->add_flag("--exact", f.exact, "deterministic population with exact proportions");
  simulate->add_flag("--json", f.as_json, "emit JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    std::vector<std::string> warnings;
    json echo;
    Output o;
    bool as_json = f.as_json;
    if (command == "simulate") {
      o = cmd_simulate(f, echo);
    } else {
      const auto rc = resolve(command, f);
      as_json = rc.as_json;
      echo = rc.echo();
      const auto ds = load(rc, warnings);
      if (command == "estimate") o = cmd_estimate(rc, ds, warnings);
      if (command == "weights") o = cmd_weights(rc, ds, warnings);
      if (command == "reset") o = cmd_reset(rc, ds, warnings);
      if (command == "validity") o = cmd_validity(rc, ds, warnings);
      if (command == "manyiv") o = cmd_manyiv(rc, ds, warnings);
    }
    if (as_json) {
      json j{{"command", command}, {"config_echo", echo}, {"results", o.results}, {"warnings", warnings},
             {"version", kVersion}};
      out << j.dump(2) << "\n";
    } else {
      out << o.text;
      for (const auto& w : warnings) out << "warning: " << w << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    err << "error: invalid configuration value: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ivlate::cli
