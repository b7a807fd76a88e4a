#include "ivlate/report.hpp"

#include <cmath>

#include <fmt/format.h>

namespace ivlate {
namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json vec(const Vector& v) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(v[i]));
  return out;
}

}  // namespace

nlohmann::json to_json(const EstimateReport& r) {
  return {{"estimand", to_string(r.estimand)}, {"estimate", num(r.estimate)}, {"se", num(r.se)},
          {"se_type", r.se_type},             {"n_used", r.n_used},          {"cells_used", r.cells_used},
          {"metadata", r.metadata}};
}

nlohmann::json to_json(const PropensityFit& f) {
  return {{"link", to_string(f.link)},
          {"intercept_added", f.intercept_added},
          {"coefficients", vec(f.coefficients)},
          {"converged", f.converged},
          {"iterations", f.iterations},
          {"loglik", num(f.loglik)},
          {"score_max", num(f.score_max)},
          {"outside_unit", f.outside_unit}};
}

nlohmann::json to_json(const TestReport& r) {
  nlohmann::json j{{"test", r.test},   {"statistic", num(r.statistic)}, {"df1", num(r.df1)},
                   {"df2", num(r.df2)}, {"p_value", num(r.p_value)},     {"trivial", r.trivial},
                   {"method", r.method}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

nlohmann::json to_json(const ValidityReport& r) {
  return {{"test", r.test},       {"statistic", num(r.statistic)}, {"p_value", num(r.p_value)},
          {"worst_set", r.worst_set}, {"reps", r.reps},            {"seed", r.seed},
          {"moments", r.moments}, {"skipped", r.skipped},          {"conditional", r.conditional},
          {"variant", r.variant}};
}

nlohmann::json to_json(const ManyIVFit& f) {
  return {{"estimator", to_string(f.estimator)}, {"estimate", num(f.estimate)}, {"se", num(f.se)},
          {"se_type", f.se_type},                {"K", f.K},                     {"L", f.L},
          {"n_used", f.n_used},                  {"leverage_max", num(f.leverage_max)}};
}

std::string format_estimate(double v) { return std::isnan(v) ? "NA" : fmt::format("{:.3f}", v); }

std::string format_p_value(double p) {
  if (std::isnan(p)) return "NA";
  if (p == 0.0) return "0";
  // Fixed notation with three significant digits.
  int digits = std::max(0, 2 - static_cast<int>(std::floor(std::log10(std::abs(p)))));
  const double scale = std::pow(10.0, digits);
  if (digits > 0 && std::abs(std::round(p * scale)) >= std::pow(10.0, 3)) --digits;
  return fmt::format("{:.{}f}", p, digits);
}

std::string render_estimates(const std::vector<EstimateReport>& rows) {
  std::string out = fmt::format("{:<22}{:>10}{:>10}{:>8}{:>7}\n", "estimand", "estimate", "se", "n", "cells");
  for (const auto& r : rows) {
    out += fmt::format("{:<22}{:>10}{:>10}{:>8}{:>7}\n", to_string(r.estimand), format_estimate(r.estimate),
                       format_estimate(r.se), r.n_used, r.cells_used);
  }
  return out;
}

std::string render_reset(const std::vector<TestReport>& rows) {
  std::string out = fmt::format("{:<28}{:>11}{:>8}{:>8}{:>10}\n", "test", "statistic", "df1", "df2", "p-value");
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      out += fmt::format("{:<28}  not computed: {}\n", r.test, r.error);
      continue;
    }
    out += fmt::format("{:<28}{:>11}{:>8}{:>8}{:>10}{}\n", r.test, format_estimate(r.statistic), format_estimate(r.df1),
                       std::isnan(r.df2) ? "-" : format_estimate(r.df2), format_p_value(r.p_value),
                       r.trivial ? "  (trivial)" : "");
  }
  return out;
}

std::string render_validity(const std::vector<ValidityReport>& rows) {
  std::string out = fmt::format("{:<6}{:>11}{:>10}{:>9}{:>9}  {}\n", "test", "statistic", "p-value", "moments",
                                "skipped", "worst set");
  for (const auto& r : rows) {
    out += fmt::format("{:<6}{:>11}{:>10}{:>9}{:>9}  {}\n", r.test, format_estimate(r.statistic),
                       format_p_value(r.p_value), r.moments, r.skipped, r.worst_set);
  }
  return out;
}

std::string render_many_iv(const std::vector<ManyIVFit>& rows) {
  std::string out =
      fmt::format("{:<8}{:>10}{:>10}{:>6}{:>6}{:>8}{:>14}\n", "", "estimate", "se", "K", "L", "n", "max leverage");
  for (const auto& f : rows) {
    out += fmt::format("{:<8}{:>10}{:>10}{:>6}{:>6}{:>8}{:>14}\n", to_string(f.estimator), format_estimate(f.estimate),
                       format_estimate(f.se), f.K, f.L, f.n_used, format_estimate(f.leverage_max));
  }
  return out;
}

}  // namespace ivlate
