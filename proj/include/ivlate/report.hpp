#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivlate/estimators.hpp"
#include "ivlate/many_iv.hpp"
#include "ivlate/propensity.hpp"
#include "ivlate/spec_tests.hpp"
#include "ivlate/validity.hpp"

namespace ivlate {

// Full-precision JSON; NaN becomes null.
nlohmann::json to_json(const EstimateReport& r);
nlohmann::json to_json(const PropensityFit& f);
nlohmann::json to_json(const TestReport& r);
nlohmann::json to_json(const ValidityReport& r);
nlohmann::json to_json(const ManyIVFit& f);

// Three decimals; "NA" for NaN.
std::string format_estimate(double v);
// Three significant figures; "NA" for NaN.
std::string format_p_value(double p);

std::string render_estimates(const std::vector<EstimateReport>& rows);
std::string render_reset(const std::vector<TestReport>& rows);
std::string render_validity(const std::vector<ValidityReport>& rows);
std::string render_many_iv(const std::vector<ManyIVFit>& rows);

}  // namespace ivlate
