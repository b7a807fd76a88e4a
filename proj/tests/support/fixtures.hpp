#pragma once

#include <array>
#include <initializer_list>
#include <string>

#include "ivlate/cells.hpp"
#include "ivlate/dataset.hpp"
#include "ivlate/dgp.hpp"
#include "oracles.hpp"

#ifndef IVLATE_TEST_DATA
#error "IVLATE_TEST_DATA must point at tests/data"
#endif

namespace fixture {

inline std::string data_path(const std::string& name) { return std::string(IVLATE_TEST_DATA) + "/" + name; }

// 58 rows, three cells; needs min_arm_size = 1.
inline ivlate::Dataset three_wave() {
  return ivlate::load_dataset(data_path("three_wave.csv"), {"y", "d", "z", {"cell"}, std::nullopt});
}

// Rows of (y, d, z, x); k = 0 drops the covariate.
inline ivlate::Dataset make(std::initializer_list<std::array<double, 4>> rows, int k) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  ivlate::Vector y(n), d(n), z(n);
  ivlate::Matrix x(n, k);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    y[i] = r[0];
    d[i] = r[1];
    z[i] = r[2];
    if (k > 0) x(i, 0) = r[3];
    ++i;
  }
  return ivlate::Dataset(y, d, z, x, k > 0 ? std::vector<std::string>{"x"} : std::vector<std::string>{});
}

inline ivlate::Dataset random_saturated(ivlate::Rng& rng, std::size_t J, std::size_t n) {
  const auto spec = oracle::random_spec(rng, J);
  return ivlate::generate(spec, n, rng.next()).data;
}

}  // namespace fixture
