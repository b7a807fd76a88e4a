#include "ivlate/validity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "ivlate/errors.hpp"
#include "ivlate/rng.hpp"

namespace ivlate {
namespace {

// Observations bucketed by (test cell, Z arm, D, outcome interval). Every
// moment below has an influence function that is constant within a bucket,
// so a multiplier-bootstrap draw only needs bucket sums of the multipliers.
class Layout {
 public:
  Layout(const Dataset& ds, const CellTable* ct, const OutcomeSetPartition* partition) {
    K_ = partition ? partition->intervals() : 1;
    if (ct != nullptr) {
      std::vector<std::ptrdiff_t> slot(ct->J(), -1);
      for (std::size_t j = 0; j < ct->J(); ++j) {
        if (ct->cells[j].supported()) {
          slot[j] = static_cast<std::ptrdiff_t>(labels_.size());
          labels_.push_back(ct->cells[j].key.empty() ? "(all)" : ct->cells[j].key);
        } else {
          ++skipped_cells_;
        }
      }
      obs_cell_.resize(ds.n());
      for (std::size_t i = 0; i < ds.n(); ++i) obs_cell_[i] = slot[ct->assignment[i]];
    } else {
      labels_.push_back("(pooled)");
      obs_cell_.assign(ds.n(), 0);
    }
    C_ = labels_.size();
    count_.assign(C_ * 4 * K_, 0.0);
    group_.assign(ds.n(), -1);
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (obs_cell_[i] < 0) continue;
      const auto r = static_cast<Eigen::Index>(i);
      const std::size_t a = ds.z()[r] == 1.0 ? 1 : 0;
      const std::size_t d = ds.d()[r] == 1.0 ? 1 : 0;
      const std::size_t k = partition ? partition->locate(ds.y()[r]) : 0;
      const auto g = group(static_cast<std::size_t>(obs_cell_[i]), a, d, k);
      group_[i] = static_cast<std::int32_t>(g);
      count_[g] += 1.0;
    }
    cum_count_ = cumulate(count_);
  }

  std::size_t K() const { return K_; }
  std::size_t cells() const { return C_; }
  std::size_t skipped_cells() const { return skipped_cells_; }
  const std::string& label(std::size_t c) const { return labels_[c]; }

  std::size_t group(std::size_t c, std::size_t a, std::size_t d, std::size_t k) const {
    return ((c * 2 + a) * 2 + d) * K_ + k;
  }
  std::size_t cum(std::size_t c, std::size_t a, std::size_t d, std::size_t k) const {
    return ((c * 2 + a) * 2 + d) * (K_ + 1) + k;
  }
  std::size_t cum_size() const { return C_ * 4 * (K_ + 1); }

  // Count in intervals [lo, hi) for (cell, arm, d).
  double range(std::size_t c, std::size_t a, std::size_t d, std::size_t lo, std::size_t hi) const {
    return cum_count_[cum(c, a, d, hi)] - cum_count_[cum(c, a, d, lo)];
  }
  double arm(std::size_t c, std::size_t a) const { return range(c, a, 0, 0, K_) + range(c, a, 1, 0, K_); }
  double count(std::size_t c, std::size_t a, std::size_t d, std::size_t k) const { return count_[group(c, a, d, k)]; }

  const std::vector<std::int32_t>& groups() const { return group_; }

  std::vector<double> cumulate(const std::vector<double>& per_group) const {
    std::vector<double> out(cum_size(), 0.0);
    for (std::size_t b = 0; b < C_ * 4; ++b) {
      double run = 0.0;
      for (std::size_t k = 0; k < K_; ++k) {
        out[b * (K_ + 1) + k] = run;
        run += per_group[b * K_ + k];
      }
      out[b * (K_ + 1) + K_] = run;
    }
    return out;
  }

 private:
  std::size_t K_ = 1;
  std::size_t C_ = 0;
  std::size_t skipped_cells_ = 0;
  std::vector<std::string> labels_;
  std::vector<std::ptrdiff_t> obs_cell_;
  std::vector<std::int32_t> group_;
  std::vector<double> count_;
  std::vector<double> cum_count_;
};

struct Moment {
  std::string label;
  double theta = 0.0;
  double sigma = 0.0;
  // Bootstrap draw = sum of coef * cumulative multiplier sum.
  std::vector<std::pair<std::uint32_t, double>> terms;
};

void add_range(Moment& m, const Layout& L, std::size_t c, std::size_t a, std::size_t d, std::size_t lo, std::size_t hi,
               double coef) {
  m.terms.emplace_back(static_cast<std::uint32_t>(L.cum(c, a, d, hi)), coef);
  if (lo > 0) m.terms.emplace_back(static_cast<std::uint32_t>(L.cum(c, a, d, lo)), -coef);
}

void add_arm_total(Moment& m, const Layout& L, std::size_t c, std::size_t a, double coef) {
  add_range(m, L, c, a, 0, 0, L.K(), coef);
  add_range(m, L, c, a, 1, 0, L.K(), coef);
}

// Difference of arm proportions of 1{Y in [lo,hi), D = d}: arm `plus` minus
// arm `minus`.
Moment arm_difference(const Layout& L, std::size_t c, std::size_t d, std::size_t plus, std::size_t lo, std::size_t hi) {
  const std::size_t minus = 1 - plus;
  const double np = L.arm(c, plus);
  const double nm = L.arm(c, minus);
  const double gp = L.range(c, plus, d, lo, hi) / np;
  const double gm = L.range(c, minus, d, lo, hi) / nm;
  Moment m;
  m.theta = gp - gm;
  m.sigma = std::sqrt(gp * (1.0 - gp) / np + gm * (1.0 - gm) / nm);
  add_range(m, L, c, plus, d, lo, hi, 1.0 / np);
  add_arm_total(m, L, c, plus, -gp / np);
  add_range(m, L, c, minus, d, lo, hi, -1.0 / nm);
  add_arm_total(m, L, c, minus, gm / nm);
  return m;
}

std::vector<Moment> bp_moment_list(const Layout& L, const OutcomeSetPartition& partition) {
  std::vector<Moment> moments;
  for (std::size_t c = 0; c < L.cells(); ++c) {
    for (std::size_t lo = 0; lo < L.K(); ++lo) {
      for (std::size_t hi = lo + 1; hi <= L.K(); ++hi) {
        Moment treated = arm_difference(L, c, 1, 1, lo, hi);
        treated.label = fmt::format("cell {}, Y in {}, D=1 side", L.label(c), partition.describe(lo, hi));
        Moment untreated = arm_difference(L, c, 0, 0, lo, hi);
        untreated.label = fmt::format("cell {}, Y in {}, D=0 side", L.label(c), partition.describe(lo, hi));
        moments.push_back(std::move(treated));
        moments.push_back(std::move(untreated));
      }
    }
  }
  return moments;
}

// Conditional mean of the inverse-propensity contrast given Y in interval k:
// theta = Delta_k / P_k with Delta_k the arm difference on interval k and P_k
// the cell share of interval k. Delta-method influence function accounts
// for estimating P_k.
Moment conditional_moment(const Layout& L, std::size_t c, std::size_t d, std::size_t k) {
  const std::size_t plus = d;  // D=1 side compares Z=1 minus Z=0; D=0 side the reverse
  const std::size_t minus = 1 - plus;
  const double np = L.arm(c, plus);
  const double nm = L.arm(c, minus);
  const double nc = np + nm;
  double nk = 0.0;
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t dd = 0; dd < 2; ++dd) nk += L.count(c, a, dd, k);
  }
  const double pk = nk / nc;
  const double gp = L.count(c, plus, d, k) / np;
  const double gm = L.count(c, minus, d, k) / nm;
  const double delta = gp - gm;
  Moment m;
  m.theta = delta / pk;

  double ss = 0.0;
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t dd = 0; dd < 2; ++dd) {
      for (std::size_t kk = 0; kk < L.K(); ++kk) {
        const double cnt = L.count(c, a, dd, kk);
        if (cnt == 0.0) continue;
        const double g = (kk == k && dd == d) ? 1.0 : 0.0;
        const double in_k = kk == k ? 1.0 : 0.0;
        const double psi_delta = a == plus ? nc * (g - gp) / np : -nc * (g - gm) / nm;
        const double psi = (psi_delta - m.theta * (in_k - pk)) / pk;
        ss += cnt * psi * psi;
      }
    }
  }
  m.sigma = std::sqrt(ss) / nc;

  add_range(m, L, c, plus, d, k, k + 1, 1.0 / (np * pk));
  add_arm_total(m, L, c, plus, -gp / (np * pk));
  add_range(m, L, c, minus, d, k, k + 1, -1.0 / (nm * pk));
  add_arm_total(m, L, c, minus, gm / (nm * pk));
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t dd = 0; dd < 2; ++dd) {
      add_range(m, L, c, a, dd, k, k + 1, -m.theta / (pk * nc));
      add_range(m, L, c, a, dd, 0, L.K(), m.theta / nc);
    }
  }
  return m;
}

std::vector<Moment> mw_moment_list(const Layout& L, const OutcomeSetPartition& partition, std::size_t& skipped) {
  std::vector<Moment> moments;
  for (std::size_t c = 0; c < L.cells(); ++c) {
    for (std::size_t k = 0; k < L.K(); ++k) {
      double nk = 0.0;
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t d = 0; d < 2; ++d) nk += L.count(c, a, d, k);
      }
      if (nk == 0.0) {
        skipped += 2;
        continue;
      }
      for (std::size_t d : {std::size_t{1}, std::size_t{0}}) {
        Moment m = conditional_moment(L, c, d, k);
        m.label = fmt::format("cell {}, given Y in {}, D={} side", L.label(c), partition.describe(k, k + 1), d);
        moments.push_back(std::move(m));
      }
    }
  }
  return moments;
}

ValidityReport run_max_test(std::string name, const Layout& L, const std::vector<Moment>& moments,
                            const ValidityOptions& opts) {
  if (moments.empty()) throw TestUndefinedError(name + " test: every candidate moment was skipped");
  if (opts.reps == 0) throw ConfigError("bootstrap repetitions must be positive");
  std::vector<double> sigma(moments.size());
  double stat = -std::numeric_limits<double>::infinity();
  std::size_t worst = 0;
  for (std::size_t m = 0; m < moments.size(); ++m) {
    sigma[m] = std::max(moments[m].sigma, opts.sigma_floor);
    const double t = -moments[m].theta / sigma[m];
    if (t > stat) {
      stat = t;
      worst = m;
    }
  }

  const auto& groups = L.groups();
  std::vector<double> sums(L.cells() * 4 * L.K());
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < opts.reps; ++b) {
    Rng rng(opts.seed, b);
    RademacherStream xi(rng);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (auto g : groups) {
      if (g >= 0) sums[static_cast<std::size_t>(g)] += xi();
    }
    const auto cum = L.cumulate(sums);
    double tb = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < moments.size(); ++m) {
      double v = 0.0;
      for (const auto& [idx, coef] : moments[m].terms) v += coef * cum[idx];
      tb = std::max(tb, -v / sigma[m]);
    }
    if (tb >= stat) ++exceed;
  }

  ValidityReport rep;
  rep.test = std::move(name);
  rep.statistic = stat;
  rep.p_value = static_cast<double>(exceed) / static_cast<double>(opts.reps);
  rep.worst_set = moments[worst].label;
  rep.reps = opts.reps;
  rep.seed = opts.seed;
  rep.moments = moments.size();
  rep.variant = "max studentized violation, Rademacher multiplier bootstrap (least-favorable recentering)";
  return rep;
}

std::vector<MomentValue> to_values(const std::vector<Moment>& moments) {
  std::vector<MomentValue> out;
  out.reserve(moments.size());
  for (const auto& m : moments) out.push_back({m.label, m.theta, m.sigma});
  return out;
}

void require_both_arms(const Layout& L) {
  if (L.cells() == 0) throw TestUndefinedError("no covariate cell has both instrument arms");
  for (std::size_t c = 0; c < L.cells(); ++c) {
    if (L.arm(c, 0) == 0.0 || L.arm(c, 1) == 0.0) throw TestUndefinedError("an instrument arm is empty");
  }
}

}  // namespace

void OutcomeSetPartition::check() const {
  for (std::size_t i = 0; i < cut_points.size(); ++i) {
    if (!std::isfinite(cut_points[i])) throw ConfigError("outcome cut points must be finite");
    if (i > 0 && !(cut_points[i] > cut_points[i - 1])) {
      throw ConfigError("outcome cut points must be strictly increasing");
    }
  }
}

std::size_t OutcomeSetPartition::locate(double y) const {
  return static_cast<std::size_t>(std::upper_bound(cut_points.begin(), cut_points.end(), y) - cut_points.begin());
}

std::string OutcomeSetPartition::describe(std::size_t first, std::size_t last) const {
  const std::string lo = first == 0 ? "(-inf" : fmt::format("{:.6g}", cut_points[first - 1]);
  const std::string hi = last >= intervals() ? "inf" : fmt::format("{:.6g}", cut_points[last - 1]);
  return first == 0 ? fmt::format("{}, {})", lo, hi) : fmt::format("[{}, {})", lo, hi);
}

OutcomeSetPartition OutcomeSetPartition::deciles(const Vector& y) {
  std::vector<double> v(y.data(), y.data() + y.size());
  std::sort(v.begin(), v.end());
  OutcomeSetPartition p;
  const auto n = v.size();
  for (int q = 1; q <= 9; ++q) {
    // Linear interpolation between order statistics.
    const double h = (static_cast<double>(n) - 1.0) * q / 10.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, n - 1);
    const double cut = v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    if (cut > v.front() && (p.cut_points.empty() || cut > p.cut_points.back())) p.cut_points.push_back(cut);
  }
  return p;
}

OutcomeSetPartition OutcomeSetPartition::support(const Vector& y) {
  std::set<double> values(y.data(), y.data() + y.size());
  OutcomeSetPartition p;
  for (auto it = std::next(values.begin()); it != values.end(); ++it) p.cut_points.push_back(*it);
  return p;
}

OutcomeSetPartition OutcomeSetPartition::automatic(const Vector& y, std::size_t max_support) {
  std::set<double> values;
  for (Eigen::Index i = 0; i < y.size() && values.size() <= max_support; ++i) values.insert(y[i]);
  return values.size() <= max_support ? support(y) : deciles(y);
}

std::vector<MomentValue> bp_moments(const Dataset& ds, const CellTable* ct, const OutcomeSetPartition& partition) {
  partition.check();
  Layout L(ds, ct, &partition);
  require_both_arms(L);
  return to_values(bp_moment_list(L, partition));
}

std::vector<MomentValue> mw_moments(const Dataset& ds, const CellTable& ct, const OutcomeSetPartition& partition) {
  partition.check();
  Layout L(ds, &ct, &partition);
  require_both_arms(L);
  std::size_t skipped = 0;
  return to_values(mw_moment_list(L, partition, skipped));
}

ValidityReport bp_test(const Dataset& ds, const CellTable* ct, const OutcomeSetPartition& partition,
                       const ValidityOptions& opts) {
  partition.check();
  Layout L(ds, ct, &partition);
  require_both_arms(L);
  const auto sets = partition.intervals() * (partition.intervals() + 1) / 2;
  auto rep = run_max_test("BP", L, bp_moment_list(L, partition), opts);
  rep.conditional = ct != nullptr;
  rep.skipped = L.skipped_cells() * sets * 2;
  return rep;
}

ValidityReport mw_test(const Dataset& ds, const CellTable& ct, const OutcomeSetPartition& partition,
                       const ValidityOptions& opts) {
  partition.check();
  Layout L(ds, &ct, &partition);
  require_both_arms(L);
  std::size_t skipped = L.skipped_cells() * partition.intervals() * 2;
  auto moments = mw_moment_list(L, partition, skipped);
  auto rep = run_max_test("MW", L, moments, opts);
  rep.conditional = true;
  rep.skipped = skipped;
  rep.variant = "conditional moments given (cell, Y interval); " + rep.variant;
  return rep;
}

ValidityReport first_stage_nonneg_test(const Dataset& ds, const CellTable& ct, const ValidityOptions& opts) {
  Layout L(ds, &ct, nullptr);
  require_both_arms(L);
  std::vector<Moment> moments;
  for (std::size_t c = 0; c < L.cells(); ++c) {
    Moment m = arm_difference(L, c, 1, 1, 0, 1);
    m.label = fmt::format("cell {}", L.label(c));
    moments.push_back(std::move(m));
  }
  auto rep = run_max_test("FS", L, moments, opts);
  rep.conditional = true;
  rep.skipped = L.skipped_cells();
  return rep;
}

}  // namespace ivlate
