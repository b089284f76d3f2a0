#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nowcast/basis.hpp"
#include "nowcast/dates.hpp"
#include "nowcast/fitcore.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

inline constexpr int kDefaultBootstrapDraws = 10000;

// One binomial observation of the continuation-ratio model: of the
// `trials` deaths registered on t and reported within d days, `successes`
// were reported exactly at delay d.
struct DelayRow {
  Date t;
  int d = 2;
  std::int64_t successes = 0;
  std::int64_t trials = 0;

  int weekday() const { return t.weekday(); }
};

// One row per observed cell with d >= 2 and C(t, d) > 0.
std::vector<DelayRow> assemble_delay_rows(const ReportingTriangle& tri);

// Extra covariate columns evaluated at any (t, d), including unobserved
// cells needed for the nowcast.
struct DelayCovariates {
  std::vector<std::string> names;
  std::function<std::vector<double>(Date t, int d)> values;
};

struct DelaySpecs {
  int time_basis = 10;
  int delay_basis = 10;
  int d_max = kDefaultMaxDelay;
  // Calendar range the fit may be evaluated on; defaults to the rows' range.
  std::optional<Date> first, last;
  bool weekday = true;
  DelayCovariates covariates;
  FitOptions options;
};

struct DelayFit {
  FitResult fit;
  Date first, last;
  int d_max = kDefaultMaxDelay;
  std::optional<DesignBlock> time_smooth;   // s1 over days since `first`
  std::optional<DesignBlock> delay_smooth;  // s2 over d
  std::vector<int> weekday_levels;          // retained non-reference levels, 1 = Tuesday
  DelayCovariates covariates;
  std::vector<std::string> warnings;

  // Weekday contrasts for Tuesday..Sunday; dropped levels read as 0.
  Eigen::VectorXd weekday_effects() const;
  // Constrained design row of the linear predictor at (t, d).
  Eigen::RowVectorXd design_row(Date t, int d) const;
  // Fitted hazard pi(d; t), optionally under another coefficient vector.
  double hazard(Date t, int d) const;
  double hazard(Date t, int d, const Eigen::VectorXd& beta) const;
};

DelayFit fit_delay(const std::vector<DelayRow>& rows, const DelaySpecs& specs = {});
// Convenience: assembles rows and evaluates on [t0, T - 1] with the
// triangle's d_max.
DelayFit fit_delay(const ReportingTriangle& tri, DelaySpecs specs = {});

struct DelaySurvival {
  Date t;
  Eigen::VectorXd F;  // F(d) at index d - 1, d = 1..d_max

  double at(int d) const { return F(d - 1); }
};

DelaySurvival survival_curve(const DelayFit& fit, Date t);
DelaySurvival survival_curve(const DelayFit& fit, Date t, const Eigen::VectorXd& beta);

struct NowcastResult {
  Date t;
  std::int64_t c_observed = 0;
  double f_hat = 1.0;
  double y_hat = 0.0;
  double pi_lower = 0.0;
  double pi_upper = 0.0;
  int n_boot = 0;  // 0: no interval was computed

  bool has_interval() const { return n_boot > 0; }
};

// Point nowcasts for every t in [t0, T - 1]; dates with t <= T - d_max are
// fully observed and returned with F = 1.
std::vector<NowcastResult> nowcast(const ReportingTriangle& tri, const DelayFit& fit);

// Point nowcasts plus 95% intervals from coefficient draws. Draw i uses a
// generator seeded from (seed, i), so results do not depend on the number
// of worker threads. When C(t, T - t) = 0 the interval is [0, q97.5 of
// 3 / F_i].
std::vector<NowcastResult> bootstrap_nowcast(const ReportingTriangle& tri, const DelayFit& fit,
                                             int n_boot = kDefaultBootstrapDraws, std::uint64_t seed = 1);

// log F_t(T - t) per date; 0 once t <= T - d_max.
Eigen::VectorXd offset_log_F(const DelayFit& fit, const std::vector<Date>& dates, Date T);

enum class Bound { Lower, Upper };

// Offsets equivalent to nowcasting with an interval bound instead of the
// point value: log(C / bound), capped at 0. Dates with C = 0 use
// log(3 / upper) for the upper bound and log F_hat for the lower bound.
Eigen::VectorXd bound_offsets(const std::vector<NowcastResult>& results, Bound which);

// Type-7 (linear interpolation) sample quantile; sorts a copy.
double quantile(std::vector<double> values, double p);

}  // namespace nowcast
