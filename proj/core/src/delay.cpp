#include "nowcast/delay.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "nowcast/errors.hpp"
#include "nowcast/parallel.hpp"

namespace nowcast {

std::vector<DelayRow> assemble_delay_rows(const ReportingTriangle& tri) {
  std::vector<DelayRow> rows;
  for (int i = 0; i < tri.rows(); ++i) {
    for (int d = 2; d <= tri.d_max; ++d) {
      if (!tri.observed(i, d - 1)) continue;
      const std::int64_t c = tri.C(i, d - 1);
      if (c <= 0) continue;
      rows.push_back(DelayRow{tri.date(i), d, tri.N(i, d - 1), c});
    }
  }
  return rows;
}

// --- DelayFit -----------------------------------------------------------------

Eigen::VectorXd DelayFit::weekday_effects() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(6);
  if (!fit.has_term("weekday")) return out;
  const Eigen::VectorXd b = fit.coefficients("weekday");
  for (std::size_t j = 0; j < weekday_levels.size(); ++j) out(weekday_levels[j] - 1) = b(static_cast<Eigen::Index>(j));
  return out;
}

Eigen::RowVectorXd DelayFit::design_row(Date t, int d) const {
  if (t < first || t > last) {
    throw ValidationError("date " + t.iso() + " outside the fitted calendar range [" + first.iso() + ", " +
                          last.iso() + "]");
  }
  if (d < 1 || d > d_max) throw ValidationError("delay " + std::to_string(d) + " outside [1, d_max]");
  Eigen::RowVectorXd row(fit.beta.size());
  Eigen::Index k = 0;
  row(k++) = 1.0;
  const int wd = t.weekday();
  for (const int level : weekday_levels) row(k++) = wd == level ? 1.0 : 0.0;
  if (!covariates.names.empty()) {
    const auto v = covariates.values(t, d);
    if (v.size() != covariates.names.size()) throw ValidationError("covariate callback returned the wrong width");
    for (const double x : v) row(k++) = x;
  }
  if (time_smooth) {
    const double x = static_cast<double>(t - first);
    const Eigen::MatrixXd b = bspline_predict(*time_smooth, std::span<const double>(&x, 1));
    row.segment(k, b.cols()) = b.row(0);
    k += b.cols();
  }
  if (delay_smooth) {
    const double x = static_cast<double>(std::max(d, 2));
    const Eigen::MatrixXd b = bspline_predict(*delay_smooth, std::span<const double>(&x, 1));
    row.segment(k, b.cols()) = b.row(0);
    k += b.cols();
  }
  return row;
}

double DelayFit::hazard(Date t, int d) const { return hazard(t, d, fit.beta); }

double DelayFit::hazard(Date t, int d, const Eigen::VectorXd& beta) const {
  return inverse_link(Family::QuasiBinomial, design_row(t, d).dot(beta));
}

// --- fitting ------------------------------------------------------------------

DelayFit fit_delay(const std::vector<DelayRow>& rows, const DelaySpecs& specs) {
  if (rows.empty()) throw ValidationError("delay model needs at least one observed cell with d >= 2");
  if (specs.d_max < 2) throw ValidationError("d_max must be at least 2");

  DelayFit out;
  out.d_max = specs.d_max;
  out.covariates = specs.covariates;
  Date lo = rows.front().t, hi = rows.front().t;
  for (const auto& r : rows) {
    lo = std::min(lo, r.t);
    hi = std::max(hi, r.t);
  }
  out.first = specs.first.value_or(lo);
  out.last = specs.last.value_or(hi);
  if (out.last < out.first) throw ValidationError("empty calendar range for the delay model");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Response resp;
  resp.y.resize(n);
  resp.trials.resize(n);
  std::set<int> weekdays, delays, days;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (r.d < 2 || r.d > specs.d_max) throw ValidationError("delay row with d outside [2, d_max]");
    if (r.trials <= 0 || r.successes < 0 || r.successes > r.trials) {
      throw ValidationError("delay row at " + r.t.iso() + " needs 0 <= successes <= trials, trials > 0");
    }
    if (r.t < out.first || r.t > out.last) throw ValidationError("delay row date outside the calendar range");
    resp.y(i) = static_cast<double>(r.successes);
    resp.trials(i) = static_cast<double>(r.trials);
    weekdays.insert(r.weekday());
    delays.insert(r.d);
    days.insert(r.t - out.first);
  }

  ModelSpec spec;
  spec.family = Family::QuasiBinomial;
  spec.terms.push_back(fixed_term("intercept", Eigen::MatrixXd::Ones(n, 1)));

  if (specs.weekday) {
    int reference = 0;
    if (!weekdays.contains(0)) {
      reference = *weekdays.begin();
      out.warnings.push_back(std::string("no rows registered on Monday; ") + kWeekdayNames[reference] +
                             " absorbed into the intercept");
    }
    for (int level = 1; level < 7; ++level) {
      if (level == reference) continue;
      if (weekdays.contains(level)) {
        out.weekday_levels.push_back(level);
      } else {
        out.warnings.push_back(std::string("weekday level ") + kWeekdayNames[level] + " has no rows; dropped");
      }
    }
    if (!out.weekday_levels.empty()) {
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(out.weekday_levels.size()));
      for (Eigen::Index i = 0; i < n; ++i) {
        const int wd = rows[static_cast<std::size_t>(i)].weekday();
        for (std::size_t j = 0; j < out.weekday_levels.size(); ++j) {
          if (out.weekday_levels[j] == wd) w(i, static_cast<Eigen::Index>(j)) = 1.0;
        }
      }
      spec.terms.push_back(fixed_term("weekday", w));
    }
  }

  if (!specs.covariates.names.empty()) {
    const auto width = static_cast<Eigen::Index>(specs.covariates.names.size());
    Eigen::MatrixXd x(n, width);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      const auto v = specs.covariates.values(r.t, r.d);
      if (static_cast<Eigen::Index>(v.size()) != width) {
        throw ValidationError("covariate callback returned the wrong width");
      }
      for (Eigen::Index j = 0; j < width; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
    }
    spec.terms.push_back(fixed_term("covariates", x));
  }

  const int span = out.last - out.first;
  if (span >= 1 && days.size() >= 3) {
    const int k = std::min(specs.time_basis, std::max(4, static_cast<int>(days.size())));
    std::vector<double> x(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) x[i] = static_cast<double>(rows[i].t - out.first);
    out.time_smooth = bspline_design(x, BasisSpec::bspline(0.0, static_cast<double>(span), k));
    spec.terms.push_back(smooth_term("s_time", *out.time_smooth));
  } else {
    out.warnings.push_back("fewer than three registration dates; calendar-time smooth omitted");
  }

  if (specs.d_max > 2 && delays.size() >= 3) {
    const int k = std::min(specs.delay_basis, std::max(4, specs.d_max - 1));
    std::vector<double> x(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) x[i] = static_cast<double>(rows[i].d);
    out.delay_smooth = bspline_design(x, BasisSpec::bspline(2.0, static_cast<double>(specs.d_max), k));
    spec.terms.push_back(smooth_term("s_delay", *out.delay_smooth));
  } else {
    out.warnings.push_back("fewer than three distinct delays; delay smooth omitted");
  }

  out.fit = fit(spec, resp, specs.options);
  return out;
}

DelayFit fit_delay(const ReportingTriangle& tri, DelaySpecs specs) {
  if (tri.T - tri.t0 < 1) throw ValidationError("triangle has no complete registration day");
  specs.first = tri.t0;
  specs.last = tri.T - 1;
  specs.d_max = tri.d_max;
  return fit_delay(assemble_delay_rows(tri), specs);
}

// --- survival and nowcasts ---------------------------------------------------

DelaySurvival survival_curve(const DelayFit& fit, Date t) { return survival_curve(fit, t, fit.fit.beta); }

DelaySurvival survival_curve(const DelayFit& fit, Date t, const Eigen::VectorXd& beta) {
  DelaySurvival s{t, Eigen::VectorXd(fit.d_max)};
  s.F(fit.d_max - 1) = 1.0;
  for (int d = fit.d_max - 1; d >= 1; --d) s.F(d - 1) = (1.0 - fit.hazard(t, d + 1, beta)) * s.F(d);
  return s;
}

namespace {

void check_fit_covers(const ReportingTriangle& tri, const DelayFit& fit) {
  if (tri.d_max != fit.d_max) throw ValidationError("triangle and delay fit disagree on d_max");
  if (tri.T - 1 > fit.last || tri.t0 < fit.first) {
    throw ValidationError("delay fit does not cover the triangle's registration dates");
  }
}

double checked_ratio(std::int64_t c, double f, Date t) {
  if (!(f > 0.0) || !std::isfinite(f)) {
    throw FitError("reporting probability F is zero at " + t.iso() + "; cannot nowcast");
  }
  return static_cast<double>(c) / f;
}

}  // namespace

std::vector<NowcastResult> nowcast(const ReportingTriangle& tri, const DelayFit& fit) {
  check_fit_covers(tri, fit);
  std::vector<NowcastResult> out;
  for (Date t = tri.t0; t < tri.T; t = t + 1) {
    NowcastResult r;
    r.t = t;
    r.c_observed = tri.observed_total(t);
    const int d = tri.observed_delay(t);
    r.f_hat = d >= tri.d_max ? 1.0 : survival_curve(fit, t).at(d);
    r.y_hat = d >= tri.d_max ? static_cast<double>(r.c_observed) : checked_ratio(r.c_observed, r.f_hat, t);
    r.pi_lower = r.pi_upper = r.y_hat;
    out.push_back(r);
  }
  return out;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

std::vector<NowcastResult> bootstrap_nowcast(const ReportingTriangle& tri, const DelayFit& fit, int n_boot,
                                             std::uint64_t seed) {
  std::vector<NowcastResult> out = nowcast(tri, fit);
  if (n_boot <= 0) {
    for (auto& r : out) r.n_boot = 0;
    return out;
  }

  // Targets: partially observed dates. Their hazards only need rows (t, k)
  // for k in (T - t, d_max], stacked into one matrix.
  struct Target {
    std::size_t result;
    Eigen::Index first_row;
    int count;
  };
  std::vector<Target> targets;
  std::vector<Eigen::RowVectorXd> design;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int d = tri.observed_delay(out[i].t);
    if (d >= tri.d_max) continue;
    Target tg{i, static_cast<Eigen::Index>(design.size()), tri.d_max - d};
    for (int k = d + 1; k <= tri.d_max; ++k) design.push_back(fit.design_row(out[i].t, k));
    targets.push_back(tg);
  }
  for (auto& r : out) r.n_boot = n_boot;
  if (targets.empty()) return out;

  const Eigen::Index p = fit.fit.beta.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(design.size()), p);
  for (std::size_t i = 0; i < design.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = design[i];

  // Symmetric square root of V via its eigen-decomposition, which also
  // handles a rank-deficient or zero covariance.
  const Eigen::MatrixXd& v = fit.fit.cov;
  if (v.rows() != p || !v.allFinite()) throw FitError("coefficient covariance is missing or not finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (v + v.transpose()));
  if (es.info() != Eigen::Success) throw FitError("eigen-decomposition of the coefficient covariance failed");
  const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
  if ((es.eigenvalues().array() < -1e-8 * std::max(top, 1e-300)).any()) {
    throw FitError("coefficient covariance is not positive semi-definite");
  }
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const Eigen::MatrixXd xroot = x * root;
  const Eigen::VectorXd eta_hat = x * fit.fit.beta;

  const auto n_targets = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd draws(n_targets, n_boot);
  parallel_for(static_cast<std::size_t>(n_boot), [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd z(p);
    for (std::size_t b = begin; b < end; ++b) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> normal;
      for (Eigen::Index j = 0; j < p; ++j) z(j) = normal(rng);
      const Eigen::VectorXd eta = eta_hat + xroot * z;
      for (Eigen::Index k = 0; k < n_targets; ++k) {
        const Target& tg = targets[static_cast<std::size_t>(k)];
        double f = 1.0;
        for (int j = 0; j < tg.count; ++j) f *= 1.0 - inverse_link(Family::QuasiBinomial, eta(tg.first_row + j));
        const std::int64_t c = out[tg.result].c_observed;
        draws(k, static_cast<Eigen::Index>(b)) = c > 0 ? static_cast<double>(c) / f : 3.0 / f;
      }
    }
  });

  for (Eigen::Index k = 0; k < n_targets; ++k) {
    NowcastResult& r = out[targets[static_cast<std::size_t>(k)].result];
    std::vector<double> sample(static_cast<std::size_t>(n_boot));
    for (int b = 0; b < n_boot; ++b) sample[static_cast<std::size_t>(b)] = draws(k, b);
    if (!std::all_of(sample.begin(), sample.end(), [](double s) { return std::isfinite(s); })) {
      throw FitError("bootstrap draw produced a zero reporting probability at " + r.t.iso());
    }
    if (r.c_observed > 0) {
      r.pi_lower = quantile(sample, 0.025);
      r.pi_upper = quantile(sample, 0.975);
    } else {
      r.pi_lower = 0.0;
      r.pi_upper = quantile(sample, 0.975);
    }
  }
  return out;
}

Eigen::VectorXd offset_log_F(const DelayFit& fit, const std::vector<Date>& dates, Date T) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(dates.size()));
  for (std::size_t i = 0; i < dates.size(); ++i) {
    const int d = T - dates[i];
    if (d >= fit.d_max) {
      out(static_cast<Eigen::Index>(i)) = 0.0;
    } else if (d < 1) {
      throw ValidationError("no reporting has been observed yet for " + dates[i].iso());
    } else {
      out(static_cast<Eigen::Index>(i)) = std::log(survival_curve(fit, dates[i]).at(d));
    }
  }
  return out;
}

Eigen::VectorXd bound_offsets(const std::vector<NowcastResult>& results, Bound which) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(results.size()));
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!r.has_interval()) throw ValidationError("bound offsets need bootstrap intervals");
    double v;
    if (r.c_observed > 0) {
      const double bound = which == Bound::Upper ? r.pi_upper : r.pi_lower;
      v = std::log(static_cast<double>(r.c_observed) / bound);
    } else {
      v = which == Bound::Upper ? std::log(3.0 / r.pi_upper) : std::log(r.f_hat);
    }
    out(static_cast<Eigen::Index>(i)) = std::min(v, 0.0);
  }
  return out;
}

}  // namespace nowcast
