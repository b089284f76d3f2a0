#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <gtest/gtest.h>

#include "nowcast/delay.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/simgen.hpp"
#include "support.hpp"

using namespace nowcast;
using nowcast::testing::Gen;

namespace {

const Date kT0 = Date::from_ymd(2020, 11, 2);

double logit(double p) { return std::log(p / (1 - p)); }

// A fitted model whose coefficients are replaced so that the hazard is the
// constant p at every (t, d).
DelayFit constant_hazard_fit(const ReportingTriangle& tri, double p) {
  DelayFit f = fit_delay(tri);
  f.fit.beta.setZero();
  f.fit.beta(0) = logit(p);
  return f;
}

ReportingTriangle sample_triangle(std::uint64_t seed, int days = 40, int d_max = 12, double mean = 60) {
  Gen g(seed);
  return nowcast::testing::constant_hazard_triangle(g, kT0, kT0 + days, d_max, 0.15, mean);
}

}  // namespace

TEST(DelayRows, SingleEvent) {
  const std::vector<DeathEvent> ev{DeathEvent{"1", AgeGroup::A80plus, Gender::M, kT0, kT0 + 3, 3}};
  const auto tri = build_triangle(ev, kT0, kT0 + 10, 5);
  const auto rows = assemble_delay_rows(tri);
  // C(t0, 2) = 0 carries no information; d = 3, 4, 5 each have one trial.
  ASSERT_EQ(rows.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[static_cast<std::size_t>(i)].t, kT0);
    EXPECT_EQ(rows[static_cast<std::size_t>(i)].d, 3 + i);
    EXPECT_EQ(rows[static_cast<std::size_t>(i)].trials, 1);
    EXPECT_EQ(rows[static_cast<std::size_t>(i)].successes, i == 0 ? 1 : 0);
  }
}

TEST(DelayRows, EmptyTriangleGivesNoRows) {
  EXPECT_TRUE(assemble_delay_rows(build_triangle({}, kT0, kT0 + 10, 5)).empty());
}

TEST(DelayRows, SuccessesMatchRecount) {
  Gen g(1);
  for (int rep = 0; rep < 10; ++rep) {
    const Date T = kT0 + 30;
    const int d_max = g.integer(3, 15);
    const auto tri = build_triangle(nowcast::testing::random_events(g, kT0, T, 400, 20), kT0, T, d_max);
    const auto rows = assemble_delay_rows(tri);
    for (Date t = kT0; t <= T; t = t + 1) {
      std::int64_t succ = 0;
      for (const auto& r : rows) {
        if (r.t != t) continue;
        succ += r.successes;
        EXPECT_LE(r.successes, r.trials);
        EXPECT_GT(r.trials, 0);
        EXPECT_LE(r.t + r.d, T);
        EXPECT_GE(r.d, 2);
      }
      const int dobs = std::min(T - t, d_max);
      const std::int64_t expect = dobs >= 1 ? tri.c(t, dobs) - tri.n(t, 1) : 0;
      EXPECT_EQ(succ, expect) << t.iso();
    }
  }
}

TEST(DelayFitTest, RecoversConstantHazard) {
  Gen g(2);
  const auto tri = nowcast::testing::constant_hazard_triangle(g, kT0, kT0 + 60, 15, 0.1, 3000);
  const auto f = fit_delay(tri);
  double worst = 0;
  for (Date t = kT0; t < tri.T; t = t + 1) {
    for (int d = 2; d <= 15; ++d) worst = std::max(worst, std::abs(f.hazard(t, d) - 0.1));
  }
  EXPECT_LE(worst, 0.02);
}

TEST(DelayFitTest, WeekdayTransform) {
  EXPECT_NEAR(std::exp(0.268), 1.307, 5e-4);
  const auto tri = sample_triangle(3);
  auto f = fit_delay(tri);
  ASSERT_EQ(f.weekday_levels.size(), 6u);
  f.fit.beta.setZero();
  f.fit.beta(1 + 4) = 0.268;  // Saturday
  const Date saturday = kT0 + 5;
  ASSERT_EQ(saturday.weekday(), 5);
  const double odds_sat = f.hazard(saturday, 4) / (1 - f.hazard(saturday, 4));
  const double odds_mon = f.hazard(kT0, 4) / (1 - f.hazard(kT0, 4));
  EXPECT_NEAR(odds_sat / odds_mon, std::exp(0.268), 1e-12);
  EXPECT_DOUBLE_EQ(f.weekday_effects()(4), 0.268);
}

TEST(DelayFitTest, SingleWeekdayFitsReferenceOnly) {
  std::vector<DelayRow> rows;
  Gen g(4);
  for (int w = 0; w < 6; ++w) {
    const Date t = kT0 + 2 + 7 * w;  // Wednesdays
    for (int d = 2; d <= 8; ++d) {
      const auto trials = g.integer(20, 60);
      rows.push_back(DelayRow{t, d, g.binomial(trials, 0.2), trials});
    }
  }
  DelaySpecs specs;
  specs.d_max = 8;
  const auto f = fit_delay(rows, specs);
  EXPECT_TRUE(f.weekday_levels.empty());
  EXPECT_FALSE(f.warnings.empty());
  EXPECT_TRUE(f.fit.converged);
  EXPECT_EQ(f.weekday_effects(), Eigen::VectorXd::Zero(6));
}

TEST(DelayFitTest, RejectsEmptyRows) { EXPECT_THROW(fit_delay(std::vector<DelayRow>{}), ValidationError); }

TEST(Survival, ZeroAndConstantHazardClosedForms) {
  const auto tri = sample_triangle(5);
  const auto zero = constant_hazard_fit(tri, 0.5);
  auto z = zero;
  z.fit.beta(0) = -1000.0;
  for (Date t = kT0; t < tri.T; t = t + 3) {
    const auto s = survival_curve(z, t);
    for (int d = 1; d <= tri.d_max; ++d) EXPECT_EQ(s.at(d), 1.0);
  }
  for (double p : {0.05, 0.3, 0.8}) {
    const auto f = constant_hazard_fit(tri, p);
    const auto s = survival_curve(f, kT0 + 7);
    for (int d = 1; d <= tri.d_max; ++d) EXPECT_NEAR(s.at(d), std::pow(1 - p, tri.d_max - d), 1e-12);
  }
}

TEST(Survival, IdentitiesOnFittedModels) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto tri = sample_triangle(seed);
    const auto f = fit_delay(tri);
    for (Date t = kT0; t < tri.T; t = t + 1) {
      const auto s = survival_curve(f, t);
      EXPECT_EQ(s.at(tri.d_max), 1.0);
      for (int d = 1; d < tri.d_max; ++d) {
        EXPECT_LE(s.at(d), s.at(d + 1));
        EXPECT_GT(s.at(d), 0.0);
        EXPECT_NEAR(s.at(d), (1 - f.hazard(t, d + 1)) * s.at(d + 1), 1e-12);
        // Independent recomputation of the product.
        double prod = 1.0;
        for (int k = d + 1; k <= tri.d_max; ++k) prod *= 1 - inverse_link(Family::QuasiBinomial, f.design_row(t, k).dot(f.fit.beta));
        EXPECT_NEAR(s.at(d), prod, 1e-12);
      }
    }
  }
}

TEST(Survival, ExtrapolationRejected) {
  const auto tri = sample_triangle(6);
  const auto f = fit_delay(tri);
  EXPECT_THROW(survival_curve(f, tri.T), ValidationError);
  EXPECT_THROW(survival_curve(f, kT0 - 1), ValidationError);
}

TEST(Nowcast, PaperNarrativeExample) {
  // 25 deaths reported so far with half of them expected to be reported.
  const int d_max = 10;
  std::vector<DeathEvent> ev;
  const Date T = kT0 + 20;
  const Date t = T - 4;
  for (int i = 0; i < 25; ++i) ev.push_back(DeathEvent{"1", AgeGroup::A80plus, Gender::M, t, t + 2, 2});
  Gen g(7);
  const auto base = nowcast::testing::constant_hazard_triangle(g, kT0, T, d_max, 0.2, 40);
  const auto tri = build_triangle(ev, kT0, T, d_max);
  // Hazard p with (1 - p)^(d_max - 4) = 0.5.
  const double p = 1 - std::pow(0.5, 1.0 / (d_max - 4));
  const auto f = constant_hazard_fit(base, p);
  const auto res = nowcast::nowcast(tri, f);
  const auto& r = res[static_cast<std::size_t>(t - kT0)];
  EXPECT_EQ(r.c_observed, 25);
  EXPECT_NEAR(r.f_hat, 0.5, 1e-12);
  EXPECT_NEAR(r.y_hat, 50.0, 1e-9);
}

TEST(Nowcast, FullyObservedDatesAreExact) {
  const auto tri = sample_triangle(8);
  const auto f = fit_delay(tri);
  for (const auto& r : nowcast::nowcast(tri, f)) {
    EXPECT_GE(r.y_hat, static_cast<double>(r.c_observed));
    if (r.t <= tri.T - tri.d_max) {
      EXPECT_EQ(r.f_hat, 1.0);
      EXPECT_EQ(r.y_hat, static_cast<double>(tri.c(r.t, tri.d_max)));
    }
  }
}

TEST(Nowcast, DependsOnlyOnObservedCells) {
  const auto tri = sample_triangle(9);
  const auto f = fit_delay(tri);
  auto mutated = tri;
  for (int i = 0; i < tri.rows(); ++i) {
    for (int j = 0; j < tri.d_max; ++j) {
      if (!tri.observed(i, j)) {
        mutated.N(i, j) += 7;
        mutated.C(i, j) += 100;
      }
    }
  }
  const auto a = bootstrap_nowcast(tri, f, 300, 4);
  const auto b = bootstrap_nowcast(mutated, f, 300, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].y_hat, b[i].y_hat);
    EXPECT_EQ(a[i].pi_lower, b[i].pi_lower);
    EXPECT_EQ(a[i].pi_upper, b[i].pi_upper);
  }
}

TEST(Bootstrap, ReproducibleAndThreadInvariant) {
  const auto tri = sample_triangle(10);
  const auto f = fit_delay(tri);
  ::setenv("NOWCAST_THREADS", "1", 1);
  const auto a = bootstrap_nowcast(tri, f, 1000, 99);
  const auto b = bootstrap_nowcast(tri, f, 1000, 99);
  ::setenv("NOWCAST_THREADS", "3", 1);
  const auto c = bootstrap_nowcast(tri, f, 1000, 99);
  ::unsetenv("NOWCAST_THREADS");
  const auto d = bootstrap_nowcast(tri, f, 1000, 100);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pi_lower, b[i].pi_lower);
    EXPECT_EQ(a[i].pi_upper, b[i].pi_upper);
    EXPECT_EQ(a[i].pi_lower, c[i].pi_lower);
    EXPECT_EQ(a[i].pi_upper, c[i].pi_upper);
    differs = differs || a[i].pi_upper != d[i].pi_upper;
  }
  EXPECT_TRUE(differs);
}

TEST(Bootstrap, IntervalsBracketPointNowcast) {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const auto tri = sample_triangle(seed);
    const auto f = fit_delay(tri);
    for (const auto& r : bootstrap_nowcast(tri, f, 2000, seed)) {
      EXPECT_TRUE(r.has_interval());
      EXPECT_LE(r.pi_lower, r.y_hat);
      EXPECT_GE(r.pi_upper, r.y_hat);
      EXPECT_GE(r.y_hat, static_cast<double>(r.c_observed));
    }
  }
}

TEST(Bootstrap, ZeroCovarianceIsDegenerate) {
  const auto tri = sample_triangle(11);
  auto f = fit_delay(tri);
  f.fit.cov.setZero();
  for (const auto& r : bootstrap_nowcast(tri, f, 200, 1)) {
    if (r.c_observed > 0) {
      EXPECT_NEAR(r.pi_lower, r.y_hat, 1e-9 * r.y_hat);
      EXPECT_NEAR(r.pi_upper, r.y_hat, 1e-9 * r.y_hat);
    }
  }
}

TEST(Bootstrap, IndefiniteCovarianceRejected) {
  const auto tri = sample_triangle(12);
  auto f = fit_delay(tri);
  f.fit.cov = -Eigen::MatrixXd::Identity(f.fit.cov.rows(), f.fit.cov.cols());
  EXPECT_THROW(bootstrap_nowcast(tri, f, 10, 1), FitError);
}

TEST(Bootstrap, NoDrawsMeansNoInterval) {
  const auto tri = sample_triangle(13);
  const auto f = fit_delay(tri);
  for (const auto& r : bootstrap_nowcast(tri, f, 0, 1)) EXPECT_FALSE(r.has_interval());
}

TEST(Bootstrap, ZeroCountUsesRuleOfThree) {
  const int d_max = 10;
  const Date T = kT0 + 30;
  Gen g(14);
  const auto base = nowcast::testing::constant_hazard_triangle(g, kT0, T, d_max, 0.2, 50);
  // Same triangle with the newest partially observed date emptied.
  std::vector<DeathEvent> ev;
  for (int i = 0; i < base.rows(); ++i) {
    for (int d = 1; d <= d_max; ++d) {
      const Date t = base.date(i);
      if (t == T - 2) continue;
      for (std::int64_t k = 0; k < base.N(i, d - 1); ++k) ev.push_back(DeathEvent{"1", AgeGroup::A80plus, Gender::M, t, t + d, d});
    }
  }
  const auto tri = build_triangle(ev, kT0, T, d_max);
  const auto f = fit_delay(tri);
  const auto res = bootstrap_nowcast(tri, f, 2000, 5);
  const auto& r = res[static_cast<std::size_t>(T - 2 - kT0)];
  EXPECT_EQ(r.c_observed, 0);
  EXPECT_EQ(r.y_hat, 0.0);
  EXPECT_EQ(r.pi_lower, 0.0);
  // Every draw is 3 / F_i with F_i < 1.
  EXPECT_GT(r.pi_upper, 3.0);
}

TEST(Offsets, DefinitionalProperties) {
  const auto tri = sample_triangle(15);
  const auto f = fit_delay(tri);
  std::vector<Date> dates;
  for (Date t = kT0; t < tri.T; t = t + 1) dates.push_back(t);
  const Eigen::VectorXd off = offset_log_F(f, dates, tri.T);
  for (std::size_t i = 0; i < dates.size(); ++i) {
    const int d = tri.T - dates[i];
    EXPECT_LE(off(static_cast<Eigen::Index>(i)), 0.0);
    if (d >= tri.d_max) {
      EXPECT_EQ(off(static_cast<Eigen::Index>(i)), 0.0);
    } else {
      EXPECT_NEAR(std::exp(off(static_cast<Eigen::Index>(i))), survival_curve(f, dates[i]).at(d), 1e-12);
    }
  }
  EXPECT_THROW(offset_log_F(f, {tri.T}, tri.T), ValidationError);
}

TEST(Offsets, BoundOffsets) {
  std::vector<NowcastResult> r(3);
  r[0] = NowcastResult{kT0, 20, 0.5, 40.0, 30.0, 60.0, 100};
  r[1] = NowcastResult{kT0 + 1, 0, 0.25, 0.0, 0.0, 24.0, 100};
  r[2] = NowcastResult{kT0 + 2, 10, 1.0, 10.0, 10.0, 10.0, 100};
  const auto up = bound_offsets(r, Bound::Upper);
  const auto lo = bound_offsets(r, Bound::Lower);
  EXPECT_NEAR(up(0), std::log(20.0 / 60.0), 1e-15);
  EXPECT_NEAR(lo(0), std::log(20.0 / 30.0), 1e-15);
  EXPECT_NEAR(up(1), std::log(3.0 / 24.0), 1e-15);
  EXPECT_NEAR(lo(1), std::log(0.25), 1e-15);
  EXPECT_EQ(up(2), 0.0);
  EXPECT_EQ(lo(2), 0.0);
  r[0].n_boot = 0;
  EXPECT_THROW(bound_offsets(r, Bound::Upper), ValidationError);
}

TEST(Quantile, TypeSeven) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.975), 5.0);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.975), 9.75);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Nowcast, RecoversSimulatedTruth) {
  // Median relative error over replicates for dates with at least 20 deaths.
  std::vector<double> errors;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    GridOptions o;
    o.districts = 30;
    o.days = 45;
    o.seed = seed;
    o.deaths_per_million = 150.0;
    const auto out = simulate(grid_config(o));
    const auto tri = out.truth.observed();
    const auto f = fit_delay(tri);
    for (const auto& r : nowcast::nowcast(tri, f)) {
      const double y = out.truth.national_at(r.t);
      if (r.t > tri.T - tri.d_max && y >= 20) errors.push_back(std::abs(r.y_hat - y) / y);
    }
  }
  ASSERT_FALSE(errors.empty());
  std::nth_element(errors.begin(), errors.begin() + static_cast<long>(errors.size() / 2), errors.end());
  EXPECT_LE(errors[errors.size() / 2], 0.25);
}
