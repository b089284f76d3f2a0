#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "nowcast/delay.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/serialize.hpp"
#include "nowcast/simgen.hpp"
#include "support.hpp"

using namespace nowcast;

namespace {

const Date kT0 = Date::from_ymd(2020, 11, 2);

SimConfig one_cell_config(double lambda, std::uint64_t seed) {
  SimConfig c;
  c.t0 = kT0;
  c.T = kT0 + 1;
  c.d_max = 5;
  SimDistrict d;
  d.id = "X";
  d.pop[Group{AgeGroup::A35_59, Gender::M}.index()] = 100000;
  c.districts.push_back(d);
  c.intercept = std::log(lambda / 100000.0);
  c.seed = seed;
  return c;
}

std::vector<DeathEvent> ingest(const SimOutput& out, int d_max) {
  std::vector<DeathEvent> events;
  for (std::size_t i = 1; i < out.snapshots.size(); ++i) {
    const auto r = diff_snapshots(out.snapshots[i - 1], out.snapshots[i], d_max);
    EXPECT_TRUE(r.warnings.empty());
    events.insert(events.end(), r.events.begin(), r.events.end());
  }
  return events;
}

}  // namespace

TEST(Simulate, ZeroIntensityGivesEmptySnapshots) {
  auto c = nowcast::testing::small_config(1, 4, 10);
  c.intercept = -800.0;
  const auto out = simulate(c);
  ASSERT_EQ(out.snapshots.size(), 11u);
  for (const auto& s : out.snapshots) EXPECT_TRUE(s.rows.empty());
  EXPECT_TRUE(out.truth.events.empty());
  EXPECT_EQ(out.truth.national.sum(), 0.0);
}

TEST(Simulate, ZeroHazardReportsEverythingAtDelayOne) {
  auto c = nowcast::testing::small_config(2, 4, 15);
  c.delay.constant = 0.0;
  const auto out = simulate(c);
  ASSERT_FALSE(out.truth.events.empty());
  for (const auto& e : out.truth.events) EXPECT_EQ(e.delay, 1);
  const auto tri = out.truth.observed();
  EXPECT_EQ(tri.N.col(0).sum(), tri.N.sum());
  for (Date t = c.t0; t < c.T; t = t + 1) {
    const auto f = true_F(c, t);
    for (int d = 1; d <= c.d_max; ++d) EXPECT_EQ(f(d - 1), 1.0);
  }
}

TEST(Simulate, PipelineClosureMatchesTruthTriangle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = nowcast::testing::small_config(seed, 9, 25);
    const auto out = simulate(c);
    // Snapshots go through their text form, as on disk.
    std::vector<SnapshotTable> parsed;
    for (const auto& s : out.snapshots) {
      parsed.push_back(parse_snapshot_text(emit_snapshot(s), "snapshot.csv", s.download_date));
    }
    SimOutput reread = out;
    reread.snapshots = parsed;
    const auto tri = build_triangle(ingest(reread, c.d_max), parsed.front().download_date, parsed.back().download_date, c.d_max);
    const auto truth = out.truth.observed();
    EXPECT_EQ(tri.t0, truth.t0);
    EXPECT_EQ(tri.T, truth.T);
    EXPECT_EQ(tri.N, truth.N);
    EXPECT_EQ(tri.C, truth.C);
  }
}

TEST(Simulate, FullTriangleRowsSumToTruth) {
  const auto c = nowcast::testing::small_config(3, 9, 25);
  const auto out = simulate(c);
  for (Date t = c.t0; t < c.T; t = t + 1) {
    EXPECT_EQ(static_cast<double>(out.truth.full.N.row(t - c.t0).sum()), out.truth.national_at(t));
  }
  double cells = 0;
  for (const auto& cell : out.truth.cells) cells += static_cast<double>(cell.y);
  EXPECT_EQ(cells, out.truth.national.sum());
  EXPECT_EQ(static_cast<double>(out.truth.events.size()), out.truth.national.sum());
}

TEST(Simulate, ConservationOfIncrements) {
  const auto c = nowcast::testing::small_config(4, 9, 25);
  const auto out = simulate(c);
  const auto events = ingest(out, c.d_max);
  const auto reported = std::count_if(out.truth.events.begin(), out.truth.events.end(),
                                      [&](const DeathEvent& e) { return e.report <= c.T; });
  EXPECT_EQ(static_cast<long>(events.size()), reported);
}

TEST(Simulate, SeedDeterminism) {
  const auto c = nowcast::testing::small_config(5, 9, 20);
  const auto a = simulate(c);
  const auto b = simulate(c);
  ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) EXPECT_EQ(emit_snapshot(a.snapshots[i]), emit_snapshot(b.snapshots[i]));
  auto c2 = c;
  c2.seed = 6;
  const auto d = simulate(c2);
  EXPECT_NE(emit_snapshot(a.snapshots.back()), emit_snapshot(d.snapshots.back()));
}

TEST(Simulate, AddingADistrictLeavesOthersUntouched) {
  const auto c = nowcast::testing::small_config(7, 9, 20);
  auto bigger = c;
  SimDistrict extra = c.districts.front();
  extra.id = "ZZZZ";
  bigger.districts.insert(bigger.districts.begin(), extra);
  const auto a = simulate(c);
  const auto b = simulate(bigger);
  std::map<std::tuple<std::string, int, int>, std::int64_t> ya;
  for (const auto& cell : a.truth.cells) ya[{a.truth.districts[static_cast<std::size_t>(cell.district)], cell.group.index(), cell.t.days()}] = cell.y;
  std::size_t matched = 0;
  for (const auto& cell : b.truth.cells) {
    const auto& id = b.truth.districts[static_cast<std::size_t>(cell.district)];
    if (id == "ZZZZ") continue;
    EXPECT_EQ(cell.y, (ya[{id, cell.group.index(), cell.t.days()}]));
    ++matched;
  }
  EXPECT_EQ(matched, a.truth.cells.size());
  for (std::size_t r = 0; r < c.districts.size(); ++r) EXPECT_EQ(a.truth.u0(static_cast<Eigen::Index>(r)), b.truth.u0(static_cast<Eigen::Index>(r + 1)));
}

TEST(Simulate, MonteCarloMomentCheck) {
  const double lambda = 20.0;
  double sum = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) sum += simulate(one_cell_config(lambda, static_cast<std::uint64_t>(rep) + 1)).truth.national(0);
  const double mean = sum / reps;
  EXPECT_LE(std::abs(mean - lambda), 3 * std::sqrt(lambda / reps));
  const auto out = simulate(one_cell_config(lambda, 1));
  EXPECT_NEAR(out.truth.cells.at(0).lambda, lambda, 1e-9);
}

TEST(TrueF, ClosedFormsAndProduct) {
  auto c = nowcast::testing::small_config(8, 4, 20);
  c.delay.constant = 0.2;
  const auto f = true_F(c, c.t0 + 3);
  for (int d = 1; d <= c.d_max; ++d) EXPECT_NEAR(f(d - 1), std::pow(0.8, c.d_max - d), 1e-12);
  c.delay.constant.reset();
  for (Date t = c.t0; t < c.T; t = t + 1) {
    const auto g = true_F(c, t);
    EXPECT_EQ(g(c.d_max - 1), 1.0);
    for (int d = 1; d < c.d_max; ++d) {
      double prod = 1.0;
      for (int k = d + 1; k <= c.d_max; ++k) prod *= 1 - true_hazard(c, t, k);
      EXPECT_NEAR(g(d - 1), prod, 1e-12);
    }
  }
}

TEST(TrueF, MatchesLargeSampleDelayFit) {
  GridOptions o;
  o.districts = 20;
  o.days = 60;
  o.seed = 9;
  o.deaths_per_million = 2000.0;
  const auto c = grid_config(o);
  const auto out = simulate(c);
  const auto tri = out.truth.observed();
  const auto fit = fit_delay(tri);
  double worst = 0;
  for (Date t = c.t0; t < c.T; t = t + 1) {
    const auto s = survival_curve(fit, t);
    const auto truth = true_F(c, t);
    for (int d = 1; d <= c.d_max; ++d) worst = std::max(worst, std::abs(s.at(d) - truth(d - 1)));
  }
  EXPECT_LE(worst, 0.02);
}

TEST(TrueF, LogNormalModeMatchesEmpiricalDelays) {
  GridOptions o;
  o.districts = 10;
  o.days = 30;
  o.seed = 10;
  o.deaths_per_million = 2000.0;
  auto c = grid_config(o);
  c.delay.mode = DelayMode::LogNormal;
  const auto out = simulate(c);
  std::vector<double> count(static_cast<std::size_t>(c.d_max), 0.0);
  for (const auto& e : out.truth.events) {
    ASSERT_GE(e.delay, 1);
    ASSERT_LE(e.delay, c.d_max);
    count[static_cast<std::size_t>(e.delay - 1)] += 1;
  }
  const auto f = true_F(c, c.t0);
  double cum = 0;
  const double n = static_cast<double>(out.truth.events.size());
  ASSERT_GT(n, 10000);
  for (int d = 1; d <= c.d_max; ++d) {
    cum += count[static_cast<std::size_t>(d - 1)];
    EXPECT_NEAR(cum / n, f(d - 1), 0.02) << d;
  }
}

TEST(Config, JsonRoundTrip) {
  auto c = nowcast::testing::small_config(11, 5, 12);
  c.hotspots.push_back(Hotspot{c.districts[1].id, c.t0 + 2, c.t0 + 5, 4.0, {AgeGroup::A80plus}});
  c.delay.constant = 0.3;
  const auto text = json::emit_config(c);
  const auto back = json::parse_config(text, "config.json");
  EXPECT_EQ(json::emit_config(back), text);
  const auto a = simulate(c), b = simulate(back);
  EXPECT_EQ(emit_snapshot(a.snapshots.back()), emit_snapshot(b.snapshots.back()));
}

TEST(Config, ErrorsNameFieldPath) {
  const auto text = json::emit_config(nowcast::testing::small_config(12, 3, 10));
  auto expect_path = [](const std::string& doc, const std::string& path) {
    try {
      json::parse_config(doc, "config.json");
      FAIL() << "expected an input error mentioning " << path;
    } catch (const InputError& e) {
      EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
    }
  };
  std::string bad = text;
  bad.replace(bad.find("\"A80+/F\": "), 10, "\"A80+/F\": -");
  expect_path(bad, "districts[0].pop.A80+/F");
  bad = text;
  bad.replace(bad.find("\"d_max\": 30"), 11, "\"d_max\": \"x\"");
  expect_path(bad, "d_max");
  expect_path("{\"format\": \"nowcast-sim-config\"}", "format_version");
  auto c = nowcast::testing::small_config(12, 3, 10);
  c.delay.constant = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = nowcast::testing::small_config(12, 3, 10);
  c.hotspots.push_back(Hotspot{"nope", c.t0, c.t0, 2.0, {}});
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("hotspots[0].district_id"), std::string::npos) << e.what();
  }
}

TEST(Truth, JsonRoundTrip) {
  const auto c = nowcast::testing::small_config(13, 6, 15);
  const auto out = simulate(c);
  const auto s = json::parse_truth(json::emit_truth(out.truth), "truth.json");
  EXPECT_EQ(s.t0, c.t0);
  EXPECT_EQ(s.T, c.T);
  EXPECT_EQ(s.national, out.truth.national);
  EXPECT_EQ(s.observed_N, out.truth.observed().N);
  EXPECT_EQ(s.full_N, out.truth.full.N);
}

TEST(Grid, UsesPaperEffectsAndCalibratedRate) {
  GridOptions o;
  o.districts = 30;
  o.days = 40;
  o.seed = 14;
  const auto c = grid_config(o);
  EXPECT_EQ(c.districts.size(), 30u);
  EXPECT_DOUBLE_EQ(c.age[2], 4.645);
  EXPECT_DOUBLE_EQ(c.female, -0.503);
  EXPECT_DOUBLE_EQ(c.delay.weekday[5], 0.268);
  EXPECT_NO_THROW(c.validate());
  const auto out = simulate(c);
  std::int64_t pop = 0;
  for (const auto& d : c.districts) {
    for (auto p : d.pop) pop += p;
  }
  // Expected national daily deaths in the right order of magnitude.
  const double per_day = out.truth.national.mean();
  const double target = o.deaths_per_million * static_cast<double>(pop) / 1e6;
  EXPECT_GT(per_day, 0.3 * target);
  EXPECT_LT(per_day, 3.0 * target);
}
