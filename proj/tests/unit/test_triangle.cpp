#include <algorithm>
#include <map>

#include <gtest/gtest.h>

#include "nowcast/csv.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/simgen.hpp"
#include "nowcast/triangle.hpp"
#include "support.hpp"

using namespace nowcast;
using nowcast::testing::Gen;
using nowcast::testing::TempDir;

namespace {

const Date kDay = Date::from_ymd(2020, 12, 1);

const char* kHeader = "download_date,district_id,age_group,gender,registration_date,cum_deaths\n";

SnapshotTable table(Date download, std::vector<std::pair<CaseKey, std::int64_t>> rows) {
  SnapshotTable t;
  t.download_date = download;
  for (auto& [k, c] : rows) t.rows.push_back(SnapshotRow{k, c});
  return t;
}

CaseKey key(const std::string& id, Date reg, AgeGroup a = AgeGroup::A80plus, Gender g = Gender::F) {
  return CaseKey{id, a, g, reg};
}

}  // namespace

TEST(Snapshot, ParsesValidRows) {
  const std::string text = std::string(kHeader) +
                           "2020-12-01,01001,A80+,F,2020-11-20,3\n"
                           "2020-12-01,01001,A60-79,M,2020-11-21,1\n"
                           "2020-12-01,05315,A15-34,F,2020-12-01,0\n";
  const auto t = parse_snapshot_text(text, "s.csv");
  EXPECT_EQ(t.download_date, kDay);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].cum_deaths, 3);
  EXPECT_EQ(t.rows[1].key.age, AgeGroup::A60_79);
  EXPECT_EQ(t.rows[2].key.gender, Gender::F);
}

TEST(Snapshot, NegativeCountIsValidationError) {
  const std::string text = std::string(kHeader) + "2020-12-01,01001,A80+,F,2020-11-20,-1\n";
  EXPECT_THROW(parse_snapshot_text(text, "s.csv"), ValidationError);
}

TEST(Snapshot, DuplicateKeyIsValidationError) {
  const std::string text = std::string(kHeader) +
                           "2020-12-01,01001,A80+,F,2020-11-20,1\n"
                           "2020-12-01,01001,A80+,F,2020-11-20,2\n";
  EXPECT_THROW(parse_snapshot_text(text, "s.csv"), ValidationError);
}

TEST(Snapshot, MalformedRowReportsLine) {
  const std::string text = std::string(kHeader) +
                           "2020-12-01,01001,A80+,F,2020-11-20,1\n"
                           "2020-12-01,01001,A99,F,2020-11-20,2\n";
  try {
    parse_snapshot_text(text, "s.csv");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("s.csv:3"), std::string::npos);
  }
}

TEST(Snapshot, RegistrationAfterDownloadRejected) {
  const std::string text = std::string(kHeader) + "2020-12-01,01001,A80+,F,2020-12-02,1\n";
  EXPECT_THROW(parse_snapshot_text(text, "s.csv"), ValidationError);
}

TEST(Snapshot, WrongHeaderRejected) {
  EXPECT_THROW(parse_snapshot_text("a,b,c\n1,2,3\n", "s.csv"), ParseError);
}

TEST(Snapshot, EmptyFileTakesDateFromName) {
  TempDir dir("empty_snapshot");
  csv::write_whole_file(dir.str("snapshot_2020-12-01.csv"), kHeader);
  const auto t = parse_snapshot(dir.str("snapshot_2020-12-01.csv"));
  EXPECT_EQ(t.download_date, kDay);
  EXPECT_TRUE(t.rows.empty());
  EXPECT_EQ(parse_snapshot_text(kHeader, "x.csv", kDay).download_date, kDay);
  EXPECT_THROW(parse_snapshot_text(kHeader, "snapshot.csv"), ParseError);
}

TEST(Snapshot, RoundTripMatchesCanonicalizer) {
  Gen g(11);
  for (int rep = 0; rep < 20; ++rep) {
    std::map<CaseKey, std::int64_t> rows;
    for (int i = 0; i < 40; ++i) {
      rows[key(std::to_string(1000 + g.integer(0, 5)), kDay - g.integer(0, 20), static_cast<AgeGroup>(g.integer(0, 3)),
               static_cast<Gender>(g.integer(0, 1)))] = g.integer(0, 50);
    }
    // Shuffled, CRLF text with padding: not canonical.
    std::vector<std::string> lines;
    for (const auto& [k, c] : rows) {
      lines.push_back(" 2020-12-01," + k.district_id + "," + std::string(to_string(k.age)) + "," +
                      std::string(to_string(k.gender)) + "," + k.registration.iso() + "," + std::to_string(c) + "\r\n");
    }
    std::shuffle(lines.begin(), lines.end(), g.engine());
    std::string text = kHeader;
    for (const auto& l : lines) text += l;

    const auto parsed = parse_snapshot_text(text, "s.csv");
    const std::string canonical = emit_snapshot(parsed);
    EXPECT_EQ(canonical, emit_snapshot(parse_snapshot_text(canonical, "c.csv")));
    // Independent canonical form: rows in key order (std::map order).
    std::string expected = kHeader;
    for (const auto& [k, c] : rows) {
      expected += "2020-12-01," + k.district_id + "," + std::string(to_string(k.age)) + "," +
                  std::string(to_string(k.gender)) + "," + k.registration.iso() + "," + std::to_string(c) + "\n";
    }
    EXPECT_EQ(canonical, expected);
  }
}

TEST(Diff, IncrementEmitsEvents) {
  const auto k = key("01001", kDay - 4);
  const auto r = diff_snapshots(table(kDay, {{k, 2}}), table(kDay + 1, {{k, 5}}));
  ASSERT_EQ(r.events.size(), 3u);
  for (const auto& e : r.events) {
    EXPECT_EQ(e.report, kDay + 1);
    EXPECT_EQ(e.delay, 5);
    EXPECT_EQ(e.district_id, "01001");
  }
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Diff, DecrementWarnsWithoutEvents) {
  const auto k = key("01001", kDay - 4);
  const auto r = diff_snapshots(table(kDay, {{k, 5}}), table(kDay + 1, {{k, 4}}));
  EXPECT_TRUE(r.events.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].previous, 5);
  EXPECT_EQ(r.warnings[0].current, 4);
}

TEST(Diff, NewKeyCountsFromZeroAndDelaysClamp) {
  const auto same_day = key("01001", kDay + 1);
  const auto old = key("01001", kDay - 60);
  const auto r = diff_snapshots(table(kDay, {}), table(kDay + 1, {{same_day, 1}, {old, 2}}), 30);
  ASSERT_EQ(r.events.size(), 3u);
  std::map<Date, int> delay_by_reg;
  for (const auto& e : r.events) delay_by_reg[e.registration] = e.delay;
  EXPECT_EQ(delay_by_reg[kDay + 1], 1);
  EXPECT_EQ(delay_by_reg[kDay - 60], 30);
}

TEST(Diff, RequiresConsecutiveDays) {
  EXPECT_THROW(diff_snapshots(table(kDay, {}), table(kDay + 2, {})), ValidationError);
}

TEST(Diff, AdditiveOverTwoSteps) {
  Gen g(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::map<CaseKey, std::int64_t> c0, c1, c2;
    for (int i = 0; i < 15; ++i) {
      const auto k = key(std::to_string(g.integer(1, 4)), kDay - g.integer(0, 10));
      const std::int64_t a = g.integer(0, 5);
      const std::int64_t b = a + g.integer(0, 5);
      c0[k] = a;
      c1[k] = b;
      c2[k] = b + g.integer(0, 5);
    }
    auto make = [](Date d, const std::map<CaseKey, std::int64_t>& m) {
      SnapshotTable t;
      t.download_date = d;
      for (const auto& [k, c] : m) t.rows.push_back(SnapshotRow{k, c});
      return t;
    };
    const auto s0 = make(kDay, c0), s1 = make(kDay + 1, c1), s2 = make(kDay + 2, c2);
    std::map<CaseKey, std::int64_t> total;
    for (const auto* r : {&s0, &s1}) (void)r;
    for (const auto& e : diff_snapshots(s0, s1).events) ++total[CaseKey{e.district_id, e.age, e.gender, e.registration}];
    for (const auto& e : diff_snapshots(s1, s2).events) ++total[CaseKey{e.district_id, e.age, e.gender, e.registration}];
    for (const auto& [k, c] : c2) EXPECT_EQ(total[k], c - c0[k]);
  }
}

TEST(Triangle, EmptyEventsGiveZeroTriangle) {
  const auto tri = build_triangle({}, kDay, kDay + 10, 5);
  EXPECT_EQ(tri.rows(), 11);
  EXPECT_EQ(tri.N.cols(), 5);
  EXPECT_EQ(tri.N.sum(), 0);
  EXPECT_EQ(tri.C.sum(), 0);
}

TEST(Triangle, SingleEvent) {
  const std::vector<DeathEvent> ev{DeathEvent{"01001", AgeGroup::A80plus, Gender::M, kDay, kDay + 3, 3}};
  const auto tri = build_triangle(ev, kDay, kDay + 10, 5);
  EXPECT_EQ(tri.n(kDay, 3), 1);
  EXPECT_EQ(tri.N.sum(), 1);
  for (int d = 1; d <= 5; ++d) EXPECT_EQ(tri.c(kDay, d), d >= 3 ? 1 : 0);
}

TEST(Triangle, ObservedMaskAndObservedTotal) {
  const auto tri = build_triangle({}, kDay, kDay + 10, 5);
  for (int i = 0; i < tri.rows(); ++i) {
    for (int d = 1; d <= 5; ++d) EXPECT_EQ(tri.is_observed(tri.date(i), d), tri.date(i) + d <= tri.T);
  }
  EXPECT_EQ(tri.observed_delay(kDay), 5);
  EXPECT_EQ(tri.observed_delay(kDay + 8), 2);
  EXPECT_EQ(tri.observed_delay(kDay + 10), 0);
  EXPECT_EQ(tri.observed_total(kDay + 10), 0);
}

TEST(Triangle, EventOutsideRangeRejected) {
  const std::vector<DeathEvent> ev{DeathEvent{"01001", AgeGroup::A80plus, Gender::M, kDay - 1, kDay + 3, 4}};
  EXPECT_THROW(build_triangle(ev, kDay, kDay + 10, 5), ValidationError);
}

TEST(Triangle, MatchesBruteForceRecount) {
  Gen g(21);
  for (int rep = 0; rep < 10; ++rep) {
    const Date T = kDay + 25;
    const int d_max = g.integer(3, 12);
    const auto events = nowcast::testing::random_events(g, kDay, T, 500, 20);
    const auto tri = build_triangle(events, kDay, T, d_max);
    for (int i = 0; i < tri.rows(); ++i) {
      for (int d = 1; d <= d_max; ++d) {
        std::int64_t n = 0, c = 0;
        for (const auto& e : events) {
          if (e.registration != tri.date(i)) continue;
          const int clamped = std::min(e.delay, d_max);
          n += clamped == d;
          c += clamped <= d;
        }
        EXPECT_EQ(tri.N(i, d - 1), n);
        EXPECT_EQ(tri.C(i, d - 1), c);
      }
    }
    EXPECT_EQ(tri.N.sum(), static_cast<std::int64_t>(events.size()));
  }
}

TEST(Triangle, PermutationInvariant) {
  Gen g(3);
  auto events = nowcast::testing::random_events(g, kDay, kDay + 20, 300, 25);
  const auto a = build_triangle(events, kDay, kDay + 20, 10);
  std::shuffle(events.begin(), events.end(), g.engine());
  const auto b = build_triangle(events, kDay, kDay + 20, 10);
  EXPECT_EQ(a.N, b.N);
  EXPECT_EQ(a.C, b.C);
}

TEST(Triangle, CumulativeIdentity) {
  Gen g(4);
  const auto tri = build_triangle(nowcast::testing::random_events(g, kDay, kDay + 20, 300, 25), kDay, kDay + 20, 10);
  for (int i = 0; i < tri.rows(); ++i) {
    for (int j = 0; j < 10; ++j) {
      EXPECT_EQ(tri.C(i, j) - (j > 0 ? tri.C(i, j - 1) : 0), tri.N(i, j));
      if (j > 0) EXPECT_GE(tri.C(i, j), tri.C(i, j - 1));
    }
  }
}

TEST(Triangle, FoldSumsTail) {
  Gen g(8);
  const auto events = nowcast::testing::random_events(g, kDay, kDay + 20, 300, 25);
  const auto full = build_triangle(events, kDay, kDay + 20, 12);
  const auto folded = fold_triangle(full, 7);
  const auto direct = build_triangle(events, kDay, kDay + 20, 7);
  EXPECT_EQ(folded.N, direct.N);
  EXPECT_EQ(folded.C, direct.C);
  EXPECT_THROW(fold_triangle(full, 13), ValidationError);
}

TEST(Triangle, TextRoundTrip) {
  Gen g(9);
  const auto tri = build_triangle(nowcast::testing::random_events(g, kDay, kDay + 15, 200, 10), kDay, kDay + 15, 8);
  const std::string text = emit_triangle(tri);
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,d,N,C,observed");
  const auto back = parse_triangle_text(text, "tri.csv");
  EXPECT_EQ(back.t0, tri.t0);
  EXPECT_EQ(back.T, tri.T);
  EXPECT_EQ(back.d_max, tri.d_max);
  EXPECT_EQ(back.N, tri.N);
  EXPECT_EQ(back.C, tri.C);
  EXPECT_EQ(back.observed, tri.observed);
  EXPECT_EQ(emit_triangle(back), text);
}

TEST(Triangle, ParseRejectsInconsistentCumulative) {
  const auto tri = build_triangle({DeathEvent{"1", AgeGroup::A80plus, Gender::M, kDay, kDay + 1, 1}}, kDay, kDay + 2, 2);
  std::string text = emit_triangle(tri);
  const auto pos = text.find(",1,1,1,1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, ",1,1,2,1");
  EXPECT_THROW(parse_triangle_text(text, "tri.csv"), ValidationError);
}

TEST(Events, TextRoundTrip) {
  Gen g(10);
  auto events = nowcast::testing::random_events(g, kDay, kDay + 15, 100, 10);
  std::sort(events.begin(), events.end());
  const auto text = emit_events(events);
  EXPECT_EQ(text.substr(0, text.find('\n')), "district_id,age_group,gender,registration_date,report_date,delay");
  auto back = parse_events_text(text, "events.csv");
  std::sort(back.begin(), back.end());
  EXPECT_EQ(back, events);
}

TEST(Aggregate, FullMarginalAndPartition) {
  Gen g(12);
  const auto events = nowcast::testing::random_events(g, kDay, kDay + 15, 400, 10);
  const auto all = aggregate_events(events, 0u);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].count, 400);

  const auto by_date = aggregate_events(events, kByRegistration);
  std::int64_t total = 0;
  for (const auto& r : by_date) {
    EXPECT_FALSE(r.district_id.has_value());
    ASSERT_TRUE(r.registration.has_value());
    std::int64_t direct = 0;
    for (const auto& e : events) direct += e.registration == *r.registration;
    EXPECT_EQ(r.count, direct);
    total += r.count;
  }
  EXPECT_EQ(total, 400);
  EXPECT_TRUE(std::is_sorted(by_date.begin(), by_date.end()));

  const auto fine = aggregate_events(events, kByDistrict | kByAgeGroup | kByGender | kByRegistration);
  std::int64_t fine_total = 0;
  for (const auto& r : fine) fine_total += r.count;
  EXPECT_EQ(fine_total, 400);
}

TEST(Aggregate, NationalCountsMatchSimulatorTruth) {
  const auto out = simulate(nowcast::testing::small_config(31, 9, 20));
  const auto by_date = aggregate_events(out.truth.events, kByRegistration);
  Eigen::VectorXd national = Eigen::VectorXd::Zero(out.truth.national.size());
  for (const auto& r : by_date) {
    if (*r.registration < out.truth.T) national(*r.registration - out.truth.t0) = static_cast<double>(r.count);
  }
  EXPECT_EQ(national, out.truth.national);
}

TEST(Ingest, SnapshotSequenceRecoversTruthEvents) {
  auto config = nowcast::testing::small_config(77, 9, 20);
  const auto out = simulate(config);
  std::vector<DeathEvent> recovered;
  for (std::size_t i = 1; i < out.snapshots.size(); ++i) {
    const auto r = diff_snapshots(out.snapshots[i - 1], out.snapshots[i], config.d_max);
    EXPECT_TRUE(r.warnings.empty());
    recovered.insert(recovered.end(), r.events.begin(), r.events.end());
  }
  // Deaths registered and reported on t0 are already in the first snapshot.
  std::vector<DeathEvent> expected;
  for (const auto& e : out.truth.events) {
    if (e.report <= out.truth.T && e.report > out.truth.t0) expected.push_back(e);
  }
  std::sort(recovered.begin(), recovered.end());
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(recovered, expected);
}
