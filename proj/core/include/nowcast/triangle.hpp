#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "nowcast/dates.hpp"

namespace nowcast {

enum class AgeGroup : std::uint8_t { A15_34 = 0, A35_59 = 1, A60_79 = 2, A80plus = 3 };
enum class Gender : std::uint8_t { M = 0, F = 1 };

inline constexpr int kAgeGroups = 4;
inline constexpr int kGenders = 2;
inline constexpr int kDefaultMaxDelay = 30;

std::string_view to_string(AgeGroup a);
std::string_view to_string(Gender g);
AgeGroup parse_age_group(std::string_view s);
Gender parse_gender(std::string_view s);

// Demographic stratum g = (age group, gender).
struct Group {
  AgeGroup age = AgeGroup::A35_59;
  Gender gender = Gender::M;

  int index() const { return static_cast<int>(age) * kGenders + static_cast<int>(gender); }
  static Group from_index(int i) {
    return Group{static_cast<AgeGroup>(i / kGenders), static_cast<Gender>(i % kGenders)};
  }
  friend auto operator<=>(const Group&, const Group&) = default;
};

struct CaseKey {
  std::string district_id;
  AgeGroup age = AgeGroup::A35_59;
  Gender gender = Gender::M;
  Date registration;

  friend auto operator<=>(const CaseKey&, const CaseKey&) = default;
};

struct SnapshotRow {
  CaseKey key;
  std::int64_t cum_deaths = 0;
};

// One daily download of cumulative deaths per (district, age, gender,
// registration date).
struct SnapshotTable {
  Date download_date;
  std::vector<SnapshotRow> rows;
};

struct DeathEvent {
  std::string district_id;
  AgeGroup age = AgeGroup::A35_59;
  Gender gender = Gender::M;
  Date registration;
  Date report;
  int delay = 1;  // report - registration, clamped to [1, d_max]

  friend auto operator<=>(const DeathEvent&, const DeathEvent&) = default;
};

// A decrease of a cumulative count between consecutive snapshots. No events
// are emitted for the key; the record is kept for the warnings log.
struct DecrementWarning {
  Date download_date;
  CaseKey key;
  std::int64_t previous = 0;
  std::int64_t current = 0;
};

struct DiffResult {
  std::vector<DeathEvent> events;
  std::vector<DecrementWarning> warnings;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// N(t, d) increments and C(t, d) cumulative sums over registration date t in
// [t0, T] and delay d in [1, d_max]. Row i is date t0 + i, column j is delay
// j + 1. Cells with t + d > T are unobserved; they normally hold zero, except
// that deaths reported on day T for registration T land in (T, 1).
struct ReportingTriangle {
  Date t0;
  Date T;
  int d_max = kDefaultMaxDelay;
  CountMatrix N;
  CountMatrix C;
  MaskMatrix observed;

  int rows() const { return static_cast<int>(N.rows()); }
  Date date(int row) const { return t0 + row; }

  std::int64_t n(Date t, int d) const { return N(t - t0, d - 1); }
  std::int64_t c(Date t, int d) const { return C(t - t0, d - 1); }
  bool is_observed(Date t, int d) const { return observed(t - t0, d - 1); }

  // Largest observed delay for date t, min(T - t, d_max); 0 when nothing is
  // observable yet.
  int observed_delay(Date t) const;
  // C(t, observed_delay(t)), the partial count known on day T.
  std::int64_t observed_total(Date t) const;
};

// --- snapshot files --------------------------------------------------------

// Parses a snapshot CSV. When the file has no data rows the download date
// is taken from a YYYY-MM-DD stamp in the file name.
SnapshotTable parse_snapshot(const std::string& path);
SnapshotTable parse_snapshot_text(std::string_view text, const std::string& source,
                                  std::optional<Date> fallback_date = std::nullopt);
void validate_snapshot(const SnapshotTable& table, const std::string& source);

// Canonical text: header, rows sorted by key, LF line endings.
std::string emit_snapshot(const SnapshotTable& table);

// --- transformations -------------------------------------------------------

DiffResult diff_snapshots(const SnapshotTable& prev, const SnapshotTable& curr,
                          int d_max = kDefaultMaxDelay);

ReportingTriangle build_triangle(const std::vector<DeathEvent>& events, Date t0, Date T,
                                 int d_max = kDefaultMaxDelay);

// Folds an existing triangle into a smaller maximum delay.
ReportingTriangle fold_triangle(const ReportingTriangle& tri, int d_max);

enum KeyField : unsigned {
  kByDistrict = 1u << 0,
  kByAgeGroup = 1u << 1,
  kByGender = 1u << 2,
  kByRegistration = 1u << 3,
};

struct GroupedCount {
  std::optional<std::string> district_id;
  std::optional<AgeGroup> age;
  std::optional<Gender> gender;
  std::optional<Date> registration;
  std::int64_t count = 0;

  friend auto operator<=>(const GroupedCount&, const GroupedCount&) = default;
};

// Sums event counts over the fields not in `keys` (a KeyField bitmask).
// Output is sorted by the retained key fields.
std::vector<GroupedCount> aggregate_events(const std::vector<DeathEvent>& events, unsigned keys);

// --- triangle files --------------------------------------------------------

std::string emit_triangle(const ReportingTriangle& tri);
ReportingTriangle parse_triangle_text(std::string_view text, const std::string& source);
ReportingTriangle read_triangle(const std::string& path);

// Event log: district_id,age_group,gender,registration_date,report_date,delay.
std::string emit_events(const std::vector<DeathEvent>& events);
std::vector<DeathEvent> parse_events_text(std::string_view text, const std::string& source);
std::vector<DeathEvent> read_events(const std::string& path);

}  // namespace nowcast
