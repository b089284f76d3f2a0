#include "nowcast/triangle.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <tuple>

#include "nowcast/csv.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

const std::vector<std::string> kSnapshotHeader = {"download_date", "district_id", "age_group",
                                                  "gender",        "registration_date", "cum_deaths"};
const std::vector<std::string> kTriangleHeader = {"t", "d", "N", "C", "observed"};
const std::vector<std::string> kEventHeader = {"district_id",       "age_group",   "gender",
                                               "registration_date", "report_date", "delay"};

std::optional<Date> date_from_filename(const std::string& path) {
  static const std::regex stamp(R"((\d{4}-\d{2}-\d{2}))");
  const auto slash = path.find_last_of('/');
  const std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  std::smatch m;
  if (std::regex_search(name, m, stamp)) {
    try {
      return Date::parse(m[1].str());
    } catch (const ParseError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

void fill_cumulative(ReportingTriangle& tri) {
  tri.C.resize(tri.N.rows(), tri.N.cols());
  for (Eigen::Index i = 0; i < tri.N.rows(); ++i) {
    std::int64_t acc = 0;
    for (Eigen::Index j = 0; j < tri.N.cols(); ++j) {
      acc += tri.N(i, j);
      tri.C(i, j) = acc;
    }
  }
}

void fill_mask(ReportingTriangle& tri) {
  tri.observed.resize(tri.N.rows(), tri.N.cols());
  for (Eigen::Index i = 0; i < tri.N.rows(); ++i) {
    for (Eigen::Index j = 0; j < tri.N.cols(); ++j) {
      tri.observed(i, j) = (tri.t0 + static_cast<int>(i)) + static_cast<int>(j + 1) <= tri.T;
    }
  }
}

}  // namespace

std::string_view to_string(AgeGroup a) {
  switch (a) {
    case AgeGroup::A15_34: return "A15-34";
    case AgeGroup::A35_59: return "A35-59";
    case AgeGroup::A60_79: return "A60-79";
    case AgeGroup::A80plus: return "A80+";
  }
  return "?";
}

std::string_view to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

AgeGroup parse_age_group(std::string_view s) {
  if (s == "A15-34") return AgeGroup::A15_34;
  if (s == "A35-59") return AgeGroup::A35_59;
  if (s == "A60-79") return AgeGroup::A60_79;
  if (s == "A80+") return AgeGroup::A80plus;
  throw ParseError("unknown age group '" + std::string(s) + "'");
}

Gender parse_gender(std::string_view s) {
  if (s == "M") return Gender::M;
  if (s == "F") return Gender::F;
  throw ParseError("unknown gender '" + std::string(s) + "'");
}

int ReportingTriangle::observed_delay(Date t) const { return std::clamp(T - t, 0, d_max); }

std::int64_t ReportingTriangle::observed_total(Date t) const {
  const int d = observed_delay(t);
  return d == 0 ? 0 : c(t, d);
}

// --- snapshots --------------------------------------------------------------

void validate_snapshot(const SnapshotTable& table, const std::string& source) {
  std::vector<const CaseKey*> keys;
  keys.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.cum_deaths < 0) {
      throw ValidationError(source + ": negative cum_deaths for district " + row.key.district_id +
                            " registered " + row.key.registration.iso());
    }
    if (row.key.registration > table.download_date) {
      throw ValidationError(source + ": registration_date " + row.key.registration.iso() +
                            " after download_date " + table.download_date.iso());
    }
    keys.push_back(&row.key);
  }
  std::sort(keys.begin(), keys.end(), [](const CaseKey* a, const CaseKey* b) { return *a < *b; });
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (*keys[i] == *keys[i - 1]) {
      throw ValidationError(source + ": duplicate key (" + keys[i]->district_id + "," +
                            std::string(to_string(keys[i]->age)) + "," +
                            std::string(to_string(keys[i]->gender)) + "," +
                            keys[i]->registration.iso() + ")");
    }
  }
}

SnapshotTable parse_snapshot_text(std::string_view text, const std::string& source,
                                  std::optional<Date> fallback_date) {
  const auto records = csv::read_text(text, source, kSnapshotHeader);
  SnapshotTable table;
  std::optional<Date> download;
  table.rows.reserve(records.size());
  for (const auto& rec : records) {
    const auto& f = rec.fields;
    try {
      const Date dl = Date::parse(f[0]);
      if (download && *download != dl) {
        throw ParseError(source, rec.line, "mixed download dates in one snapshot");
      }
      download = dl;
      SnapshotRow row;
      row.key.district_id = f[1];
      if (row.key.district_id.empty()) throw ParseError(source, rec.line, "empty district_id");
      row.key.age = parse_age_group(f[2]);
      row.key.gender = parse_gender(f[3]);
      row.key.registration = Date::parse(f[4]);
      row.cum_deaths = csv::parse_int(f[5], source, rec.line);
      table.rows.push_back(std::move(row));
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(source, rec.line, e.what());
    }
  }
  if (download) {
    table.download_date = *download;
  } else if (fallback_date) {
    table.download_date = *fallback_date;
  } else {
    throw ParseError(source + ": no rows and no YYYY-MM-DD stamp in file name to date the snapshot");
  }
  validate_snapshot(table, source);
  return table;
}

SnapshotTable parse_snapshot(const std::string& path) {
  return parse_snapshot_text(csv::read_whole_file(path), path, date_from_filename(path));
}

std::string emit_snapshot(const SnapshotTable& table) {
  std::vector<const SnapshotRow*> rows;
  rows.reserve(table.rows.size());
  for (const auto& r : table.rows) rows.push_back(&r);
  std::sort(rows.begin(), rows.end(),
            [](const SnapshotRow* a, const SnapshotRow* b) { return a->key < b->key; });

  std::string out = "download_date,district_id,age_group,gender,registration_date,cum_deaths\n";
  const std::string dl = table.download_date.iso();
  for (const auto* r : rows) {
    out += dl;
    out += ',';
    out += r->key.district_id;
    out += ',';
    out += to_string(r->key.age);
    out += ',';
    out += to_string(r->key.gender);
    out += ',';
    out += r->key.registration.iso();
    out += ',';
    out += std::to_string(r->cum_deaths);
    out += '\n';
  }
  return out;
}

DiffResult diff_snapshots(const SnapshotTable& prev, const SnapshotTable& curr, int d_max) {
  if (curr.download_date != prev.download_date + 1) {
    throw ValidationError("snapshots are not consecutive: " + prev.download_date.iso() + " -> " +
                          curr.download_date.iso());
  }
  std::map<CaseKey, std::pair<std::int64_t, std::int64_t>> counts;
  for (const auto& r : prev.rows) counts[r.key].first = r.cum_deaths;
  for (const auto& r : curr.rows) counts[r.key].second = r.cum_deaths;

  DiffResult out;
  for (const auto& [key, pc] : counts) {
    const auto [before, after] = pc;
    const std::int64_t delta = after - before;
    if (delta < 0) {
      out.warnings.push_back(DecrementWarning{curr.download_date, key, before, after});
      continue;
    }
    const int delay = std::clamp(curr.download_date - key.registration, 1, d_max);
    for (std::int64_t k = 0; k < delta; ++k) {
      out.events.push_back(DeathEvent{key.district_id, key.age, key.gender, key.registration,
                                      curr.download_date, delay});
    }
  }
  return out;
}

// --- triangle ---------------------------------------------------------------

ReportingTriangle build_triangle(const std::vector<DeathEvent>& events, Date t0, Date T, int d_max) {
  if (T < t0) throw ValidationError("triangle end " + T.iso() + " precedes start " + t0.iso());
  if (d_max < 1) throw ValidationError("d_max must be at least 1");
  ReportingTriangle tri;
  tri.t0 = t0;
  tri.T = T;
  tri.d_max = d_max;
  tri.N = CountMatrix::Zero(T - t0 + 1, d_max);
  for (const auto& e : events) {
    if (e.registration < t0 || e.registration > T) {
      throw ValidationError("event registered " + e.registration.iso() + " outside [" + t0.iso() +
                            ", " + T.iso() + "]");
    }
    const int d = std::clamp(e.delay, 1, d_max);
    tri.N(e.registration - t0, d - 1) += 1;
  }
  fill_cumulative(tri);
  fill_mask(tri);
  return tri;
}

ReportingTriangle fold_triangle(const ReportingTriangle& tri, int d_max) {
  if (d_max < 1 || d_max > tri.d_max) {
    throw ValidationError("cannot fold triangle with d_max " + std::to_string(tri.d_max) + " into " +
                          std::to_string(d_max));
  }
  ReportingTriangle out;
  out.t0 = tri.t0;
  out.T = tri.T;
  out.d_max = d_max;
  out.N = tri.N.leftCols(d_max);
  out.N.col(d_max - 1) = tri.N.rightCols(tri.d_max - d_max + 1).rowwise().sum();
  fill_cumulative(out);
  fill_mask(out);
  return out;
}

std::vector<GroupedCount> aggregate_events(const std::vector<DeathEvent>& events, unsigned keys) {
  using Key = std::tuple<std::optional<std::string>, std::optional<AgeGroup>, std::optional<Gender>,
                         std::optional<Date>>;
  std::map<Key, std::int64_t> acc;
  for (const auto& e : events) {
    Key k{(keys & kByDistrict) ? std::optional<std::string>(e.district_id) : std::nullopt,
          (keys & kByAgeGroup) ? std::optional<AgeGroup>(e.age) : std::nullopt,
          (keys & kByGender) ? std::optional<Gender>(e.gender) : std::nullopt,
          (keys & kByRegistration) ? std::optional<Date>(e.registration) : std::nullopt};
    acc[std::move(k)] += 1;
  }
  std::vector<GroupedCount> out;
  out.reserve(acc.size());
  for (auto& [k, n] : acc) {
    out.push_back(GroupedCount{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), n});
  }
  return out;
}

std::string emit_triangle(const ReportingTriangle& tri) {
  std::string out = "t,d,N,C,observed\n";
  for (int i = 0; i < tri.rows(); ++i) {
    const std::string t = tri.date(i).iso();
    for (int j = 0; j < tri.d_max; ++j) {
      out += t;
      out += ',';
      out += std::to_string(j + 1);
      out += ',';
      out += std::to_string(tri.N(i, j));
      out += ',';
      out += std::to_string(tri.C(i, j));
      out += ',';
      out += tri.observed(i, j) ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

ReportingTriangle parse_triangle_text(std::string_view text, const std::string& source) {
  const auto records = csv::read_text(text, source, kTriangleHeader);
  if (records.empty()) throw ParseError(source, 1, "triangle has no cells");

  struct Cell {
    Date t;
    int d;
    std::int64_t n, c;
    bool obs;
    std::size_t line;
  };
  std::vector<Cell> cells;
  cells.reserve(records.size());
  Date t0 = Date(std::numeric_limits<int>::max());
  Date T = Date(std::numeric_limits<int>::min());
  int d_max = 0;
  for (const auto& rec : records) {
    const auto& f = rec.fields;
    Cell cell{};
    try {
      cell.t = Date::parse(f[0]);
    } catch (const ParseError& e) {
      throw ParseError(source, rec.line, e.what());
    }
    cell.d = static_cast<int>(csv::parse_int(f[1], source, rec.line));
    cell.n = csv::parse_int(f[2], source, rec.line);
    cell.c = csv::parse_int(f[3], source, rec.line);
    if (f[4] != "0" && f[4] != "1") throw ParseError(source, rec.line, "observed must be 0 or 1");
    cell.obs = f[4] == "1";
    cell.line = rec.line;
    if (cell.d < 1) throw ParseError(source, rec.line, "delay must be >= 1");
    if (cell.n < 0 || cell.c < 0) throw ValidationError(source + ": negative count on line " + std::to_string(rec.line));
    t0 = std::min(t0, cell.t);
    T = std::max(T, cell.t);
    d_max = std::max(d_max, cell.d);
    cells.push_back(cell);
  }

  ReportingTriangle tri;
  tri.t0 = t0;
  tri.T = T;
  tri.d_max = d_max;
  tri.N = CountMatrix::Zero(T - t0 + 1, d_max);
  CountMatrix seen = CountMatrix::Zero(T - t0 + 1, d_max);
  CountMatrix given_c = CountMatrix::Zero(T - t0 + 1, d_max);
  for (const auto& cell : cells) {
    const int i = cell.t - t0, j = cell.d - 1;
    if (seen(i, j)++) throw ValidationError(source + ": duplicate cell on line " + std::to_string(cell.line));
    tri.N(i, j) = cell.n;
    given_c(i, j) = cell.c;
    if (cell.obs != (cell.t + cell.d <= T)) {
      throw ValidationError(source + ": observed flag inconsistent with t + d <= T on line " +
                            std::to_string(cell.line));
    }
  }
  if ((seen.array() == 0).any()) throw ValidationError(source + ": triangle is missing cells");
  fill_cumulative(tri);
  fill_mask(tri);
  if (tri.C != given_c) throw ValidationError(source + ": C is not the cumulative sum of N");
  return tri;
}

ReportingTriangle read_triangle(const std::string& path) {
  return parse_triangle_text(csv::read_whole_file(path), path);
}

// --- event log -------------------------------------------------------------

std::string emit_events(const std::vector<DeathEvent>& events) {
  std::string out = "district_id,age_group,gender,registration_date,report_date,delay\n";
  for (const auto& e : events) {
    out += e.district_id;
    out += ',';
    out += to_string(e.age);
    out += ',';
    out += to_string(e.gender);
    out += ',';
    out += e.registration.iso();
    out += ',';
    out += e.report.iso();
    out += ',';
    out += std::to_string(e.delay);
    out += '\n';
  }
  return out;
}

std::vector<DeathEvent> parse_events_text(std::string_view text, const std::string& source) {
  std::vector<DeathEvent> out;
  for (const auto& rec : csv::read_text(text, source, kEventHeader)) {
    const auto& f = rec.fields;
    try {
      DeathEvent e;
      e.district_id = f[0];
      if (e.district_id.empty()) throw ParseError("empty district_id");
      e.age = parse_age_group(f[1]);
      e.gender = parse_gender(f[2]);
      e.registration = Date::parse(f[3]);
      e.report = Date::parse(f[4]);
      e.delay = static_cast<int>(csv::parse_int(f[5], source, rec.line));
      if (e.delay < 1) throw ParseError("delay must be >= 1");
      out.push_back(std::move(e));
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(source, rec.line, e.what());
    }
  }
  return out;
}

std::vector<DeathEvent> read_events(const std::string& path) {
  return parse_events_text(csv::read_whole_file(path), path);
}

}  // namespace nowcast
