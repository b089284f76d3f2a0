#include "nowcast/mortality.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "nowcast/csv.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

const std::vector<std::string> kPopulationHeader = {"district_id", "age_group", "gender", "pop"};
const std::vector<std::string> kGeometryHeader = {"district_id", "lon", "lat"};
const std::vector<std::string> kOffsetHeader = {"t", "log_F"};

std::string key_name(const std::string& district, Group g) {
  return "(" + district + "," + std::string(to_string(g.age)) + "," + std::string(to_string(g.gender)) + ")";
}

template <typename Fn>
void with_line(const std::string& source, std::size_t line, Fn&& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    if (e.line() != 0) throw;
    throw ParseError(source, line, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(source, line, e.what());
  }
}

}  // namespace

// --- population -----------------------------------------------------------------

void PopulationTable::set(const std::string& district_id, Group g, std::int64_t pop) {
  if (pop <= 0) throw ValidationError("population for " + key_name(district_id, g) + " must be positive");
  if (!pop_.emplace(std::make_pair(district_id, g.index()), pop).second) {
    throw ValidationError("duplicate population entry " + key_name(district_id, g));
  }
}

std::optional<std::int64_t> PopulationTable::get(const std::string& district_id, Group g) const {
  const auto it = pop_.find({district_id, g.index()});
  if (it == pop_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> PopulationTable::districts() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : pop_) {
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  }
  return out;
}

std::vector<Group> PopulationTable::groups() const {
  std::set<int> idx;
  for (const auto& [key, _] : pop_) idx.insert(key.second);
  std::vector<Group> out;
  for (const int i : idx) out.push_back(Group::from_index(i));
  return out;
}

PopulationTable parse_population_text(std::string_view text, const std::string& source) {
  PopulationTable table;
  for (const auto& rec : csv::read_text(text, source, kPopulationHeader)) {
    with_line(source, rec.line, [&] {
      const auto& f = rec.fields;
      if (f[0].empty()) throw ParseError("empty district_id");
      table.set(f[0], Group{parse_age_group(f[1]), parse_gender(f[2])}, csv::parse_int(f[3], source, rec.line));
    });
  }
  return table;
}

PopulationTable read_population(const std::string& path) {
  return parse_population_text(csv::read_whole_file(path), path);
}

std::string emit_population(const PopulationTable& pop) {
  std::ostringstream out;
  out << "district_id,age_group,gender,pop\n";
  for (const auto& d : pop.districts()) {
    for (int gi = 0; gi < kAgeGroups * kGenders; ++gi) {
      const Group g = Group::from_index(gi);
      if (const auto v = pop.get(d, g)) {
        out << d << ',' << to_string(g.age) << ',' << to_string(g.gender) << ',' << *v << '\n';
      }
    }
  }
  return out.str();
}

// --- geometry -------------------------------------------------------------------

void DistrictGeometry::set(const std::string& district_id, double lon, double lat) {
  if (!std::isfinite(lon) || !std::isfinite(lat)) {
    throw ValidationError("centroid of district " + district_id + " is not finite");
  }
  if (!centroid_.emplace(district_id, std::array<double, 2>{lon, lat}).second) {
    throw ValidationError("duplicate centroid for district " + district_id);
  }
}

std::optional<std::array<double, 2>> DistrictGeometry::get(const std::string& district_id) const {
  const auto it = centroid_.find(district_id);
  if (it == centroid_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> DistrictGeometry::districts() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : centroid_) out.push_back(id);
  return out;
}

DistrictGeometry parse_geometry_text(std::string_view text, const std::string& source) {
  DistrictGeometry geo;
  for (const auto& rec : csv::read_text(text, source, kGeometryHeader)) {
    with_line(source, rec.line, [&] {
      const auto& f = rec.fields;
      if (f[0].empty()) throw ParseError("empty district_id");
      geo.set(f[0], csv::parse_double(f[1], source, rec.line), csv::parse_double(f[2], source, rec.line));
    });
  }
  return geo;
}

DistrictGeometry read_geometry(const std::string& path) {
  return parse_geometry_text(csv::read_whole_file(path), path);
}

std::string emit_geometry(const DistrictGeometry& geo) {
  std::string out = "district_id,lon,lat\n";
  for (const auto& d : geo.districts()) {
    const auto c = *geo.get(d);
    out += d + "," + csv::format_double(c[0]) + "," + csv::format_double(c[1]) + "\n";
  }
  return out;
}

// --- offsets --------------------------------------------------------------------

double OffsetSeries::at(Date t) const {
  if (!covers(t)) throw ValidationError("no log F offset for " + t.iso());
  return log_F(t - first);
}

OffsetSeries parse_offsets_text(std::string_view text, const std::string& source) {
  const auto records = csv::read_text(text, source, kOffsetHeader);
  if (records.empty()) throw ParseError(source + ": offsets file has no rows");
  OffsetSeries out;
  std::vector<double> values;
  for (const auto& rec : records) {
    with_line(source, rec.line, [&] {
      const Date t = Date::parse(rec.fields[0]);
      if (values.empty()) {
        out.first = t;
      } else if (t != out.first + static_cast<int>(values.size())) {
        throw ParseError("offset dates must be consecutive and ascending");
      }
      const double v = csv::parse_double(rec.fields[1], source, rec.line);
      if (!std::isfinite(v) || v > 0.0) throw ParseError("log F must be finite and nonpositive");
      values.push_back(v);
    });
  }
  out.log_F = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return out;
}

OffsetSeries read_offsets(const std::string& path) { return parse_offsets_text(csv::read_whole_file(path), path); }

std::string emit_offsets(const OffsetSeries& offsets) {
  std::string out = "t,log_F\n";
  for (Eigen::Index i = 0; i < offsets.log_F.size(); ++i) {
    out += (offsets.first + static_cast<int>(i)).iso() + "," + csv::format_double(offsets.log_F(i)) + "\n";
  }
  return out;
}

// --- cells ----------------------------------------------------------------------

int CellTable::district_index(const std::string& id) const {
  const auto it = std::lower_bound(districts.begin(), districts.end(), id);
  if (it == districts.end() || *it != id) return -1;
  return static_cast<int>(it - districts.begin());
}

CellTable assemble_cells(const std::vector<DeathEvent>& events, const PopulationTable& pop,
                         const DistrictGeometry& geo, const OffsetSeries& offsets, Date first, Date T,
                         int recent_days) {
  if (T - first < 1) throw ValidationError("cell window [" + first.iso() + ", " + (T - 1).iso() + "] is empty");
  CellTable tab;
  tab.first = first;
  tab.last = T - 1;
  tab.T = T;
  tab.districts = geo.districts();
  tab.groups = pop.groups();
  if (tab.districts.empty()) throw ValidationError("geometry lists no districts");
  if (tab.groups.empty()) throw ValidationError("population table is empty");

  const int n_days = tab.last - tab.first + 1;
  const int n_groups = static_cast<int>(tab.groups.size());
  const int n_dist = static_cast<int>(tab.districts.size());
  for (Date t = tab.first; t <= tab.last; t = t + 1) {
    if (!offsets.covers(t)) throw ValidationError("offsets do not cover registration date " + t.iso());
  }

  std::vector<int> group_slot(kAgeGroups * kGenders, -1);
  for (int g = 0; g < n_groups; ++g) group_slot[tab.groups[g].index()] = g;

  tab.centroids.resize(n_dist);
  tab.district_population.assign(n_dist, 0);
  std::vector<double> log_pop(static_cast<std::size_t>(n_dist * n_groups));
  for (int r = 0; r < n_dist; ++r) {
    tab.centroids[r] = *geo.get(tab.districts[r]);
    for (int g = 0; g < n_groups; ++g) {
      const auto p = pop.get(tab.districts[r], tab.groups[g]);
      if (!p) throw ValidationError("missing population for " + key_name(tab.districts[r], tab.groups[g]));
      tab.district_population[r] += *p;
      log_pop[static_cast<std::size_t>(r * n_groups + g)] = std::log(static_cast<double>(*p));
    }
  }
  for (const auto& d : pop.districts()) {
    if (!geo.get(d)) throw ValidationError("missing centroid for district " + d);
  }

  // Cell index: ((t * R) + r) * G + g.
  std::vector<double> y(static_cast<std::size_t>(n_days) * n_dist * n_groups, 0.0);
  for (const auto& e : events) {
    if (e.registration < tab.first || e.registration > tab.last || e.report > T) continue;
    const int r = tab.district_index(e.district_id);
    if (r < 0) throw ValidationError("missing centroid for district " + e.district_id);
    const int g = group_slot[Group{e.age, e.gender}.index()];
    if (g < 0) throw ValidationError("missing population for " + key_name(e.district_id, Group{e.age, e.gender}));
    y[(static_cast<std::size_t>(e.registration - tab.first) * n_dist + r) * n_groups + g] += 1.0;
  }

  tab.cells.reserve(y.size());
  for (int ti = 0; ti < n_days; ++ti) {
    const Date t = tab.first + ti;
    const double lf = offsets.at(t);
    for (int r = 0; r < n_dist; ++r) {
      for (int g = 0; g < n_groups; ++g) {
        const std::size_t idx = (static_cast<std::size_t>(ti) * n_dist + r) * n_groups + g;
        tab.cells.push_back(CellObservation{t, r, tab.groups[g], y[idx],
                                            log_pop[static_cast<std::size_t>(r * n_groups + g)], lf,
                                            t >= T - recent_days});
      }
    }
  }
  return tab;
}

CellTable with_offsets(const CellTable& cells, const OffsetSeries& offsets) {
  CellTable out = cells;
  for (auto& c : out.cells) c.log_F = offsets.at(c.t);
  return out;
}

// --- design ---------------------------------------------------------------------

MortalityDesign build_mortality_design(const CellTable& tab, const MortalitySpecs& specs) {
  const auto n = static_cast<Eigen::Index>(tab.cells.size());
  if (n == 0) throw ValidationError("no cells to fit");
  const int n_dist = static_cast<int>(tab.districts.size());
  if (n_dist < 2) throw ValidationError("mortality model needs at least two districts");

  MortalityDesign md;
  ModelSpec& spec = md.spec;
  spec.family = Family::QuasiPoisson;
  spec.offset.resize(n);
  md.response.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = tab.cells[static_cast<std::size_t>(i)];
    spec.offset(i) = c.offset_total();
    md.response.y(i) = c.y;
  }

  spec.terms.push_back(fixed_term("intercept", Eigen::MatrixXd::Ones(n, 1)));

  // Treatment-coded factors; levels without cells are dropped.
  auto factor = [&](const std::string& name, const std::vector<int>& candidates, auto level_of,
                    std::vector<int>& kept) {
    std::set<int> present;
    for (const auto& c : tab.cells) present.insert(level_of(c));
    for (const int l : candidates) {
      if (present.contains(l)) kept.push_back(l);
    }
    if (kept.empty()) return;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(kept.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = level_of(tab.cells[static_cast<std::size_t>(i)]);
      for (std::size_t j = 0; j < kept.size(); ++j) {
        if (kept[j] == l) x(i, static_cast<Eigen::Index>(j)) = 1.0;
      }
    }
    spec.terms.push_back(fixed_term(name, x));
  };
  factor("age",
         {static_cast<int>(AgeGroup::A15_34), static_cast<int>(AgeGroup::A60_79), static_cast<int>(AgeGroup::A80plus)},
         [](const CellObservation& c) { return static_cast<int>(c.group.age); }, md.age_levels);
  std::vector<int> female;
  factor("female", {1}, [](const CellObservation& c) { return static_cast<int>(c.group.gender); }, female);
  md.female = !female.empty();
  factor("weekday", {1, 2, 3, 4, 5, 6}, [](const CellObservation& c) { return c.t.weekday(); }, md.weekday_levels);

  const int span = tab.last - tab.first;
  if (span >= 2) {
    const int k = std::min(specs.trend_basis, std::max(4, span + 1));
    std::vector<double> x(tab.cells.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(tab.cells[i].t - tab.first);
    md.trend = bspline_design(x, BasisSpec::bspline(0.0, static_cast<double>(span), k));
    spec.terms.push_back(smooth_term("m1", *md.trend));
  } else {
    md.warnings.push_back("fewer than three dates; time trend omitted");
  }

  const int margin = std::min(specs.spatial_basis, static_cast<int>(std::floor(std::sqrt(n_dist))));
  if (margin >= 4) {
    std::array<double, 2> xr{tab.centroids[0][0], tab.centroids[0][0]};
    std::array<double, 2> yr{tab.centroids[0][1], tab.centroids[0][1]};
    for (const auto& c : tab.centroids) {
      xr = {std::min(xr[0], c[0]), std::max(xr[1], c[0])};
      yr = {std::min(yr[0], c[1]), std::max(yr[1], c[1])};
    }
    std::vector<std::array<double, 2>> s(tab.cells.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = tab.centroids[static_cast<std::size_t>(tab.cells[i].district)];
    const auto bspec = BasisSpec::tensor(xr, yr, margin);
    // The distinct-location check counts districts, not cells.
    std::vector<std::array<double, 2>> sites(tab.centroids.begin(), tab.centroids.end());
    tensor_design(sites, bspec);
    md.spatial = tensor_design(s, bspec);
    spec.terms.push_back(smooth_term("m2", *md.spatial));
  } else {
    md.warnings.push_back("fewer than 16 districts; spatial smooth omitted");
  }

  std::vector<int> group(tab.cells.size());
  auto add_random = [&](const char* name, auto include) {
    for (std::size_t i = 0; i < group.size(); ++i) group[i] = include(tab.cells[i]) ? tab.cells[i].district : -1;
    spec.terms.push_back(random_term(name, group, n_dist, {}, true));
    md.random_blocks.push_back(name);
  };
  auto over80 = [](const CellObservation& c) { return c.group.age == AgeGroup::A80plus; };
  if (!specs.agesplit) {
    add_random(kU0, [](const CellObservation&) { return true; });
    add_random(kU1, [](const CellObservation& c) { return c.is_recent; });
  } else {
    bool has_over = false, has_under = false;
    for (const auto& c : tab.cells) (over80(c) ? has_over : has_under) = true;
    if (!has_over) throw ValidationError("age split needs cells in stratum A80+");
    if (!has_under) throw ValidationError("age split needs cells in stratum 80- (A15-34, A35-59 or A60-79)");
    add_random(kU0Under80, [&](const CellObservation& c) { return !over80(c); });
    add_random(kU1Under80, [&](const CellObservation& c) { return !over80(c) && c.is_recent; });
    add_random(kU0Over80, [&](const CellObservation& c) { return over80(c); });
    add_random(kU1Over80, [&](const CellObservation& c) { return over80(c) && c.is_recent; });
  }
  return md;
}

// --- fitting --------------------------------------------------------------------

namespace {

MortalityFit fit_design(const CellTable& cells, MortalityDesign md, const MortalitySpecs& specs) {
  MortalityFit out;
  out.fit = fit(md.spec, md.response, specs.options);
  out.specs = specs;
  out.cells = cells;
  out.age_levels = std::move(md.age_levels);
  out.female = md.female;
  out.weekday_levels = std::move(md.weekday_levels);
  out.trend = std::move(md.trend);
  out.spatial = std::move(md.spatial);
  out.random_blocks = std::move(md.random_blocks);
  out.warnings = std::move(md.warnings);
  return out;
}

}  // namespace

MortalityFit fit_mortality(const CellTable& cells, const MortalitySpecs& specs) {
  return fit_design(cells, build_mortality_design(cells, specs), specs);
}

MortalityFit fit_mortality_agesplit(const CellTable& cells, MortalitySpecs specs) {
  specs.agesplit = true;
  return fit_mortality(cells, specs);
}

MortalityFit refit_with_offsets(const CellTable& cells, const MortalityFit& baseline, const OffsetSeries& offsets) {
  MortalitySpecs specs = baseline.specs;
  specs.options.lambda = baseline.fit.lambda;
  specs.options.start = baseline.fit.beta;
  const CellTable shifted = with_offsets(cells, offsets);
  return fit_design(shifted, build_mortality_design(shifted, specs), specs);
}

BoundRefits refit_offset_bounds(const CellTable& cells, const MortalityFit& baseline,
                                const OffsetSeries& offsets_lower, const OffsetSeries& offsets_upper) {
  return BoundRefits{refit_with_offsets(cells, baseline, offsets_upper),
                     refit_with_offsets(cells, baseline, offsets_lower)};
}

// --- accessors ------------------------------------------------------------------

double MortalityFit::intercept() const { return fit.coefficients("intercept")(0); }

Eigen::Vector3d MortalityFit::age_effects() const {
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  if (!fit.has_term("age")) return out;
  const Eigen::VectorXd b = fit.coefficients("age");
  for (std::size_t j = 0; j < age_levels.size(); ++j) {
    const int slot = age_levels[j] == static_cast<int>(AgeGroup::A15_34) ? 0
                     : age_levels[j] == static_cast<int>(AgeGroup::A60_79) ? 1
                                                                           : 2;
    out(slot) = b(static_cast<Eigen::Index>(j));
  }
  return out;
}

double MortalityFit::female_effect() const { return fit.has_term("female") ? fit.coefficients("female")(0) : 0.0; }

Eigen::VectorXd MortalityFit::weekday_effects() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(6);
  if (!fit.has_term("weekday")) return out;
  const Eigen::VectorXd b = fit.coefficients("weekday");
  for (std::size_t j = 0; j < weekday_levels.size(); ++j) out(weekday_levels[j] - 1) = b(static_cast<Eigen::Index>(j));
  return out;
}

Eigen::VectorXd MortalityFit::random_effects(const std::string& block) const { return fit.raw_coefficients(block); }

Eigen::MatrixXd MortalityFit::sigma_u() const {
  const auto m = static_cast<Eigen::Index>(random_blocks.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& l = fit.term(random_blocks[static_cast<std::size_t>(j)]);
    s(j, j) = fit.phi / fit.lambda[static_cast<std::size_t>(l.penalty_index)];
  }
  return s;
}

PredictorComponents MortalityFit::components() const {
  const MortalityDesign md = build_mortality_design(cells, specs);
  const auto n = static_cast<Eigen::Index>(cells.cells.size());
  PredictorComponents pc{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                         Eigen::VectorXd::Zero(n), md.spec.offset};
  for (const auto& t : md.spec.terms) {
    const Eigen::VectorXd part = t.raw * fit.raw_coefficients(t.name);
    if (t.kind == TermKind::Fixed) {
      pc.fixed += part;
    } else if (t.kind == TermKind::Random) {
      pc.random += part;
    } else if (t.name == "m1") {
      pc.trend += part;
    } else {
      pc.spatial += part;
    }
  }
  return pc;
}

Eigen::VectorXd MortalityFit::intensity() const {
  Eigen::VectorXd out(fit.eta.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = std::exp(fit.eta(i) - cells.cells[static_cast<std::size_t>(i)].log_F);
  return out;
}

// --- summaries ------------------------------------------------------------------

std::vector<DistrictRate> expected_deaths_map(const MortalityFit& fit, Date a, Date b) {
  if (a > b || a < fit.cells.first || b > fit.cells.last) {
    throw ValidationError("map window [" + a.iso() + ", " + b.iso() + "] outside the fitted range [" +
                          fit.cells.first.iso() + ", " + fit.cells.last.iso() + "]");
  }
  const Eigen::VectorXd lam = fit.intensity();
  std::vector<DistrictRate> out(fit.cells.districts.size());
  for (std::size_t r = 0; r < out.size(); ++r) out[r].district_id = fit.cells.districts[r];
  for (std::size_t i = 0; i < fit.cells.cells.size(); ++i) {
    const auto& c = fit.cells.cells[i];
    if (c.t < a || c.t > b) continue;
    out[static_cast<std::size_t>(c.district)].expected_deaths += lam(static_cast<Eigen::Index>(i));
  }
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].rate_per_100k = 1e5 * out[r].expected_deaths / static_cast<double>(fit.cells.district_population[r]);
  }
  return out;
}

std::vector<TrendPoint> time_trend_curve(const MortalityFit& fit) {
  const auto p = fit.fit.beta.size();
  std::vector<TrendPoint> out;
  for (Date t = fit.cells.first; t <= fit.cells.last; t = t + 1) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
    a(fit.fit.term("intercept").offset) = 1.0;
    if (fit.fit.has_term("weekday")) {
      const auto& l = fit.fit.term("weekday");
      a.segment(l.offset, l.size).setConstant(1.0 / 7.0);
    }
    if (fit.trend) {
      const double x = static_cast<double>(t - fit.cells.first);
      const auto& l = fit.fit.term("m1");
      a.segment(l.offset, l.size) = bspline_predict(*fit.trend, std::span<const double>(&x, 1)).row(0).transpose();
    }
    const double eta = a.dot(fit.fit.beta);
    const double se = std::sqrt(std::max(0.0, a.dot(fit.fit.cov * a)));
    out.push_back(TrendPoint{t, 1e5 * std::exp(eta), 1e5 * std::exp(eta - 1.96 * se), 1e5 * std::exp(eta + 1.96 * se)});
  }
  return out;
}

}  // namespace nowcast
