#include "nowcast/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "nowcast/errors.hpp"
#include "nowcast/parallel.hpp"

namespace nowcast {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t key, std::uint32_t a, std::uint32_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32), a, b};
  return std::mt19937_64(seq);
}

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void fail(const std::string& field, const std::string& what) {
  throw ValidationError("config field '" + field + "': " + what);
}

}  // namespace

double TrendTruth::operator()(double days) const {
  const double z = (days - bump_center) / bump_width;
  return slope * days + bump_height * std::exp(-0.5 * z * z);
}

double SpatialTruth::operator()(double lon, double lat) const {
  return lon_slope * (lon - lon_ref) + lat_slope * (lat - lat_ref);
}

// --- config -----------------------------------------------------------------------

void SimConfig::validate() const {
  if (version != kSimConfigVersion) fail("version", "unsupported version " + std::to_string(version));
  if (T - t0 < 1) fail("T", "must be after t0");
  if (d_max < 1) fail("d_max", "must be at least 1");
  if (districts.empty()) fail("districts", "at least one district is required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < districts.size(); ++i) {
    const auto& d = districts[i];
    const std::string path = "districts[" + std::to_string(i) + "]";
    if (d.id.empty()) fail(path + ".id", "empty");
    if (!ids.insert(d.id).second) fail(path + ".id", "duplicate district '" + d.id + "'");
    if (!std::isfinite(d.lon)) fail(path + ".lon", "not finite");
    if (!std::isfinite(d.lat)) fail(path + ".lat", "not finite");
    bool any = false;
    for (std::size_t g = 0; g < d.pop.size(); ++g) {
      if (d.pop[g] < 0) {
        const Group group = Group::from_index(static_cast<int>(g));
        fail(path + ".pop." + std::string(to_string(group.age)) + "/" + std::string(to_string(group.gender)),
             "negative population");
      }
      any = any || d.pop[g] > 0;
    }
    if (!any) fail(path + ".pop", "district has no population");
  }
  auto finite = [](double x, const std::string& field) {
    if (!std::isfinite(x)) fail(field, "not finite");
  };
  finite(intercept, "intercept");
  finite(female, "female");
  static const std::array<const char*, 3> age_names = {"A15-34", "A60-79", "A80+"};
  static const std::array<const char*, 7> day_names = {"Monday", "Tuesday", "Wednesday", "Thursday",
                                                       "Friday", "Saturday", "Sunday"};
  for (std::size_t i = 0; i < age.size(); ++i) finite(age[i], std::string("age.") + age_names[i]);
  for (std::size_t i = 0; i < weekday.size(); ++i) finite(weekday[i], std::string("weekday.") + day_names[i + 1]);
  for (std::size_t i = 0; i < delay.weekday.size(); ++i) {
    finite(delay.weekday[i], std::string("delay.weekday.") + day_names[i]);
  }
  if (!(sigma0 >= 0)) fail("random_effects.sigma0", "must be nonnegative");
  if (!(sigma1 >= 0)) fail("random_effects.sigma1", "must be nonnegative");
  if (recent_days < 1) fail("random_effects.recent_days", "must be positive");
  if (!(trend.bump_width > 0)) fail("trend.bump_width", "must be positive");
  if (delay.constant && !(*delay.constant >= 0.0 && *delay.constant <= 1.0)) {
    fail("delay.constant", "must lie in [0, 1]");
  }
  if (delay.mode == DelayMode::LogNormal && !(delay.sdlog > 0)) fail("delay.sdlog", "must be positive");
  for (std::size_t i = 0; i < hotspots.size(); ++i) {
    const auto& h = hotspots[i];
    const std::string path = "hotspots[" + std::to_string(i) + "]";
    if (!ids.contains(h.district_id)) fail(path + ".district_id", "unknown district '" + h.district_id + "'");
    if (h.end < h.start) fail(path + ".end", "precedes start");
    if (!(h.multiplier >= 0) || !std::isfinite(h.multiplier)) fail(path + ".multiplier", "must be nonnegative");
  }
}

PopulationTable SimConfig::population() const {
  PopulationTable pop;
  for (const auto& d : districts) {
    for (int g = 0; g < kAgeGroups * kGenders; ++g) {
      if (d.pop[static_cast<std::size_t>(g)] > 0) pop.set(d.id, Group::from_index(g), d.pop[static_cast<std::size_t>(g)]);
    }
  }
  return pop;
}

DistrictGeometry SimConfig::geometry() const {
  DistrictGeometry geo;
  for (const auto& d : districts) geo.set(d.id, d.lon, d.lat);
  return geo;
}

// --- truth functions --------------------------------------------------------------

double true_hazard(const SimConfig& config, Date t, int d) {
  const auto& dl = config.delay;
  if (dl.mode == DelayMode::LogNormal) {
    auto cdf = [&](int k) {
      if (k >= config.d_max) return 1.0;
      return normal_cdf((std::log(static_cast<double>(k)) - dl.meanlog) / dl.sdlog);
    };
    const double upto = cdf(d);
    return upto > 0 ? (upto - cdf(d - 1)) / upto : 0.0;
  }
  if (dl.constant) return *dl.constant;
  const double eta = dl.intercept + dl.log_slope * std::log(d / 2.0) + dl.weekday[static_cast<std::size_t>(t.weekday())] +
                     dl.time_slope * (t - config.t0);
  return logistic(eta);
}

Eigen::VectorXd true_F(const SimConfig& config, Date t) {
  Eigen::VectorXd f(config.d_max);
  f(config.d_max - 1) = 1.0;
  for (int d = config.d_max - 1; d >= 1; --d) f(d - 1) = (1.0 - true_hazard(config, t, d + 1)) * f(d);
  return f;
}

double fixed_log_intensity(const SimConfig& config, Date t, const SimDistrict& district, Group g) {
  double eta = config.intercept;
  switch (g.age) {
    case AgeGroup::A15_34: eta += config.age[0]; break;
    case AgeGroup::A35_59: break;
    case AgeGroup::A60_79: eta += config.age[1]; break;
    case AgeGroup::A80plus: eta += config.age[2]; break;
  }
  if (g.gender == Gender::F) eta += config.female;
  const int wd = t.weekday();
  if (wd > 0) eta += config.weekday[static_cast<std::size_t>(wd - 1)];
  eta += config.trend(static_cast<double>(t - config.t0));
  eta += config.spatial(district.lon, district.lat);
  return eta;
}

// --- simulation -------------------------------------------------------------------

ReportingTriangle SimTruth::observed() const {
  std::vector<DeathEvent> seen;
  for (const auto& e : events) {
    if (e.report <= T) seen.push_back(e);
  }
  return build_triangle(seen, t0, T, d_max);
}

namespace {

int draw_delay(const SimConfig& config, Date t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (config.delay.mode == DelayMode::LogNormal) {
    std::lognormal_distribution<double> ln(config.delay.meanlog, config.delay.sdlog);
    const double x = std::ceil(ln(rng));
    return static_cast<int>(std::clamp(x, 1.0, static_cast<double>(config.d_max)));
  }
  for (int k = config.d_max; k >= 2; --k) {
    if (unif(rng) < true_hazard(config, t, k)) return k;
  }
  return 1;
}

double hotspot_multiplier(const SimConfig& config, const std::string& id, Date t, AgeGroup age) {
  double m = 1.0;
  for (const auto& h : config.hotspots) {
    if (h.district_id != id || t < h.start || t > h.end) continue;
    if (!h.ages.empty() && std::find(h.ages.begin(), h.ages.end(), age) == h.ages.end()) continue;
    m *= h.multiplier;
  }
  return m;
}

}  // namespace

SimOutput simulate(const SimConfig& config) {
  config.validate();
  const int n_dist = static_cast<int>(config.districts.size());
  const int n_days = config.T - config.t0;

  SimOutput out;
  SimTruth& truth = out.truth;
  truth.t0 = config.t0;
  truth.T = config.T;
  truth.d_max = config.d_max;
  truth.u0.resize(n_dist);
  truth.u1.resize(n_dist);

  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n_dist));
  for (int r = 0; r < n_dist; ++r) {
    const auto& d = config.districts[static_cast<std::size_t>(r)];
    truth.districts.push_back(d.id);
    hashes[static_cast<std::size_t>(r)] = fnv1a(d.id);
    auto rng = substream(config.seed, hashes[static_cast<std::size_t>(r)], 0xFFFFFFFFu, 0u);
    std::normal_distribution<double> normal;
    truth.u0(r) = config.sigma0 * normal(rng);
    truth.u1(r) = config.sigma1 * normal(rng);
  }

  // Each district fills its own buffers; merged in district order below.
  std::vector<std::vector<CellTruth>> cells(static_cast<std::size_t>(n_dist));
  std::vector<std::vector<DeathEvent>> events(static_cast<std::size_t>(n_dist));
  parallel_for(static_cast<std::size_t>(n_dist), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto& dist = config.districts[r];
      for (int ti = 0; ti < n_days; ++ti) {
        const Date t = config.t0 + ti;
        const bool recent = t >= config.T - config.recent_days;
        for (int gi = 0; gi < kAgeGroups * kGenders; ++gi) {
          const std::int64_t pop = dist.pop[static_cast<std::size_t>(gi)];
          if (pop <= 0) continue;
          const Group g = Group::from_index(gi);
          double eta = fixed_log_intensity(config, t, dist, g) + truth.u0(static_cast<Eigen::Index>(r));
          if (recent) eta += truth.u1(static_cast<Eigen::Index>(r));
          const double lambda =
              static_cast<double>(pop) * std::exp(eta) * hotspot_multiplier(config, dist.id, t, g.age);
          auto rng = substream(config.seed, hashes[r], static_cast<std::uint32_t>(gi),
                               static_cast<std::uint32_t>(t.days()));
          std::int64_t y = 0;
          if (lambda > 0) {
            std::poisson_distribution<std::int64_t> pois(lambda);
            y = pois(rng);
          }
          cells[r].push_back(CellTruth{t, static_cast<int>(r), g, y, lambda});
          for (std::int64_t k = 0; k < y; ++k) {
            const int d = draw_delay(config, t, rng);
            events[r].push_back(DeathEvent{dist.id, g.age, g.gender, t, t + d, d});
          }
        }
      }
    }
  });

  truth.national = Eigen::VectorXd::Zero(n_days);
  for (auto& c : cells) {
    for (const auto& cell : c) truth.national(cell.t - config.t0) += static_cast<double>(cell.y);
    truth.cells.insert(truth.cells.end(), c.begin(), c.end());
  }
  for (auto& e : events) truth.events.insert(truth.events.end(), e.begin(), e.end());
  std::sort(truth.events.begin(), truth.events.end());

  truth.F.resize(n_days, config.d_max);
  for (int ti = 0; ti < n_days; ++ti) truth.F.row(ti) = true_F(config, config.t0 + ti).transpose();
  truth.full = build_triangle(truth.events, config.t0, config.T, config.d_max);

  // Snapshots: cumulative deaths per key known by each download date.
  std::map<CaseKey, std::vector<Date>> reports;
  for (const auto& e : truth.events) {
    if (e.report > config.T) continue;
    reports[CaseKey{e.district_id, e.age, e.gender, e.registration}].push_back(e.report);
  }
  for (auto& [_, v] : reports) std::sort(v.begin(), v.end());
  for (Date dl = config.t0; dl <= config.T; dl = dl + 1) {
    SnapshotTable snap;
    snap.download_date = dl;
    for (const auto& [key, v] : reports) {
      const auto n = std::upper_bound(v.begin(), v.end(), dl) - v.begin();
      if (n > 0) snap.rows.push_back(SnapshotRow{key, static_cast<std::int64_t>(n)});
    }
    out.snapshots.push_back(std::move(snap));
  }
  return out;
}

// --- ready-made configurations ----------------------------------------------------

SimConfig grid_config(const GridOptions& options) {
  if (options.districts < 1 || options.days < 2) throw ValidationError("grid needs districts >= 1 and days >= 2");
  SimConfig c;
  c.t0 = Date::from_ymd(2020, 11, 2);
  c.T = c.t0 + options.days;
  c.seed = options.seed;
  c.age = {-2.572, 2.261, 4.645};
  c.female = -0.503;
  c.weekday = {0.188, 0.241, 0.255, 0.107, -0.128, -0.406};
  c.trend = TrendTruth{0.0, 0.6, 0.6 * options.days, 0.25 * options.days};
  c.spatial = SpatialTruth{0.04, -0.06, 10.5, 51.0};
  c.sigma0 = 0.3;
  c.sigma1 = 0.2;
  c.delay.weekday = {0.0, 0.049, 0.123, 0.233, 0.238, 0.268, 0.220};

  // Age-by-gender shares of the population.
  const std::array<double, 8> share = {0.135, 0.13, 0.21, 0.205, 0.10, 0.11, 0.03, 0.05};
  auto rng = substream(options.seed, fnv1a("grid"), 0u, 0u);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  std::normal_distribution<double> lognorm(0.0, 0.5);
  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(options.districts))));
  const int rows = (options.districts + cols - 1) / cols;
  for (int i = 0; i < options.districts; ++i) {
    SimDistrict d;
    char id[16];
    std::snprintf(id, sizeof id, "D%04d", i + 1);
    d.id = id;
    const double gx = cols > 1 ? static_cast<double>(i % cols) / (cols - 1) : 0.5;
    const double gy = rows > 1 ? static_cast<double>(i / cols) / (rows - 1) : 0.5;
    d.lon = 6.0 + 9.0 * gx + jitter(rng) * 9.0 / cols;
    d.lat = 47.5 + 7.5 * gy + jitter(rng) * 7.5 / rows;
    const double total = options.mean_population * std::exp(lognorm(rng) - 0.125);
    for (std::size_t g = 0; g < share.size(); ++g) {
      d.pop[g] = std::max<std::int64_t>(1, std::llround(total * share[g]));
    }
    c.districts.push_back(std::move(d));
  }

  // Intercept matching the requested national daily death rate.
  double base = 0.0, people = 0.0;
  for (const auto& d : c.districts) {
    for (int ti = 0; ti < options.days; ++ti) {
      for (int g = 0; g < kAgeGroups * kGenders; ++g) {
        base += static_cast<double>(d.pop[static_cast<std::size_t>(g)]) *
                std::exp(fixed_log_intensity(c, c.t0 + ti, d, Group::from_index(g)) - c.intercept);
      }
    }
    for (const auto p : d.pop) people += static_cast<double>(p);
  }
  c.intercept = std::log(options.deaths_per_million * 1e-6 * people * options.days / base);
  return c;
}

}  // namespace nowcast
