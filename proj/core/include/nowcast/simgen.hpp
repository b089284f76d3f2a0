#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nowcast/dates.hpp"
#include "nowcast/mortality.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

inline constexpr int kSimConfigVersion = 1;

struct SimDistrict {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  // Population per Group::index(); 0 leaves the group out for this district.
  std::array<std::int64_t, kAgeGroups * kGenders> pop{};
};

// Multiplies the intensity of one district over [start, end], optionally
// only for some age groups.
struct Hotspot {
  std::string district_id;
  Date start, end;
  double multiplier = 1.0;
  std::vector<AgeGroup> ages;  // empty: all ages
};

// Smooth calendar trend m1(t) with t in days since t0: a linear slope plus a
// Gaussian bump.
struct TrendTruth {
  double slope = 0.0;
  double bump_height = 0.0;
  double bump_center = 0.0;
  double bump_width = 10.0;

  double operator()(double days) const;
};

// Spatial surface m2(s): a plane through (lon_ref, lat_ref).
struct SpatialTruth {
  double lon_slope = 0.0;
  double lat_slope = 0.0;
  double lon_ref = 0.0;
  double lat_ref = 0.0;

  double operator()(double lon, double lat) const;
};

enum class DelayMode { Sequential, LogNormal };

// Reporting hazard pi(d; t) for d >= 2:
//   logit pi = intercept + log_slope * log(d / 2) + weekday[wd(t)] + time_slope * (t - t0)
// or a constant when `constant` is set (0 and 1 allowed as boundary cases).
// LogNormal mode draws delays as ceil(LogNormal(meanlog, sdlog)) clamped to
// [1, d_max] instead; the hazard is then only used by true_F.
struct DelayTruth {
  DelayMode mode = DelayMode::Sequential;
  double intercept = -0.3;
  double log_slope = -1.5;
  std::array<double, 7> weekday{};
  double time_slope = 0.0;
  std::optional<double> constant;
  double meanlog = 2.0;
  double sdlog = 0.6;
};

struct SimConfig {
  int version = kSimConfigVersion;
  Date t0, T;
  int d_max = kDefaultMaxDelay;
  std::vector<SimDistrict> districts;
  double intercept = -12.0;                 // log deaths per person-day, reference group
  std::array<double, 3> age{};              // A15-34, A60-79, A80+ vs A35-59
  double female = 0.0;
  std::array<double, 6> weekday{};          // Tuesday..Sunday vs Monday
  TrendTruth trend;
  SpatialTruth spatial;
  double sigma0 = 0.0;
  double sigma1 = 0.0;
  int recent_days = kRecentDays;
  DelayTruth delay;
  std::vector<Hotspot> hotspots;
  std::uint64_t seed = 1;

  // Throws ValidationError naming the offending field.
  void validate() const;
  PopulationTable population() const;
  DistrictGeometry geometry() const;
};

struct CellTruth {
  Date t;
  int district = 0;
  Group group;
  std::int64_t y = 0;
  double lambda = 0.0;
};

struct SimTruth {
  Date t0, T;
  int d_max = kDefaultMaxDelay;
  std::vector<std::string> districts;
  Eigen::VectorXd u0, u1;         // drawn random effects per district
  std::vector<CellTruth> cells;   // every (t, district, group) with positive population
  Eigen::VectorXd national;       // Y_t for t in [t0, T - 1]
  std::vector<DeathEvent> events; // every death, including those reported after T
  Eigen::MatrixXd F;              // true F_t(d), rows t0..T-1, column d - 1
  ReportingTriangle full;         // N over all events, unobserved cells included

  // Triangle of what is reported by day T.
  ReportingTriangle observed() const;
  double national_at(Date t) const { return national(t - t0); }
};

struct SimOutput {
  SimTruth truth;
  std::vector<SnapshotTable> snapshots;  // download dates t0..T
};

// Hazard pi(d; t) of the configured delay process, d in [2, d_max].
double true_hazard(const SimConfig& config, Date t, int d);
// F_t(d) for d = 1..d_max (index d - 1).
Eigen::VectorXd true_F(const SimConfig& config, Date t);
// Intensity of one cell excluding random effects and hotspots.
double fixed_log_intensity(const SimConfig& config, Date t, const SimDistrict& district, Group g);

SimOutput simulate(const SimConfig& config);

// A ready-made configuration on a jittered grid of districts with
// population shares resembling a national age structure.
struct GridOptions {
  int districts = 50;
  int days = 50;
  double mean_population = 200000.0;
  double deaths_per_million = 12.0;  // expected national daily rate
  std::uint64_t seed = 1;
};
SimConfig grid_config(const GridOptions& options);

}  // namespace nowcast
