#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nowcast/basis.hpp"
#include "nowcast/dates.hpp"
#include "nowcast/fitcore.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

inline constexpr int kRecentDays = 14;

// Population per (district, age group, gender); strictly positive.
class PopulationTable {
 public:
  void set(const std::string& district_id, Group g, std::int64_t pop);
  std::optional<std::int64_t> get(const std::string& district_id, Group g) const;

  std::vector<std::string> districts() const;
  // Groups that appear for at least one district, in index order.
  std::vector<Group> groups() const;
  bool empty() const { return pop_.empty(); }

 private:
  std::map<std::pair<std::string, int>, std::int64_t> pop_;
};

PopulationTable parse_population_text(std::string_view text, const std::string& source);
PopulationTable read_population(const std::string& path);
std::string emit_population(const PopulationTable& pop);

// District centroids as (lon, lat).
class DistrictGeometry {
 public:
  void set(const std::string& district_id, double lon, double lat);
  std::optional<std::array<double, 2>> get(const std::string& district_id) const;
  std::vector<std::string> districts() const;
  std::size_t size() const { return centroid_.size(); }

 private:
  std::map<std::string, std::array<double, 2>> centroid_;
};

DistrictGeometry parse_geometry_text(std::string_view text, const std::string& source);
DistrictGeometry read_geometry(const std::string& path);
std::string emit_geometry(const DistrictGeometry& geo);

// log F per registration date starting at `first`.
struct OffsetSeries {
  Date first;
  Eigen::VectorXd log_F;

  Date last() const { return first + static_cast<int>(log_F.size()) - 1; }
  bool covers(Date t) const { return t >= first && t <= last(); }
  double at(Date t) const;
};

OffsetSeries parse_offsets_text(std::string_view text, const std::string& source);
OffsetSeries read_offsets(const std::string& path);
std::string emit_offsets(const OffsetSeries& offsets);

struct CellObservation {
  Date t;
  int district = 0;  // index into CellTable::districts
  Group group;
  double y = 0.0;
  double log_pop = 0.0;
  double log_F = 0.0;
  bool is_recent = false;

  double offset_total() const { return log_pop + log_F; }
};

// Full (t, district, group) cross product over [first, last] plus the
// district metadata every downstream step needs.
struct CellTable {
  Date first, last, T;
  std::vector<std::string> districts;
  std::vector<std::array<double, 2>> centroids;
  std::vector<Group> groups;
  std::vector<std::int64_t> district_population;  // summed over `groups`
  std::vector<CellObservation> cells;

  int district_index(const std::string& id) const;
};

// Cells for t in [first, T - 1]; y counts events reported on or before T.
// Districts come from the geometry; groups from the population table.
CellTable assemble_cells(const std::vector<DeathEvent>& events, const PopulationTable& pop,
                         const DistrictGeometry& geo, const OffsetSeries& offsets, Date first, Date T,
                         int recent_days = kRecentDays);

// Copy of `cells` with log F replaced from `offsets`.
CellTable with_offsets(const CellTable& cells, const OffsetSeries& offsets);

struct MortalitySpecs {
  int trend_basis = 10;
  int spatial_basis = 8;  // per margin; reduced to floor(sqrt(#districts)) when smaller
  bool agesplit = false;
  FitOptions options;
};

// Random-effect block names.
inline constexpr const char* kU0 = "u0";
inline constexpr const char* kU1 = "u1";
inline constexpr const char* kU0Under80 = "u0_80minus";
inline constexpr const char* kU1Under80 = "u1_80minus";
inline constexpr const char* kU0Over80 = "u0_80plus";
inline constexpr const char* kU1Over80 = "u1_80plus";

// The assembled model plus what is needed to read its coefficients.
struct MortalityDesign {
  ModelSpec spec;
  Response response;
  std::vector<int> age_levels;      // retained non-reference AgeGroup values
  bool female = false;
  std::vector<int> weekday_levels;  // retained levels, 1 = Tuesday
  std::optional<DesignBlock> trend;
  std::optional<DesignBlock> spatial;
  std::vector<std::string> random_blocks;
  std::vector<std::string> warnings;
};

MortalityDesign build_mortality_design(const CellTable& cells, const MortalitySpecs& specs);

struct PredictorComponents {
  Eigen::VectorXd fixed, trend, spatial, random, offset;
};

struct MortalityFit {
  FitResult fit;
  MortalitySpecs specs;
  CellTable cells;
  std::vector<int> age_levels;
  bool female = false;
  std::vector<int> weekday_levels;
  std::optional<DesignBlock> trend;
  std::optional<DesignBlock> spatial;
  std::vector<std::string> random_blocks;
  std::vector<std::string> warnings;

  double intercept() const;
  // A15-34, A60-79, A80+ contrasts against A35-59; absent levels read as 0.
  Eigen::Vector3d age_effects() const;
  double female_effect() const;
  // Tuesday..Sunday contrasts against Monday.
  Eigen::VectorXd weekday_effects() const;
  // Per-district effects of one random block (0 for districts without rows).
  Eigen::VectorXd random_effects(const std::string& block) const;
  // Diagonal variance components phi / lambda_j, one per random block.
  Eigen::MatrixXd sigma_u() const;
  // Exact additive decomposition of the linear predictor per cell.
  PredictorComponents components() const;
  // Nowcast-corrected intensity per cell: fitted mean without the log F
  // offset.
  Eigen::VectorXd intensity() const;
};

MortalityFit fit_mortality(const CellTable& cells, const MortalitySpecs& specs = {});
MortalityFit fit_mortality_agesplit(const CellTable& cells, MortalitySpecs specs = {});

struct DistrictRate {
  std::string district_id;
  double expected_deaths = 0.0;
  double rate_per_100k = 0.0;
};

std::vector<DistrictRate> expected_deaths_map(const MortalityFit& fit, Date a, Date b);

struct TrendPoint {
  Date t;
  double rate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Deaths per 100 000 for males aged 35-59 in an average district, weekday
// effects averaged over all seven days.
std::vector<TrendPoint> time_trend_curve(const MortalityFit& fit);

struct BoundRefits {
  MortalityFit worst;  // offsets from the upper interval bound (smaller F)
  MortalityFit best;   // offsets from the lower interval bound
};

// Refits at the baseline's smoothing parameters with the nowcast offsets
// replaced by their interval-bound equivalents.
BoundRefits refit_offset_bounds(const CellTable& cells, const MortalityFit& baseline,
                                const OffsetSeries& offsets_lower, const OffsetSeries& offsets_upper);
MortalityFit refit_with_offsets(const CellTable& cells, const MortalityFit& baseline, const OffsetSeries& offsets);

}  // namespace nowcast
