#pragma once

// Shared test helpers: temporary directories, seeded generators and
// independent reference implementations used as oracles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nowcast/fitcore.hpp"
#include "nowcast/mortality.hpp"
#include "nowcast/simgen.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const;

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& p);

// --- generators ---------------------------------------------------------------

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  std::int64_t poisson(double mean) { return mean > 0 ? std::poisson_distribution<std::int64_t>(mean)(rng_) : 0; }
  std::int64_t binomial(std::int64_t n, double p) {
    return n > 0 ? std::binomial_distribution<std::int64_t>(n, p)(rng_) : 0;
  }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Random death events with registrations in [t0, T] and arbitrary raw
// delays (possibly beyond d_max), keys drawn from a small alphabet.
std::vector<DeathEvent> random_events(Gen& g, Date t0, Date T, int n, int max_raw_delay);

// Triangle of deaths following a constant hazard p at every delay >= 2:
// per registration date, Y ~ Poisson(mean) deaths reported through the
// sequential scheme.
ReportingTriangle constant_hazard_triangle(Gen& g, Date t0, Date T, int d_max, double p, double mean);

// A small but complete simulation config on a grid (fast to fit).
SimConfig small_config(std::uint64_t seed, int districts = 16, int days = 35);

// Offsets log F_t(T - t) from the simulator's true F.
OffsetSeries true_offsets(const SimTruth& truth);
// Cells over [t0, T - 1] of a simulation with true-F offsets (zero offsets
// when `with_true_F` is false).
CellTable sim_cells(const SimConfig& config, const SimOutput& out, bool with_true_F = true);

// --- oracles ------------------------------------------------------------------

struct GlmOracle {
  Eigen::VectorXd beta;
  Eigen::VectorXd mu;  // count-scale mean
  double phi = 0.0;
};

// Unpenalized Fisher scoring on a dense design, solved by QR. Independent
// of the library's engine (no sparse Gram, no constraints, no ridge).
GlmOracle dense_glm(Family family, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& trials, const Eigen::VectorXd& offset);

// Textbook Cox-de Boor recursion, B_{j,p}(x) on a knot vector.
double cox_de_boor(const std::vector<double>& knots, int j, int p, double x);

// Dense constrained design of a model spec, columns in fit order.
Eigen::MatrixXd dense_design(const ModelSpec& spec);

}  // namespace nowcast::testing
