#pragma once

#include <string>
#include <string_view>

#include <Eigen/Core>

#include "nowcast/delay.hpp"
#include "nowcast/fitcore.hpp"
#include "nowcast/mortality.hpp"
#include "nowcast/simgen.hpp"

// JSON documents exchanged between pipeline steps. Every document carries a
// "format" name and a "format_version"; readers reject other versions.
namespace nowcast::json {

inline constexpr int kFormatVersion = 1;

// Simulation config. Errors name the offending field path, e.g.
// "districts[2].pop.A80+/F".
SimConfig parse_config(std::string_view text, const std::string& source);
std::string emit_config(const SimConfig& config);

std::string emit_truth(const SimTruth& truth);

// The parts of truth.json consumers read back.
struct TruthSummary {
  Date t0, T;
  int d_max = 0;
  Eigen::VectorXd national;  // Y_t for t in [t0, T - 1]
  CountMatrix observed_N;
  CountMatrix full_N;
};
TruthSummary parse_truth(std::string_view text, const std::string& source);

struct FitDocumentOptions {
  std::string manifest_hash;
  bool include_covariance = true;
};

std::string emit_delay_fit(const DelayFit& fit, const FitDocumentOptions& options);
std::string emit_mortality_fit(const MortalityFit& fit, const FitDocumentOptions& options);

// What the residual diagnostics need from any fit document.
struct FitObservations {
  std::string model;
  Family family = Family::QuasiPoisson;
  double phi = 1.0;
  std::string phi_text;  // phi exactly as written in the document
  Eigen::VectorXd y, trials, mean, weights;
};
FitObservations parse_fit_observations(std::string_view text, const std::string& source);

// Pearson residuals sqrt(w) (y - mean) / sqrt(V(mean)) from stored
// observations.
Eigen::VectorXd pearson_residuals(const FitObservations& obs);

}  // namespace nowcast::json
