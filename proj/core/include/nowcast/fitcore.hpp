#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "nowcast/basis.hpp"

namespace nowcast {

enum class Family { QuasiPoisson, QuasiBinomial };

std::string_view to_string(Family f);
Family parse_family(std::string_view s);

enum class TermKind { Fixed, Smooth, Random };

std::string_view to_string(TermKind k);

// One block of model columns. `raw` holds the sparse design in raw
// coordinates; `constraint` maps the block's coefficients to raw ones; the
// quadratic penalty is expressed in constrained coordinates and is empty for
// unpenalized (fixed) terms.
struct Term {
  std::string name;
  TermKind kind = TermKind::Fixed;
  SparseRows raw;
  SumToZero constraint;
  Eigen::MatrixXd penalty;

  int size() const { return constraint.size(); }
  int raw_size() const { return static_cast<int>(raw.cols()); }
  bool penalized() const { return penalty.size() > 0; }
};

Term fixed_term(std::string name, const Eigen::MatrixXd& columns);
Term smooth_term(std::string name, const DesignBlock& block);
// Ridge-penalized dummy columns: row i loads `value[i]` (1 when empty) on
// column group[i]; group -1 leaves the row out of the block. With
// `centered`, the constraint sum_i (X u)_i = 0 is absorbed like a smooth's.
Term random_term(std::string name, std::span<const int> group, int n_groups,
                 std::span<const double> value = {}, bool centered = false);
// Arbitrary penalized block, e.g. explicit ridge columns.
Term penalized_term(std::string name, SparseRows raw, Eigen::MatrixXd penalty,
                    SumToZero constraint = {});

struct ModelSpec {
  Family family = Family::QuasiPoisson;
  std::vector<Term> terms;
  Eigen::VectorXd offset;  // empty means zero

  Eigen::Index rows() const;
  int size() const;
  int penalized_terms() const;
  void validate() const;
};

struct Response {
  Eigen::VectorXd y;
  Eigen::VectorXd trials;   // binomial only
  Eigen::VectorXd weights;  // prior weights; empty means one
};

// Where a term's coefficients live in the full coefficient vector.
struct TermLayout {
  std::string name;
  TermKind kind = TermKind::Fixed;
  int offset = 0;
  int size = 0;
  SumToZero constraint;
  int penalty_index = -1;  // position in FitResult::lambda, or -1
};

struct FitResult {
  Family family = Family::QuasiPoisson;
  std::vector<TermLayout> layout;

  Eigen::VectorXd beta;          // constrained coordinates
  Eigen::MatrixXd cov_unscaled;  // (X'WX + S_lambda)^-1
  Eigen::MatrixXd cov;           // phi * cov_unscaled
  double phi = 1.0;
  std::vector<double> lambda;    // effective penalty multipliers, per penalized term
  std::vector<double> edf;       // per term
  double edf_total = 0.0;
  double deviance = 0.0;
  double penalized_deviance = 0.0;
  double initial_penalized_deviance = 0.0;  // after the first IRLS update
  double pearson_chi2 = 0.0;
  double gcv = 0.0;
  double score_norm = 0.0;
  double score_bound = 0.0;
  bool converged = false;
  int iterations = 0;

  Eigen::VectorXd eta;     // linear predictor including offset
  Eigen::VectorXd fitted;  // inverse link of eta (a mean, or a probability)
  Eigen::VectorXd y, trials, weights;

  Eigen::Index n() const { return y.size(); }
  const TermLayout& term(std::string_view name) const;
  bool has_term(std::string_view name) const;
  // A term's coefficients in constrained, or raw, coordinates.
  Eigen::VectorXd coefficients(std::string_view name) const;
  Eigen::VectorXd raw_coefficients(std::string_view name) const;
  // Count-scale mean: fitted for Poisson, trials * fitted for binomial.
  Eigen::VectorXd mean() const;
};

struct FitOptions {
  // Effective per-penalized-term multipliers; when absent they are chosen
  // by select_lambda over default_grids(relative_grid).
  std::optional<std::vector<double>> lambda;
  std::vector<double> relative_grid = {1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4};
  int sweeps = 2;
  int max_iter = 100;
  int max_halving = 10;
  double ridge = 1e-8;
  double tol = 1e-9;
  double score_tol = 1e-6;
  std::optional<double> phi_override;
  Eigen::VectorXd start;
};

FitResult fit(const ModelSpec& spec, const Response& response, const FitOptions& options = {});

// Per-penalized-term candidate grids: relative multipliers scaled by
// tr(X_j'W0X_j) / tr(S_j) at the initial IRLS weights, so a multiplier of
// one balances penalty against data information for every term.
std::vector<std::vector<double>> default_grids(const ModelSpec& spec, const Response& response,
                                               std::span<const double> relative);

// Coordinate-wise GCV search. Each term starts at the middle of its grid;
// `options.sweeps` passes visit terms in order and candidates ascending.
// Ties go to the smaller lambda.
std::vector<double> select_lambda(const ModelSpec& spec, const Response& response,
                                  const std::vector<std::vector<double>>& grids,
                                  const FitOptions& options = {});

struct Prediction {
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;  // inverse link of eta
};

// New rows must carry the same terms (names, raw widths) as the fit.
Prediction predict(const FitResult& fit, const ModelSpec& newdata);
// New rows given directly in constrained coordinates.
Prediction predict(const FitResult& fit, const Eigen::MatrixXd& design, const Eigen::VectorXd& offset);

const Eigen::MatrixXd& coef_covariance(const FitResult& fit);
Eigen::VectorXd pearson_residuals(const FitResult& fit);

double inverse_link(Family f, double eta);
double link(Family f, double mu);

}  // namespace nowcast
