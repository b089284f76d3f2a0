#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace nowcast {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class BasisKind { BSpline1D, Tensor2D };

// Equally spaced B-spline basis with a difference penalty (a P-spline).
// For Tensor2D, num_basis, degree and penalty_order apply to each margin and
// domain_y is the second coordinate's range.
struct BasisSpec {
  BasisKind kind = BasisKind::BSpline1D;
  int num_basis = 10;
  int degree = 3;
  int penalty_order = 2;
  std::array<double, 2> domain_x{0.0, 1.0};
  std::array<double, 2> domain_y{0.0, 1.0};

  void validate() const;
  // Total raw column count: num_basis, or num_basis^2 for a tensor.
  int raw_size() const;
  // Full knot vector of one margin (num_basis + degree + 1 knots).
  std::vector<double> knots(int margin = 0) const;

  static BasisSpec bspline(double lo, double hi, int num_basis = 10, int degree = 3, int penalty_order = 2);
  static BasisSpec tensor(std::array<double, 2> x_range, std::array<double, 2> y_range, int num_basis = 8,
                          int degree = 3, int penalty_order = 2);
};

// Identifiability reparametrization for a linear constraint c'b = 0 on raw
// coefficients b. Z spans the orthogonal complement of c and is the trailing
// k-1 columns of the Householder reflector H with Hc proportional to e1.
// An all-zero c means "no constraint" and Z is the identity.
class SumToZero {
 public:
  SumToZero() = default;
  explicit SumToZero(Eigen::VectorXd c);
  static SumToZero identity(int k);

  bool active() const { return tau_ != 0.0; }
  int raw_size() const { return static_cast<int>(c_.size()); }
  int size() const { return raw_size() - (active() ? 1 : 0); }
  const Eigen::VectorXd& constraint_vector() const { return c_; }

  Eigen::VectorXd to_raw(const Eigen::VectorXd& beta) const;      // Z beta
  Eigen::VectorXd to_reduced(const Eigen::VectorXd& raw) const;   // Z' g
  Eigen::MatrixXd project(const Eigen::MatrixXd& s) const;         // Z' S Z
  Eigen::MatrixXd basis() const;                                   // Z

  // m <- H m, where m has raw_size() rows.
  void reflect_rows(Eigen::Ref<Eigen::MatrixXd> m) const;
  // m <- m H, where m has raw_size() columns.
  void reflect_cols(Eigen::Ref<Eigen::MatrixXd> m) const;

 private:
  Eigen::VectorXd c_;
  Eigen::VectorXd v_;
  double tau_ = 0.0;
};

// A smooth term's design: sparse raw basis rows, the absorbed constraint and
// the penalty in constrained coordinates.
struct DesignBlock {
  BasisSpec spec;
  SparseRows raw;
  SumToZero constraint;
  Eigen::MatrixXd raw_penalty;
  Eigen::MatrixXd penalty;

  int size() const { return constraint.size(); }
  // Dense constrained design X = raw * Z.
  Eigen::MatrixXd design() const;
};

// Cox-de Boor evaluation at one point: writes the degree+1 nonzero basis
// values into `values` and returns the index of the first one.
int eval_bspline(double x, std::span<const double> knots, int degree, int num_basis, double* values);

Eigen::MatrixXd difference_penalty(int num_basis, int order);

SparseRows bspline_raw(std::span<const double> x, const BasisSpec& spec);
SparseRows tensor_raw(std::span<const std::array<double, 2>> s, const BasisSpec& spec);

DesignBlock bspline_design(std::span<const double> x, const BasisSpec& spec);
DesignBlock tensor_design(std::span<const std::array<double, 2>> s, const BasisSpec& spec);

// Constrained design rows at new points using the fit-time knots and constraint.
Eigen::MatrixXd bspline_predict(const DesignBlock& fitted, std::span<const double> x);
Eigen::MatrixXd tensor_predict(const DesignBlock& fitted, std::span<const std::array<double, 2>> s);

// Column sums of a sparse design.
Eigen::VectorXd column_sums(const SparseRows& m);

}  // namespace nowcast
