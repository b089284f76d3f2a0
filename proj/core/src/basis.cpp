#include "nowcast/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <Eigen/Eigenvalues>

#include "nowcast/errors.hpp"

namespace nowcast {

// --- BasisSpec ----------------------------------------------------------------

void BasisSpec::validate() const {
  if (degree < 0 || degree > 14) throw ValidationError("basis degree must be in [0, 14]");
  if (num_basis < degree + 1) {
    throw ValidationError("basis needs at least degree+1 = " + std::to_string(degree + 1) +
                          " functions, got " + std::to_string(num_basis));
  }
  if (penalty_order < 0 || penalty_order >= num_basis) {
    throw ValidationError("penalty order must be in [0, num_basis)");
  }
  auto check = [](const std::array<double, 2>& d) {
    if (!std::isfinite(d[0]) || !std::isfinite(d[1]) || !(d[1] > d[0])) {
      throw ValidationError("basis domain must be a finite interval with max > min");
    }
  };
  check(domain_x);
  if (kind == BasisKind::Tensor2D) check(domain_y);
}

int BasisSpec::raw_size() const { return kind == BasisKind::Tensor2D ? num_basis * num_basis : num_basis; }

std::vector<double> BasisSpec::knots(int margin) const {
  const auto& dom = margin == 0 ? domain_x : domain_y;
  const int intervals = num_basis - degree;
  const double h = (dom[1] - dom[0]) / intervals;
  std::vector<double> k(static_cast<std::size_t>(num_basis + degree + 1));
  for (int j = 0; j < static_cast<int>(k.size()); ++j) k[j] = dom[0] + (j - degree) * h;
  return k;
}

BasisSpec BasisSpec::bspline(double lo, double hi, int num_basis, int degree, int penalty_order) {
  BasisSpec s;
  s.kind = BasisKind::BSpline1D;
  s.num_basis = num_basis;
  s.degree = degree;
  s.penalty_order = penalty_order;
  s.domain_x = {lo, hi};
  return s;
}

BasisSpec BasisSpec::tensor(std::array<double, 2> x_range, std::array<double, 2> y_range, int num_basis,
                            int degree, int penalty_order) {
  BasisSpec s;
  s.kind = BasisKind::Tensor2D;
  s.num_basis = num_basis;
  s.degree = degree;
  s.penalty_order = penalty_order;
  s.domain_x = x_range;
  s.domain_y = y_range;
  return s;
}

// --- SumToZero ----------------------------------------------------------------

SumToZero::SumToZero(Eigen::VectorXd c) : c_(std::move(c)) {
  const double norm = c_.norm();
  if (c_.size() == 0 || norm == 0.0) {
    v_.resize(0);
    tau_ = 0.0;
    return;
  }
  const double alpha = c_(0) >= 0 ? -norm : norm;
  v_ = c_;
  v_(0) -= alpha;
  tau_ = 2.0 / v_.squaredNorm();
}

SumToZero SumToZero::identity(int k) { return SumToZero(Eigen::VectorXd::Zero(k)); }

Eigen::VectorXd SumToZero::to_raw(const Eigen::VectorXd& beta) const {
  if (!active()) return beta;
  Eigen::VectorXd out(raw_size());
  out(0) = 0.0;
  out.tail(size()) = beta;
  out -= (tau_ * v_.tail(size()).dot(beta)) * v_;
  return out;
}

Eigen::VectorXd SumToZero::to_reduced(const Eigen::VectorXd& raw) const {
  if (!active()) return raw;
  return raw.tail(size()) - (tau_ * v_.dot(raw)) * v_.tail(size());
}

void SumToZero::reflect_rows(Eigen::Ref<Eigen::MatrixXd> m) const {
  if (!active()) return;
  const Eigen::RowVectorXd w = v_.transpose() * m;
  m.noalias() -= tau_ * v_ * w;
}

void SumToZero::reflect_cols(Eigen::Ref<Eigen::MatrixXd> m) const {
  if (!active()) return;
  const Eigen::VectorXd w = m * v_;
  m.noalias() -= tau_ * w * v_.transpose();
}

Eigen::MatrixXd SumToZero::project(const Eigen::MatrixXd& s) const {
  if (!active()) return s;
  Eigen::MatrixXd hsh = s;
  reflect_rows(hsh);
  reflect_cols(hsh);
  Eigen::MatrixXd out = hsh.bottomRightCorner(size(), size());
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd SumToZero::basis() const {
  if (!active()) return Eigen::MatrixXd::Identity(raw_size(), raw_size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(raw_size(), raw_size());
  reflect_rows(h);
  return h.rightCols(size());
}

// --- B-spline evaluation ----------------------------------------------------

int eval_bspline(double x, std::span<const double> knots, int degree, int num_basis, double* values) {
  // Interval index so that knots[span] <= x < knots[span+1], with the right
  // boundary folded into the last interval.
  const int lo_span = degree;
  const int hi_span = num_basis - 1;
  const double h = knots[degree + 1] - knots[degree];
  int span = lo_span + static_cast<int>(std::floor((x - knots[degree]) / h));
  span = std::clamp(span, lo_span, hi_span);

  // NURBS-book style triangular recursion.
  double left[16], right[16];
  values[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
  return span - degree;
}

Eigen::MatrixXd difference_penalty(int num_basis, int order) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(num_basis, num_basis);
  for (int o = 0; o < order; ++o) {
    const Eigen::Index r = d.rows() - 1;
    Eigen::MatrixXd next = d.bottomRows(r) - d.topRows(r);
    d = std::move(next);
  }
  return d.transpose() * d;
}

namespace {

void check_in_domain(double x, const std::array<double, 2>& dom, const char* what) {
  if (!std::isfinite(x)) throw ValidationError(std::string(what) + " value is not finite");
  const double tol = 1e-12 * std::max(1.0, std::abs(dom[1] - dom[0]));
  if (x < dom[0] - tol || x > dom[1] + tol) {
    throw ValidationError(std::string(what) + " value " + std::to_string(x) + " outside basis domain [" +
                          std::to_string(dom[0]) + ", " + std::to_string(dom[1]) + "]");
  }
}

DesignBlock finish(const BasisSpec& spec, SparseRows raw, Eigen::MatrixXd raw_penalty) {
  DesignBlock b;
  b.spec = spec;
  b.constraint = SumToZero(column_sums(raw));
  b.raw = std::move(raw);
  b.raw_penalty = std::move(raw_penalty);
  b.penalty = b.constraint.project(b.raw_penalty);
  return b;
}

Eigen::MatrixXd tensor_penalty(const BasisSpec& spec) {
  const int k = spec.num_basis;
  const Eigen::MatrixXd s = difference_penalty(k, spec.penalty_order);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k * k, k * k);
  // Raw index is ix * k + iy: S_x (x) I + I (x) S_y.
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      out.block(a * k, b * k, k, k) += s(a, b) * eye;
      if (a == b) out.block(a * k, b * k, k, k) += s;
    }
  }
  return out;
}

Eigen::MatrixXd constrained_dense(const SparseRows& raw, const SumToZero& z) {
  Eigen::MatrixXd dense = Eigen::MatrixXd(raw);
  z.reflect_cols(dense);
  return z.active() ? Eigen::MatrixXd(dense.rightCols(z.size())) : dense;
}

}  // namespace

Eigen::VectorXd column_sums(const SparseRows& m) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.cols());
  for (Eigen::Index i = 0; i < m.outerSize(); ++i) {
    for (SparseRows::InnerIterator it(m, i); it; ++it) out(it.col()) += it.value();
  }
  return out;
}

SparseRows bspline_raw(std::span<const double> x, const BasisSpec& spec) {
  spec.validate();
  const auto knots = spec.knots(0);
  const int m = spec.degree + 1;
  SparseRows out(static_cast<Eigen::Index>(x.size()), spec.num_basis);
  out.reserve(Eigen::VectorXi::Constant(static_cast<Eigen::Index>(x.size()), m));
  double vals[16];
  for (std::size_t i = 0; i < x.size(); ++i) {
    check_in_domain(x[i], spec.domain_x, "covariate");
    const int first = eval_bspline(x[i], knots, spec.degree, spec.num_basis, vals);
    for (int j = 0; j < m; ++j) out.insert(static_cast<Eigen::Index>(i), first + j) = vals[j];
  }
  out.makeCompressed();
  return out;
}

SparseRows tensor_raw(std::span<const std::array<double, 2>> s, const BasisSpec& spec) {
  spec.validate();
  if (spec.kind != BasisKind::Tensor2D) throw ValidationError("tensor design needs a Tensor2D spec");
  const auto kx = spec.knots(0);
  const auto ky = spec.knots(1);
  const int k = spec.num_basis;
  const int m = spec.degree + 1;
  SparseRows out(static_cast<Eigen::Index>(s.size()), k * k);
  out.reserve(Eigen::VectorXi::Constant(static_cast<Eigen::Index>(s.size()), m * m));
  double vx[16], vy[16];
  for (std::size_t i = 0; i < s.size(); ++i) {
    check_in_domain(s[i][0], spec.domain_x, "longitude");
    check_in_domain(s[i][1], spec.domain_y, "latitude");
    const int fx = eval_bspline(s[i][0], kx, spec.degree, k, vx);
    const int fy = eval_bspline(s[i][1], ky, spec.degree, k, vy);
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) {
        out.insert(static_cast<Eigen::Index>(i), (fx + a) * k + (fy + b)) = vx[a] * vy[b];
      }
    }
  }
  out.makeCompressed();
  return out;
}

DesignBlock bspline_design(std::span<const double> x, const BasisSpec& spec) {
  if (spec.kind != BasisKind::BSpline1D) throw ValidationError("bspline design needs a BSpline1D spec");
  return finish(spec, bspline_raw(x, spec), difference_penalty(spec.num_basis, spec.penalty_order));
}

DesignBlock tensor_design(std::span<const std::array<double, 2>> s, const BasisSpec& spec) {
  spec.validate();
  std::set<std::array<double, 2>> distinct(s.begin(), s.end());
  if (static_cast<int>(distinct.size()) < spec.num_basis) {
    throw ValidationError("tensor smooth needs at least " + std::to_string(spec.num_basis) +
                          " distinct locations, got " + std::to_string(distinct.size()));
  }
  // Reject collinear configurations: the 2x2 scatter matrix must be
  // nonsingular relative to its scale.
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : distinct) mean += Eigen::Vector2d(p[0], p[1]);
  mean /= static_cast<double>(distinct.size());
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const auto& p : distinct) {
    const Eigen::Vector2d d = Eigen::Vector2d(p[0], p[1]) - mean;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(scatter);
  if (!(es.eigenvalues()(0) > 1e-10 * std::max(es.eigenvalues()(1), 1e-300))) {
    throw ValidationError("tensor smooth locations are collinear");
  }
  return finish(spec, tensor_raw(s, spec), tensor_penalty(spec));
}

Eigen::MatrixXd DesignBlock::design() const { return constrained_dense(raw, constraint); }

Eigen::MatrixXd bspline_predict(const DesignBlock& fitted, std::span<const double> x) {
  return constrained_dense(bspline_raw(x, fitted.spec), fitted.constraint);
}

Eigen::MatrixXd tensor_predict(const DesignBlock& fitted, std::span<const std::array<double, 2>> s) {
  return constrained_dense(tensor_raw(s, fitted.spec), fitted.constraint);
}

}  // namespace nowcast
