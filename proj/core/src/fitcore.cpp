#include "nowcast/fitcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>

#include "nowcast/errors.hpp"

namespace nowcast {

std::string_view to_string(Family f) {
  return f == Family::QuasiPoisson ? "quasipoisson" : "quasibinomial";
}

Family parse_family(std::string_view s) {
  if (s == "quasipoisson") return Family::QuasiPoisson;
  if (s == "quasibinomial") return Family::QuasiBinomial;
  throw ParseError("unknown family '" + std::string(s) + "'");
}

std::string_view to_string(TermKind k) {
  switch (k) {
    case TermKind::Fixed: return "fixed";
    case TermKind::Smooth: return "smooth";
    case TermKind::Random: return "random";
  }
  return "?";
}

double inverse_link(Family f, double eta) {
  if (f == Family::QuasiPoisson) return std::exp(std::clamp(eta, -700.0, 700.0));
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double link(Family f, double mu) {
  return f == Family::QuasiPoisson ? std::log(mu) : std::log(mu / (1.0 - mu));
}

// --- term constructors ------------------------------------------------------

Term fixed_term(std::string name, const Eigen::MatrixXd& columns) {
  Term t;
  t.name = std::move(name);
  t.kind = TermKind::Fixed;
  t.raw = columns.sparseView(0.0, 0.0);
  t.raw.makeCompressed();
  t.constraint = SumToZero::identity(static_cast<int>(columns.cols()));
  return t;
}

Term smooth_term(std::string name, const DesignBlock& block) {
  Term t;
  t.name = std::move(name);
  t.kind = TermKind::Smooth;
  t.raw = block.raw;
  t.constraint = block.constraint;
  t.penalty = block.penalty;
  return t;
}

Term random_term(std::string name, std::span<const int> group, int n_groups, std::span<const double> value,
                 bool centered) {
  if (!value.empty() && value.size() != group.size()) {
    throw ValidationError("random term '" + name + "': value and group lengths differ");
  }
  Term t;
  t.name = std::move(name);
  t.kind = TermKind::Random;
  t.raw = SparseRows(static_cast<Eigen::Index>(group.size()), n_groups);
  t.raw.reserve(Eigen::VectorXi::Constant(static_cast<Eigen::Index>(group.size()), 1));
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (group[i] < 0) continue;
    if (group[i] >= n_groups) throw ValidationError("random term '" + t.name + "': group index out of range");
    const double v = value.empty() ? 1.0 : value[i];
    if (v != 0.0) t.raw.insert(static_cast<Eigen::Index>(i), group[i]) = v;
  }
  t.raw.makeCompressed();
  t.constraint = centered ? SumToZero(column_sums(t.raw)) : SumToZero::identity(n_groups);
  t.penalty = Eigen::MatrixXd::Identity(t.constraint.size(), t.constraint.size());
  return t;
}

Term penalized_term(std::string name, SparseRows raw, Eigen::MatrixXd penalty, SumToZero constraint) {
  Term t;
  t.name = std::move(name);
  t.kind = TermKind::Smooth;
  if (constraint.raw_size() == 0) constraint = SumToZero::identity(static_cast<int>(raw.cols()));
  t.raw = std::move(raw);
  t.constraint = std::move(constraint);
  t.penalty = std::move(penalty);
  return t;
}

// --- ModelSpec ----------------------------------------------------------------

Eigen::Index ModelSpec::rows() const { return terms.empty() ? offset.size() : terms.front().raw.rows(); }

int ModelSpec::size() const {
  int p = 0;
  for (const auto& t : terms) p += t.size();
  return p;
}

int ModelSpec::penalized_terms() const {
  return static_cast<int>(std::count_if(terms.begin(), terms.end(), [](const Term& t) { return t.penalized(); }));
}

void ModelSpec::validate() const {
  if (terms.empty()) throw ValidationError("model has no terms");
  const Eigen::Index n = terms.front().raw.rows();
  for (const auto& t : terms) {
    if (t.raw.rows() != n) throw ValidationError("term '" + t.name + "' has inconsistent row count");
    if (t.constraint.raw_size() != t.raw_size()) {
      throw ValidationError("term '" + t.name + "' constraint does not match its column count");
    }
    if (t.penalized() && (t.penalty.rows() != t.size() || t.penalty.cols() != t.size())) {
      throw ValidationError("term '" + t.name + "' penalty has the wrong shape");
    }
  }
  if (offset.size() != 0 && offset.size() != n) throw ValidationError("offset length differs from row count");
  if (offset.size() != 0 && !offset.allFinite()) throw ValidationError("offset contains non-finite values");
}

// --- FitResult ----------------------------------------------------------------

const TermLayout& FitResult::term(std::string_view name) const {
  for (const auto& t : layout) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no term named '" + std::string(name) + "'");
}

bool FitResult::has_term(std::string_view name) const {
  return std::any_of(layout.begin(), layout.end(), [&](const TermLayout& t) { return t.name == name; });
}

Eigen::VectorXd FitResult::coefficients(std::string_view name) const {
  const auto& t = term(name);
  return beta.segment(t.offset, t.size);
}

Eigen::VectorXd FitResult::raw_coefficients(std::string_view name) const {
  const auto& t = term(name);
  return t.constraint.to_raw(beta.segment(t.offset, t.size));
}

Eigen::VectorXd FitResult::mean() const {
  if (family == Family::QuasiPoisson) return fitted;
  return trials.cwiseProduct(fitted);
}

const Eigen::MatrixXd& coef_covariance(const FitResult& fit) { return fit.cov; }

namespace {

// Variance function on the count scale.
double variance(Family f, double fitted, double trials) {
  return f == Family::QuasiPoisson ? fitted : trials * fitted * (1.0 - fitted);
}

double mean_of(Family f, double fitted, double trials) {
  return f == Family::QuasiPoisson ? fitted : trials * fitted;
}

double clamp_fitted(Family f, double v) {
  if (f == Family::QuasiPoisson) return std::max(v, 1e-300);
  return std::clamp(v, 1e-15, 1.0 - 1e-15);
}

double unit_deviance(Family f, double y, double mu, double trials) {
  auto ylogy = [](double a, double b) { return a > 0 ? a * std::log(a / b) : 0.0; };
  if (f == Family::QuasiPoisson) return 2.0 * (ylogy(y, mu) - (y - mu));
  return 2.0 * (ylogy(y, mu) + ylogy(trials - y, trials - mu));
}

// All terms concatenated into one CSR design, plus the bookkeeping that maps
// raw columns to constrained coefficients.
struct CompiledModel {
  Family family = Family::QuasiPoisson;
  SparseRows x;
  Eigen::VectorXd offset;
  std::vector<int> raw_offset;
  std::vector<int> red_offset;
  std::vector<const Term*> terms;
  std::vector<int> keep;  // raw index of every constrained coordinate slot
  int p_raw = 0;
  int p = 0;
  std::vector<int> penalized;  // term indices with a penalty

  explicit CompiledModel(const ModelSpec& spec) : family(spec.family) {
    spec.validate();
    const Eigen::Index n = spec.rows();
    for (const auto& t : spec.terms) {
      raw_offset.push_back(p_raw);
      red_offset.push_back(p);
      terms.push_back(&t);
      if (t.penalized()) penalized.push_back(static_cast<int>(terms.size()) - 1);
      const int first = t.constraint.active() ? 1 : 0;
      for (int j = first; j < t.raw_size(); ++j) keep.push_back(p_raw + j);
      p_raw += t.raw_size();
      p += t.size();
    }
    Eigen::VectorXi nnz = Eigen::VectorXi::Zero(n);
    for (const auto& t : spec.terms) {
      for (Eigen::Index i = 0; i < n; ++i) {
        nnz(i) += static_cast<int>(t.raw.outerIndexPtr()[i + 1] - t.raw.outerIndexPtr()[i]);
      }
    }
    x = SparseRows(n, p_raw);
    x.reserve(nnz);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < spec.terms.size(); ++k) {
        for (SparseRows::InnerIterator it(spec.terms[k].raw, i); it; ++it) {
          x.insert(i, raw_offset[k] + it.col()) = it.value();
        }
      }
    }
    x.makeCompressed();
    offset = spec.offset.size() ? spec.offset : Eigen::VectorXd::Zero(n);
  }

  Eigen::VectorXd to_raw(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd out(p_raw);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      out.segment(raw_offset[k], terms[k]->raw_size()) =
          terms[k]->constraint.to_raw(beta.segment(red_offset[k], terms[k]->size()));
    }
    return out;
  }

  // Z' v for a raw-space vector.
  Eigen::VectorXd reduce(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd out(p);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      out.segment(red_offset[k], terms[k]->size()) =
          terms[k]->constraint.to_reduced(raw.segment(raw_offset[k], terms[k]->raw_size()));
    }
    return out;
  }

  // Z' G Z for a symmetric raw-space matrix (G is consumed).
  Eigen::MatrixXd reduce(Eigen::MatrixXd g) const {
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const auto& c = terms[k]->constraint;
      if (!c.active()) continue;
      c.reflect_rows(g.middleRows(raw_offset[k], terms[k]->raw_size()));
      c.reflect_cols(g.middleCols(raw_offset[k], terms[k]->raw_size()));
    }
    Eigen::MatrixXd out = g(keep, keep);
    return out;
  }

  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& beta) const {
    return x * to_raw(beta) + offset;
  }

  // S_lambda in constrained coordinates (without the ridge floor).
  Eigen::MatrixXd penalty(const std::vector<double>& lambda) const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t j = 0; j < penalized.size(); ++j) {
      const int k = penalized[j];
      s.block(red_offset[k], red_offset[k], terms[k]->size(), terms[k]->size()) += lambda[j] * terms[k]->penalty;
    }
    return s;
  }

  // X'WX (upper triangle accumulated row by row, then mirrored) and X'Wz in
  // raw coordinates.
  void gram(const Eigen::VectorXd& w, const Eigen::VectorXd& wz, Eigen::MatrixXd& g, Eigen::VectorXd& b) const {
    g.setZero(p_raw, p_raw);
    b.setZero(p_raw);
    const int* outer = x.outerIndexPtr();
    const int* inner = x.innerIndexPtr();
    const double* val = x.valuePtr();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double wi = w(i);
      const int begin = outer[i], end = outer[i + 1];
      for (int a = begin; a < end; ++a) {
        const int ca = inner[a];
        const double xa = val[a];
        b(ca) += xa * wz(i);
        if (wi == 0.0) continue;
        const double wxa = wi * xa;
        double* col_base = g.data();
        for (int c = a; c < end; ++c) {
          // column-major: element (ca, inner[c]) with ca <= inner[c]
          col_base[static_cast<Eigen::Index>(inner[c]) * p_raw + ca] += wxa * val[c];
        }
      }
    }
    g.triangularView<Eigen::StrictlyLower>() = g.transpose();
  }
};

struct Observations {
  Family family;
  const Eigen::VectorXd& y;
  Eigen::VectorXd trials;
  Eigen::VectorXd w;
};

struct IrlsState {
  Eigen::VectorXd beta;
  Eigen::VectorXd eta;
  Eigen::VectorXd fitted;
  double deviance = 0.0;
  double pen_deviance = 0.0;
  double first_pen_deviance = 0.0;
  double score_norm = 0.0;
  double score_bound = 0.0;
  int iterations = 0;
  bool converged = false;
};

class Engine {
 public:
  Engine(const ModelSpec& spec, const Response& response, const FitOptions& options)
      : model_(spec), obs_{spec.family, response.y, response.trials, response.weights}, opt_(options) {
    const Eigen::Index n = model_.x.rows();
    if (response.y.size() != n) throw ValidationError("response length differs from design rows");
    if (!response.y.allFinite() || (response.y.array() < 0).any()) {
      throw ValidationError("response must be finite and nonnegative");
    }
    if (obs_.w.size() == 0) obs_.w = Eigen::VectorXd::Ones(n);
    if (obs_.w.size() != n || (obs_.w.array() < 0).any()) throw ValidationError("bad prior weights");
    if (spec.family == Family::QuasiBinomial) {
      if (obs_.trials.size() != n) throw ValidationError("binomial fit needs trials for every row");
      if ((obs_.trials.array() <= 0).any()) throw ValidationError("binomial trials must be positive");
      if ((response.y.array() > obs_.trials.array()).any()) throw ValidationError("successes exceed trials");
    } else {
      obs_.trials = Eigen::VectorXd();
    }
  }

  const CompiledModel& model() const { return model_; }
  const Observations& obs() const { return obs_; }

  double trials(Eigen::Index i) const { return obs_.trials.size() ? obs_.trials(i) : 1.0; }

  void fitted_from_eta(const Eigen::VectorXd& eta, Eigen::VectorXd& fitted) const {
    fitted.resize(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) fitted(i) = inverse_link(model_.family, eta(i));
  }

  double deviance(const Eigen::VectorXd& fitted) const {
    double d = 0.0;
    for (Eigen::Index i = 0; i < fitted.size(); ++i) {
      const double f = clamp_fitted(model_.family, fitted(i));
      d += obs_.w(i) * unit_deviance(model_.family, obs_.y(i), mean_of(model_.family, f, trials(i)), trials(i));
    }
    return d;
  }

  double pearson(const Eigen::VectorXd& fitted) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < fitted.size(); ++i) {
      const double f = clamp_fitted(model_.family, fitted(i));
      const double r = obs_.y(i) - mean_of(model_.family, f, trials(i));
      s += obs_.w(i) * r * r / variance(model_.family, f, trials(i));
    }
    return s;
  }

  // Working weights and W*z (z excludes the offset).
  void working(const Eigen::VectorXd& eta, const Eigen::VectorXd& fitted, Eigen::VectorXd& w,
               Eigen::VectorXd& wz) const {
    const Eigen::Index n = eta.size();
    w.resize(n);
    wz.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double f = clamp_fitted(model_.family, fitted(i));
      const double v = variance(model_.family, f, trials(i));
      w(i) = obs_.w(i) * v;
      wz(i) = w(i) * (eta(i) - model_.offset(i)) + obs_.w(i) * (obs_.y(i) - mean_of(model_.family, f, trials(i)));
    }
  }

  void initial_eta(Eigen::VectorXd& eta, Eigen::VectorXd& fitted) const {
    const Eigen::Index n = obs_.y.size();
    eta.resize(n);
    fitted.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (model_.family == Family::QuasiPoisson) {
        fitted(i) = obs_.y(i) + 0.5;
      } else {
        fitted(i) = (obs_.y(i) + 0.5) / (obs_.trials(i) + 1.0);
      }
      eta(i) = link(model_.family, fitted(i));
    }
  }

  // X'(w (y - mu)) reduced, minus the penalty gradient.
  Eigen::VectorXd score(const Eigen::VectorXd& fitted, const Eigen::VectorXd& beta, const Eigen::MatrixXd& s_total) const {
    Eigen::VectorXd r(fitted.size());
    for (Eigen::Index i = 0; i < fitted.size(); ++i) {
      r(i) = obs_.w(i) * (obs_.y(i) - mean_of(model_.family, clamp_fitted(model_.family, fitted(i)), trials(i)));
    }
    Eigen::VectorXd g_raw = model_.x.transpose() * r;
    return model_.reduce(g_raw) - s_total * beta;
  }

  Eigen::MatrixXd gram_reduced(const Eigen::VectorXd& eta, const Eigen::VectorXd& fitted, Eigen::VectorXd* b_out) const {
    Eigen::VectorXd w, wz, b;
    Eigen::MatrixXd g;
    working(eta, fitted, w, wz);
    model_.gram(w, wz, g, b);
    if (b_out) *b_out = model_.reduce(b);
    return model_.reduce(std::move(g));
  }

  IrlsState run(const std::vector<double>& lambda, const Eigen::VectorXd& start) const {
    const int p = model_.p;
    Eigen::MatrixXd s_total = model_.penalty(lambda);
    s_total.diagonal().array() += opt_.ridge;

    IrlsState st;
    if (start.size() == p) {
      st.beta = start;
      st.eta = model_.linear_predictor(st.beta);
      fitted_from_eta(st.eta, st.fitted);
    } else {
      st.beta = Eigen::VectorXd::Zero(p);
      initial_eta(st.eta, st.fitted);
    }
    bool have_beta = start.size() == p;
    double pdev = have_beta ? deviance(st.fitted) + st.beta.dot(s_total * st.beta)
                            : std::numeric_limits<double>::infinity();
    st.first_pen_deviance = pdev;

    Eigen::VectorXd b;
    for (int iter = 1; iter <= opt_.max_iter; ++iter) {
      st.iterations = iter;
      Eigen::MatrixXd h = gram_reduced(st.eta, st.fitted, &b);
      h += s_total;
      Eigen::LLT<Eigen::MatrixXd> llt(h);
      if (llt.info() != Eigen::Success) {
        throw FitError("singular penalized system; consider a larger ridge floor", st.beta, iter);
      }
      Eigen::VectorXd beta_new = llt.solve(b);
      Eigen::VectorXd eta_new = model_.linear_predictor(beta_new);
      Eigen::VectorXd fitted_new;
      fitted_from_eta(eta_new, fitted_new);
      double pdev_new = deviance(fitted_new) + beta_new.dot(s_total * beta_new);

      if (have_beta) {
        int halvings = 0;
        while (!(pdev_new <= pdev * (1.0 + 1e-13) + 1e-300) && halvings < opt_.max_halving) {
          beta_new = 0.5 * (beta_new + st.beta);
          eta_new = model_.linear_predictor(beta_new);
          fitted_from_eta(eta_new, fitted_new);
          pdev_new = deviance(fitted_new) + beta_new.dot(s_total * beta_new);
          ++halvings;
        }
        if (!(pdev_new <= pdev * (1.0 + 1e-13) + 1e-300)) {
          // No descent possible at working precision: keep the current
          // iterate and judge convergence on the score alone.
          const Eigen::VectorXd g = score(st.fitted, st.beta, s_total);
          st.score_norm = g.lpNorm<Eigen::Infinity>();
          st.score_bound = opt_.score_tol * (1.0 + b.lpNorm<Eigen::Infinity>());
          st.converged = st.score_norm <= st.score_bound;
          break;
        }
      }

      const double change = std::abs(pdev - pdev_new) / (0.1 + std::abs(pdev_new));
      st.beta = std::move(beta_new);
      st.eta = std::move(eta_new);
      st.fitted = std::move(fitted_new);
      if (!have_beta) st.first_pen_deviance = pdev_new;
      have_beta = true;
      pdev = pdev_new;

      const Eigen::VectorXd g = score(st.fitted, st.beta, s_total);
      st.score_norm = g.lpNorm<Eigen::Infinity>();
      st.score_bound = opt_.score_tol * (1.0 + b.lpNorm<Eigen::Infinity>());
      if (iter > 1 && change < opt_.tol && st.score_norm <= st.score_bound) {
        st.converged = true;
        break;
      }
    }
    st.deviance = deviance(st.fitted);
    st.pen_deviance = pdev;
    if (!st.converged) {
      throw FitError("penalized IRLS did not converge in " + std::to_string(opt_.max_iter) + " iterations",
                     st.beta, st.iterations);
    }
    return st;
  }

  FitResult finish(const IrlsState& st, const std::vector<double>& lambda, const Response& response) const {
    const int p = model_.p;
    FitResult r;
    r.family = model_.family;
    for (std::size_t k = 0; k < model_.terms.size(); ++k) {
      const Term& t = *model_.terms[k];
      TermLayout tl{t.name, t.kind, model_.red_offset[k], t.size(), t.constraint, -1};
      const auto pos = std::find(model_.penalized.begin(), model_.penalized.end(), static_cast<int>(k));
      if (pos != model_.penalized.end()) tl.penalty_index = static_cast<int>(pos - model_.penalized.begin());
      r.layout.push_back(std::move(tl));
    }
    r.beta = st.beta;
    r.lambda = lambda;
    r.iterations = st.iterations;
    r.converged = st.converged;
    r.deviance = st.deviance;
    r.penalized_deviance = st.pen_deviance;
    r.initial_penalized_deviance = st.first_pen_deviance;
    r.score_norm = st.score_norm;
    r.score_bound = st.score_bound;
    r.y = response.y;
    r.trials = obs_.trials;
    r.weights = obs_.w;

    // Fitted values through the same path predict() uses.
    r.eta = model_.linear_predictor(r.beta);
    fitted_from_eta(r.eta, r.fitted);

    Eigen::MatrixXd gc = gram_reduced(r.eta, r.fitted, nullptr);
    Eigen::MatrixXd h = gc + model_.penalty(lambda);
    h.diagonal().array() += opt_.ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) {
      throw FitError("singular penalized system at convergence; consider a larger ridge floor", r.beta,
                     r.iterations);
    }
    r.cov_unscaled = llt.solve(Eigen::MatrixXd::Identity(p, p));
    r.cov_unscaled = 0.5 * (r.cov_unscaled + r.cov_unscaled.transpose()).eval();

    const Eigen::VectorXd influence = r.cov_unscaled.cwiseProduct(gc).rowwise().sum();
    r.edf.resize(model_.terms.size());
    for (std::size_t k = 0; k < model_.terms.size(); ++k) {
      r.edf[k] = influence.segment(model_.red_offset[k], model_.terms[k]->size()).sum();
    }
    r.edf_total = influence.sum();

    const double n = static_cast<double>(r.y.size());
    r.pearson_chi2 = pearson(r.fitted);
    const double resid_df = n - r.edf_total;
    r.gcv = resid_df > 0 ? n * r.pearson_chi2 / (resid_df * resid_df) : std::numeric_limits<double>::infinity();
    if (opt_.phi_override) {
      r.phi = *opt_.phi_override;
    } else {
      r.phi = resid_df > 0 ? r.pearson_chi2 / resid_df : 1.0;
    }
    r.cov = r.phi * r.cov_unscaled;
    return r;
  }

  // Scale factors tr(G_jj) / tr(S_j) at initial weights.
  std::vector<double> penalty_scales() const {
    Eigen::VectorXd eta, fitted;
    initial_eta(eta, fitted);
    const Eigen::MatrixXd gc = gram_reduced(eta, fitted, nullptr);
    std::vector<double> out;
    for (const int k : model_.penalized) {
      const int off = model_.red_offset[k], sz = model_.terms[k]->size();
      const double tg = gc.diagonal().segment(off, sz).sum();
      const double ts = model_.terms[k]->penalty.trace();
      out.push_back(tg > 0 && ts > 0 ? tg / ts : 1.0);
    }
    return out;
  }

 private:
  CompiledModel model_;
  Observations obs_;
  FitOptions opt_;
};

struct SearchOutcome {
  std::vector<double> lambda;
  std::optional<FitResult> best;
};

SearchOutcome search(const Engine& engine, const Response& response, const std::vector<std::vector<double>>& grids,
                     const FitOptions& options) {
  const std::size_t m = grids.size();
  if (m != engine.model().penalized.size()) {
    throw ValidationError("need one lambda grid per penalized term");
  }
  for (const auto& g : grids) {
    if (g.empty()) throw ValidationError("lambda grid must be nonempty");
  }
  std::vector<std::vector<double>> sorted = grids;
  for (auto& g : sorted) std::sort(g.begin(), g.end());

  std::vector<double> current(m);
  for (std::size_t j = 0; j < m; ++j) current[j] = sorted[j][sorted[j].size() / 2];

  SearchOutcome out;
  auto evaluate = [&](const std::vector<double>& lambda, const Eigen::VectorXd& start) -> std::optional<FitResult> {
    try {
      return engine.finish(engine.run(lambda, start), lambda, response);
    } catch (const FitError&) {
      return std::nullopt;
    }
  };

  std::optional<FitResult> best = evaluate(current, {});
  double best_score = best ? best->gcv : std::numeric_limits<double>::infinity();
  const bool trivial = std::all_of(sorted.begin(), sorted.end(), [](const auto& g) { return g.size() == 1; });

  if (!trivial) {
    for (int sweep = 0; sweep < options.sweeps; ++sweep) {
      for (std::size_t j = 0; j < m; ++j) {
        if (sorted[j].size() == 1) continue;
        const double incumbent = current[j];
        double chosen = incumbent;
        std::optional<FitResult> chosen_fit = best;
        double chosen_score = best_score;
        const Eigen::VectorXd start = best ? best->beta : Eigen::VectorXd();
        for (const double cand : sorted[j]) {
          double score;
          std::optional<FitResult> f;
          if (cand == incumbent) {
            score = best_score;
            f = best;
          } else {
            std::vector<double> trial = current;
            trial[j] = cand;
            f = evaluate(trial, start);
            score = f ? f->gcv : std::numeric_limits<double>::infinity();
          }
          // Candidates are visited ascending, so strict improvement keeps
          // the smallest lambda among exact ties.
          if (score < chosen_score || (score == chosen_score && cand < chosen)) {
            chosen_score = score;
            chosen = cand;
            chosen_fit = std::move(f);
          }
        }
        current[j] = chosen;
        best = std::move(chosen_fit);
        best_score = chosen_score;
      }
    }
  }
  if (!best || !std::isfinite(best_score)) {
    throw FitError("smoothing parameter search failed at every grid point");
  }
  out.lambda = current;
  out.best = std::move(best);
  return out;
}

}  // namespace

std::vector<std::vector<double>> default_grids(const ModelSpec& spec, const Response& response,
                                               std::span<const double> relative) {
  Engine engine(spec, response, FitOptions{});
  const auto scales = engine.penalty_scales();
  std::vector<std::vector<double>> grids;
  for (const double s : scales) {
    std::vector<double> g;
    for (const double r : relative) g.push_back(r * s);
    grids.push_back(std::move(g));
  }
  return grids;
}

std::vector<double> select_lambda(const ModelSpec& spec, const Response& response,
                                  const std::vector<std::vector<double>>& grids, const FitOptions& options) {
  Engine engine(spec, response, options);
  bool trivial = true;
  for (const auto& g : grids) {
    if (g.empty()) throw ValidationError("lambda grid must be nonempty");
    trivial = trivial && g.size() == 1;
  }
  if (trivial && grids.size() == engine.model().penalized.size()) {
    std::vector<double> out;
    for (const auto& g : grids) out.push_back(g.front());
    return out;
  }
  return search(engine, response, grids, options).lambda;
}

FitResult fit(const ModelSpec& spec, const Response& response, const FitOptions& options) {
  Engine engine(spec, response, options);
  const std::size_t m = engine.model().penalized.size();
  if (options.lambda) {
    if (options.lambda->size() != m) throw ValidationError("need one lambda per penalized term");
    return engine.finish(engine.run(*options.lambda, options.start), *options.lambda, response);
  }
  if (m == 0) return engine.finish(engine.run({}, options.start), {}, response);
  auto grids = default_grids(spec, response, options.relative_grid);
  auto outcome = search(engine, response, grids, options);
  return std::move(*outcome.best);
}

Prediction predict(const FitResult& fit, const ModelSpec& newdata) {
  if (newdata.terms.size() != fit.layout.size()) throw ValidationError("prediction terms differ from the fit");
  const Eigen::Index n = newdata.rows();
  Prediction out;
  out.eta = newdata.offset.size() ? newdata.offset : Eigen::VectorXd::Zero(n);
  if (newdata.offset.size() != 0 && newdata.offset.size() != n) throw ValidationError("offset length mismatch");
  // Same accumulation order as the fit: raw design times raw coefficients.
  int p_raw = 0;
  for (std::size_t k = 0; k < newdata.terms.size(); ++k) {
    const auto& t = newdata.terms[k];
    const auto& l = fit.layout[k];
    if (t.name != l.name || t.raw_size() != l.constraint.raw_size() || t.raw.rows() != n) {
      throw ValidationError("prediction term '" + t.name + "' does not match the fitted layout");
    }
    p_raw += t.raw_size();
  }
  SparseRows x(n, p_raw);
  Eigen::VectorXd beta_raw(p_raw);
  {
    std::vector<Eigen::Triplet<double>> trip;
    int off = 0;
    for (std::size_t k = 0; k < newdata.terms.size(); ++k) {
      const auto& t = newdata.terms[k];
      const auto& l = fit.layout[k];
      beta_raw.segment(off, t.raw_size()) = l.constraint.to_raw(fit.beta.segment(l.offset, l.size));
      for (Eigen::Index i = 0; i < n; ++i) {
        for (SparseRows::InnerIterator it(t.raw, i); it; ++it) trip.emplace_back(i, off + it.col(), it.value());
      }
      off += t.raw_size();
    }
    x.setFromTriplets(trip.begin(), trip.end());
  }
  out.eta = x * beta_raw + out.eta;
  out.mu.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.mu(i) = inverse_link(fit.family, out.eta(i));
  return out;
}

Prediction predict(const FitResult& fit, const Eigen::MatrixXd& design, const Eigen::VectorXd& offset) {
  if (design.cols() != fit.beta.size()) throw ValidationError("design column count differs from the fit");
  if (offset.size() != 0 && offset.size() != design.rows()) throw ValidationError("offset length mismatch");
  Prediction out;
  out.eta = design * fit.beta;
  if (offset.size()) out.eta += offset;
  out.mu.resize(out.eta.size());
  for (Eigen::Index i = 0; i < out.eta.size(); ++i) out.mu(i) = inverse_link(fit.family, out.eta(i));
  return out;
}

Eigen::VectorXd pearson_residuals(const FitResult& fit) {
  const Eigen::Index n = fit.n();
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tr = fit.trials.size() ? fit.trials(i) : 1.0;
    const double f = clamp_fitted(fit.family, fit.fitted(i));
    const double w = fit.weights.size() ? fit.weights(i) : 1.0;
    r(i) = std::sqrt(w) * (fit.y(i) - mean_of(fit.family, f, tr)) / std::sqrt(variance(fit.family, f, tr));
  }
  return r;
}

}  // namespace nowcast
