#include "support.hpp"

#include <fstream>
#include <sstream>

#include <unistd.h>

namespace nowcast::testing {

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("nowcast-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string TempDir::str(const std::string& child) const { return child.empty() ? path_.string() : (path_ / child).string(); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<DeathEvent> random_events(Gen& g, Date t0, Date T, int n, int max_raw_delay) {
  static const char* ids[] = {"01001", "05315", "09162", "11001"};
  std::vector<DeathEvent> out;
  for (int i = 0; i < n; ++i) {
    DeathEvent e;
    e.district_id = ids[g.integer(0, 3)];
    e.age = static_cast<AgeGroup>(g.integer(0, 3));
    e.gender = static_cast<Gender>(g.integer(0, 1));
    e.registration = t0 + g.integer(0, T - t0);
    e.delay = g.integer(1, max_raw_delay);
    e.report = e.registration + e.delay;
    out.push_back(e);
  }
  return out;
}

ReportingTriangle constant_hazard_triangle(Gen& g, Date t0, Date T, int d_max, double p, double mean) {
  std::vector<DeathEvent> events;
  for (Date t = t0; t < T; t = t + 1) {
    const auto y = g.poisson(mean);
    for (std::int64_t k = 0; k < y; ++k) {
      int d = 1;
      for (int j = d_max; j >= 2; --j) {
        if (g.coin(p)) {
          d = j;
          break;
        }
      }
      if (t + d > T) continue;
      events.push_back(DeathEvent{"01001", AgeGroup::A80plus, Gender::M, t, t + d, d});
    }
  }
  return build_triangle(events, t0, T, d_max);
}

SimConfig small_config(std::uint64_t seed, int districts, int days) {
  GridOptions o;
  o.districts = districts;
  o.days = days;
  o.seed = seed;
  o.deaths_per_million = 40.0;
  return grid_config(o);
}

OffsetSeries true_offsets(const SimTruth& truth) {
  OffsetSeries o;
  o.first = truth.t0;
  o.log_F = Eigen::VectorXd::Zero(truth.T - truth.t0);
  for (Date t = truth.t0; t < truth.T; t = t + 1) {
    const int d = truth.T - t;
    if (d < truth.d_max) o.log_F(t - truth.t0) = std::log(truth.F(t - truth.t0, d - 1));
  }
  return o;
}

CellTable sim_cells(const SimConfig& config, const SimOutput& out, bool with_true_F) {
  OffsetSeries o = true_offsets(out.truth);
  if (!with_true_F) o.log_F.setZero();
  return assemble_cells(out.truth.events, config.population(), config.geometry(), o, config.t0, config.T,
                        config.recent_days);
}

GlmOracle dense_glm(Family family, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& trials,
                    const Eigen::VectorXd& offset) {
  const auto n = x.rows();
  const auto p = x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta(n), mu(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (family == Family::QuasiPoisson) {
      mu(i) = y(i) + 0.5;
      eta(i) = std::log(mu(i));
    } else {
      const double pr = (y(i) + 0.5) / (trials(i) + 1.0);
      eta(i) = std::log(pr / (1 - pr));
      mu(i) = pr;
    }
  }
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd sw(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double w, resid;
      if (family == Family::QuasiPoisson) {
        w = mu(i);
        resid = (y(i) - mu(i)) / mu(i);
      } else {
        w = trials(i) * mu(i) * (1 - mu(i));
        resid = (y(i) - trials(i) * mu(i)) / w;
      }
      sw(i) = std::sqrt(w);
      z(i) = eta(i) - offset(i) + resid;
    }
    const Eigen::MatrixXd wx = sw.asDiagonal() * x;
    const Eigen::VectorXd next = wx.colPivHouseholderQr().solve(sw.cwiseProduct(z));
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    eta = x * beta + offset;
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = family == Family::QuasiPoisson ? std::exp(eta(i)) : 1.0 / (1.0 + std::exp(-eta(i)));
    }
    if (change < 1e-13 * (1.0 + beta.lpNorm<Eigen::Infinity>())) break;
  }
  GlmOracle o;
  o.beta = beta;
  o.mu = family == Family::QuasiPoisson ? mu : Eigen::VectorXd(trials.cwiseProduct(mu));
  double pearson = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = family == Family::QuasiPoisson ? mu(i) : trials(i) * mu(i) * (1 - mu(i));
    pearson += (y(i) - o.mu(i)) * (y(i) - o.mu(i)) / v;
  }
  o.phi = pearson / static_cast<double>(n - p);
  return o;
}

double cox_de_boor(const std::vector<double>& knots, int j, int p, double x) {
  if (p == 0) {
    return knots[static_cast<std::size_t>(j)] <= x && x < knots[static_cast<std::size_t>(j + 1)] ? 1.0 : 0.0;
  }
  double out = 0.0;
  const double a = knots[static_cast<std::size_t>(j + p)] - knots[static_cast<std::size_t>(j)];
  const double b = knots[static_cast<std::size_t>(j + p + 1)] - knots[static_cast<std::size_t>(j + 1)];
  if (a > 0) out += (x - knots[static_cast<std::size_t>(j)]) / a * cox_de_boor(knots, j, p - 1, x);
  if (b > 0) out += (knots[static_cast<std::size_t>(j + p + 1)] - x) / b * cox_de_boor(knots, j + 1, p - 1, x);
  return out;
}

Eigen::MatrixXd dense_design(const ModelSpec& spec) {
  Eigen::MatrixXd x(spec.rows(), spec.size());
  Eigen::Index col = 0;
  for (const auto& t : spec.terms) {
    const Eigen::MatrixXd raw = Eigen::MatrixXd(t.raw);
    x.middleCols(col, t.size()) = raw * t.constraint.basis();
    col += t.size();
  }
  return x;
}

}  // namespace nowcast::testing
