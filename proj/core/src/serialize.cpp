#include "nowcast/serialize.hpp"

#include <cmath>
#include <functional>

#include <nlohmann/json.hpp>

#include "nowcast/errors.hpp"

namespace nowcast::json {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

constexpr const char* kConfigFormat = "nowcast-sim-config";
constexpr const char* kTruthFormat = "nowcast-sim-truth";
constexpr const char* kDelayFitFormat = "nowcast-delay-fit";
constexpr const char* kMortalityFitFormat = "nowcast-mortality-fit";

const char* kAgeKeys[3] = {"A15-34", "A60-79", "A80+"};
const char* kWeekdayKeys[6] = {"Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};

std::string group_key(Group g) { return std::string(to_string(g.age)) + "/" + std::string(to_string(g.gender)); }

// Field access with the JSON path in every error message.
class Reader {
 public:
  Reader(const json& j, std::string path, const std::string& source) : j_(j), path_(std::move(path)), source_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": field '" + (path_.empty() ? "<root>" : path_) + "': " + what);
  }

  bool has(const char* key) const { return j_.is_object() && j_.contains(key); }
  Reader at(const char* key) const {
    if (!j_.is_object()) fail("expected an object");
    if (!j_.contains(key)) Reader(j_, child(key), source_).fail("missing");
    return Reader(j_.at(key), child(key), source_);
  }
  Reader at(std::size_t i) const { return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]", source_); }
  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("not finite");
    return v;
  }
  double number(const char* key, double fallback) const { return has(key) ? at(key).number() : fallback; }
  std::int64_t integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<std::int64_t>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  Date date() const {
    try {
      return Date::parse(string());
    } catch (const InputError& e) {
      fail(e.what());
    }
  }
  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  const std::string& source_;
};

json parse_document(std::string_view text, const std::string& source, const char* format) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": invalid JSON: " + e.what());
  }
  Reader r(j, "", source);
  if (r.at("format").string() != format) r.at("format").fail(std::string("expected '") + format + "'");
  if (r.at("format_version").integer() != kFormatVersion) {
    r.at("format_version").fail("unsupported version");
  }
  return j;
}

std::string dump(const ordered& j) { return j.dump(2) + "\n"; }

ordered vec(const Eigen::VectorXd& v) {
  ordered a = ordered::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ordered mat(const Eigen::MatrixXd& m) {
  ordered a = ordered::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
  return a;
}

ordered count_mat(const CountMatrix& m) {
  ordered a = ordered::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered row = ordered::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

CountMatrix read_count_mat(const Reader& r, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(r.size()) != rows) r.fail("expected " + std::to_string(rows) + " rows");
  CountMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Reader row = r.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) row.fail("expected " + std::to_string(cols) + " columns");
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row.at(static_cast<std::size_t>(j)).integer();
  }
  return m;
}

Eigen::VectorXd read_vec(const Reader& r) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(r.size()));
  for (std::size_t i = 0; i < r.size(); ++i) v(static_cast<Eigen::Index>(i)) = r.at(i).number();
  return v;
}

ordered fit_core(const FitResult& f, bool covariance) {
  ordered j;
  j["family"] = std::string(to_string(f.family));
  ordered terms = ordered::array();
  for (const auto& t : f.layout) {
    ordered tj;
    tj["name"] = t.name;
    tj["kind"] = std::string(to_string(t.kind));
    tj["offset"] = t.offset;
    tj["size"] = t.size;
    if (t.penalty_index >= 0) {
      tj["lambda"] = f.lambda[static_cast<std::size_t>(t.penalty_index)];
    }
    const auto k = static_cast<std::size_t>(&t - f.layout.data());
    tj["edf"] = f.edf[k];
    terms.push_back(std::move(tj));
  }
  j["terms"] = std::move(terms);
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["phi"] = f.phi;
  j["edf_total"] = f.edf_total;
  j["deviance"] = f.deviance;
  j["penalized_deviance"] = f.penalized_deviance;
  j["pearson_chi2"] = f.pearson_chi2;
  j["gcv"] = f.gcv;
  j["score_norm"] = f.score_norm;
  j["score_bound"] = f.score_bound;
  j["beta"] = vec(f.beta);
  j["standard_errors"] = vec(f.cov.diagonal().cwiseMax(0.0).cwiseSqrt());
  if (covariance) j["covariance"] = mat(f.cov);
  ordered obs;
  obs["y"] = vec(f.y);
  if (f.trials.size()) obs["trials"] = vec(f.trials);
  obs["mean"] = vec(f.mean());
  obs["weights"] = vec(f.weights);
  j["observations"] = std::move(obs);
  return j;
}

ordered effect(double coef, double se) {
  ordered e;
  e["estimate"] = coef;
  e["se"] = se;
  e["relative_risk"] = std::exp(coef);
  return e;
}

double se_of(const FitResult& f, const std::string& term, Eigen::Index k) {
  const auto& l = f.term(term);
  return std::sqrt(std::max(0.0, f.cov(l.offset + k, l.offset + k)));
}

ordered string_list(const std::vector<std::string>& v) {
  ordered a = ordered::array();
  for (const auto& s : v) a.push_back(s);
  return a;
}

}  // namespace

// --- config -----------------------------------------------------------------------

SimConfig parse_config(std::string_view text, const std::string& source) {
  const json doc = parse_document(text, source, kConfigFormat);
  const Reader r(doc, "", source);
  SimConfig c;
  c.t0 = r.at("t0").date();
  c.T = r.at("T").date();
  if (r.has("d_max")) c.d_max = static_cast<int>(r.at("d_max").integer());
  if (r.has("seed")) {
    const auto s = r.at("seed").integer();
    if (s < 0) r.at("seed").fail("must be nonnegative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  c.intercept = r.number("intercept", c.intercept);
  if (r.has("age")) {
    const Reader a = r.at("age");
    for (int k = 0; k < 3; ++k) c.age[static_cast<std::size_t>(k)] = a.number(kAgeKeys[k], 0.0);
  }
  c.female = r.number("female", 0.0);
  if (r.has("weekday")) {
    const Reader w = r.at("weekday");
    for (int k = 0; k < 6; ++k) c.weekday[static_cast<std::size_t>(k)] = w.number(kWeekdayKeys[k], 0.0);
  }
  if (r.has("trend")) {
    const Reader t = r.at("trend");
    c.trend = TrendTruth{t.number("slope", 0.0), t.number("bump_height", 0.0), t.number("bump_center", 0.0),
                         t.number("bump_width", 10.0)};
  }
  if (r.has("spatial")) {
    const Reader s = r.at("spatial");
    c.spatial = SpatialTruth{s.number("lon_slope", 0.0), s.number("lat_slope", 0.0), s.number("lon_ref", 0.0),
                             s.number("lat_ref", 0.0)};
  }
  if (r.has("random_effects")) {
    const Reader re = r.at("random_effects");
    c.sigma0 = re.number("sigma0", 0.0);
    c.sigma1 = re.number("sigma1", 0.0);
    if (re.has("recent_days")) c.recent_days = static_cast<int>(re.at("recent_days").integer());
  }
  if (r.has("delay")) {
    const Reader d = r.at("delay");
    if (d.has("mode")) {
      const std::string m = d.at("mode").string();
      if (m == "sequential") {
        c.delay.mode = DelayMode::Sequential;
      } else if (m == "lognormal") {
        c.delay.mode = DelayMode::LogNormal;
      } else {
        d.at("mode").fail("expected 'sequential' or 'lognormal'");
      }
    }
    c.delay.intercept = d.number("intercept", c.delay.intercept);
    c.delay.log_slope = d.number("log_slope", c.delay.log_slope);
    c.delay.time_slope = d.number("time_slope", 0.0);
    if (d.has("constant")) c.delay.constant = d.at("constant").number();
    c.delay.meanlog = d.number("meanlog", c.delay.meanlog);
    c.delay.sdlog = d.number("sdlog", c.delay.sdlog);
    if (d.has("weekday")) {
      const Reader w = d.at("weekday");
      for (int k = 0; k < 7; ++k) c.delay.weekday[static_cast<std::size_t>(k)] = w.number(kWeekdayNames[k], 0.0);
    }
  }
  const Reader ds = r.at("districts");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Reader d = ds.at(i);
    SimDistrict sd;
    sd.id = d.at("id").string();
    sd.lon = d.at("lon").number();
    sd.lat = d.at("lat").number();
    const Reader pop = d.at("pop");
    if (!pop.raw().is_object()) pop.fail("expected an object keyed by age/gender");
    for (auto it = pop.raw().begin(); it != pop.raw().end(); ++it) {
      const Reader p(it.value(), pop.path() + "." + it.key(), source);
      int slot = -1;
      for (int g = 0; g < kAgeGroups * kGenders; ++g) {
        if (group_key(Group::from_index(g)) == it.key()) slot = g;
      }
      if (slot < 0) p.fail("unknown group key (expected e.g. 'A35-59/M')");
      const auto v = p.integer();
      if (v < 0) p.fail("negative population");
      sd.pop[static_cast<std::size_t>(slot)] = v;
    }
    c.districts.push_back(std::move(sd));
  }
  if (r.has("hotspots")) {
    const Reader hs = r.at("hotspots");
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const Reader h = hs.at(i);
      Hotspot spot;
      spot.district_id = h.at("district_id").string();
      spot.start = h.at("start").date();
      spot.end = h.at("end").date();
      spot.multiplier = h.at("multiplier").number();
      if (h.has("ages")) {
        const Reader ages = h.at("ages");
        for (std::size_t k = 0; k < ages.size(); ++k) {
          try {
            spot.ages.push_back(parse_age_group(ages.at(k).string()));
          } catch (const ParseError& e) {
            ages.at(k).fail(e.what());
          }
        }
      }
      c.hotspots.push_back(std::move(spot));
    }
  }
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return c;
}

std::string emit_config(const SimConfig& c) {
  ordered j;
  j["format"] = kConfigFormat;
  j["format_version"] = kFormatVersion;
  j["t0"] = c.t0.iso();
  j["T"] = c.T.iso();
  j["d_max"] = c.d_max;
  j["seed"] = c.seed;
  j["intercept"] = c.intercept;
  for (int k = 0; k < 3; ++k) j["age"][kAgeKeys[k]] = c.age[static_cast<std::size_t>(k)];
  j["female"] = c.female;
  for (int k = 0; k < 6; ++k) j["weekday"][kWeekdayKeys[k]] = c.weekday[static_cast<std::size_t>(k)];
  j["trend"] = {{"slope", c.trend.slope},
                {"bump_height", c.trend.bump_height},
                {"bump_center", c.trend.bump_center},
                {"bump_width", c.trend.bump_width}};
  j["spatial"] = {{"lon_slope", c.spatial.lon_slope},
                  {"lat_slope", c.spatial.lat_slope},
                  {"lon_ref", c.spatial.lon_ref},
                  {"lat_ref", c.spatial.lat_ref}};
  j["random_effects"] = {{"sigma0", c.sigma0}, {"sigma1", c.sigma1}, {"recent_days", c.recent_days}};
  ordered d;
  d["mode"] = c.delay.mode == DelayMode::Sequential ? "sequential" : "lognormal";
  d["intercept"] = c.delay.intercept;
  d["log_slope"] = c.delay.log_slope;
  d["time_slope"] = c.delay.time_slope;
  for (int k = 0; k < 7; ++k) d["weekday"][kWeekdayNames[k]] = c.delay.weekday[static_cast<std::size_t>(k)];
  if (c.delay.constant) d["constant"] = *c.delay.constant;
  d["meanlog"] = c.delay.meanlog;
  d["sdlog"] = c.delay.sdlog;
  j["delay"] = std::move(d);
  ordered ds = ordered::array();
  for (const auto& sd : c.districts) {
    ordered o;
    o["id"] = sd.id;
    o["lon"] = sd.lon;
    o["lat"] = sd.lat;
    ordered pop = ordered::object();
    for (int g = 0; g < kAgeGroups * kGenders; ++g) {
      if (sd.pop[static_cast<std::size_t>(g)] > 0) pop[group_key(Group::from_index(g))] = sd.pop[static_cast<std::size_t>(g)];
    }
    o["pop"] = std::move(pop);
    ds.push_back(std::move(o));
  }
  j["districts"] = std::move(ds);
  ordered hs = ordered::array();
  for (const auto& h : c.hotspots) {
    ordered o;
    o["district_id"] = h.district_id;
    o["start"] = h.start.iso();
    o["end"] = h.end.iso();
    o["multiplier"] = h.multiplier;
    if (!h.ages.empty()) {
      ordered ages = ordered::array();
      for (const auto a : h.ages) ages.push_back(std::string(to_string(a)));
      o["ages"] = std::move(ages);
    }
    hs.push_back(std::move(o));
  }
  j["hotspots"] = std::move(hs);
  return dump(j);
}

// --- truth ------------------------------------------------------------------------

std::string emit_truth(const SimTruth& t) {
  ordered j;
  j["format"] = kTruthFormat;
  j["format_version"] = kFormatVersion;
  j["t0"] = t.t0.iso();
  j["T"] = t.T.iso();
  j["d_max"] = t.d_max;
  j["total_deaths"] = t.events.size();
  std::size_t reported = 0;
  for (const auto& e : t.events) reported += e.report <= t.T ? 1 : 0;
  j["reported_by_T"] = reported;
  ordered national = ordered::array();
  for (Eigen::Index i = 0; i < t.national.size(); ++i) {
    national.push_back({{"t", (t.t0 + static_cast<int>(i)).iso()}, {"Y", static_cast<std::int64_t>(t.national(i))}});
  }
  j["national"] = std::move(national);
  ordered re = ordered::array();
  for (std::size_t r = 0; r < t.districts.size(); ++r) {
    re.push_back({{"district_id", t.districts[r]},
                  {"u0", t.u0(static_cast<Eigen::Index>(r))},
                  {"u1", t.u1(static_cast<Eigen::Index>(r))}});
  }
  j["random_effects"] = std::move(re);
  j["F"] = mat(t.F);
  j["N_observed"] = count_mat(t.observed().N);
  j["N_full"] = count_mat(t.full.N);
  return dump(j);
}

TruthSummary parse_truth(std::string_view text, const std::string& source) {
  const json doc = parse_document(text, source, kTruthFormat);
  const Reader r(doc, "", source);
  TruthSummary s;
  s.t0 = r.at("t0").date();
  s.T = r.at("T").date();
  s.d_max = static_cast<int>(r.at("d_max").integer());
  const Reader nat = r.at("national");
  if (static_cast<int>(nat.size()) != s.T - s.t0) nat.fail("expected one entry per date in [t0, T - 1]");
  s.national.resize(static_cast<Eigen::Index>(nat.size()));
  for (std::size_t i = 0; i < nat.size(); ++i) {
    const Reader e = nat.at(i);
    if (e.at("t").date() != s.t0 + static_cast<int>(i)) e.at("t").fail("dates must be consecutive from t0");
    s.national(static_cast<Eigen::Index>(i)) = static_cast<double>(e.at("Y").integer());
  }
  s.observed_N = read_count_mat(r.at("N_observed"), s.T - s.t0 + 1, s.d_max);
  s.full_N = read_count_mat(r.at("N_full"), s.T - s.t0 + 1, s.d_max);
  return s;
}

// --- fits -------------------------------------------------------------------------

std::string emit_delay_fit(const DelayFit& fit, const FitDocumentOptions& options) {
  ordered j;
  j["format"] = kDelayFitFormat;
  j["format_version"] = kFormatVersion;
  j["manifest_hash"] = options.manifest_hash;
  j["model"] = "delay";
  j["first"] = fit.first.iso();
  j["last"] = fit.last.iso();
  j["d_max"] = fit.d_max;
  j["link"] = "logit";
  const Eigen::VectorXd wd = fit.weekday_effects();
  ordered w = ordered::object();
  w["Monday"] = effect(0.0, 0.0);
  for (int k = 0; k < 6; ++k) {
    const auto pos = std::find(fit.weekday_levels.begin(), fit.weekday_levels.end(), k + 1);
    const double se =
        pos == fit.weekday_levels.end() ? 0.0 : se_of(fit.fit, "weekday", pos - fit.weekday_levels.begin());
    w[kWeekdayKeys[k]] = effect(wd(k), se);
  }
  j["intercept"] = effect(fit.fit.coefficients("intercept")(0), se_of(fit.fit, "intercept", 0));
  j["weekday"] = std::move(w);
  j["warnings"] = string_list(fit.warnings);
  j["fit"] = fit_core(fit.fit, options.include_covariance);
  return dump(j);
}

std::string emit_mortality_fit(const MortalityFit& fit, const FitDocumentOptions& options) {
  const FitResult& f = fit.fit;
  ordered j;
  j["format"] = kMortalityFitFormat;
  j["format_version"] = kFormatVersion;
  j["manifest_hash"] = options.manifest_hash;
  j["model"] = fit.specs.agesplit ? "mortality-agesplit" : "mortality";
  j["first"] = fit.cells.first.iso();
  j["last"] = fit.cells.last.iso();
  j["T"] = fit.cells.T.iso();
  j["link"] = "log";

  ordered fixed;
  fixed["intercept"] = effect(fit.intercept(), se_of(f, "intercept", 0));
  const Eigen::Vector3d age = fit.age_effects();
  const int slots[3] = {static_cast<int>(AgeGroup::A15_34), static_cast<int>(AgeGroup::A60_79),
                        static_cast<int>(AgeGroup::A80plus)};
  for (int k = 0; k < 3; ++k) {
    const auto pos = std::find(fit.age_levels.begin(), fit.age_levels.end(), slots[k]);
    const double se = pos == fit.age_levels.end() ? 0.0 : se_of(f, "age", pos - fit.age_levels.begin());
    fixed[std::string("age ") + kAgeKeys[k]] = effect(age(k), se);
  }
  fixed["female"] = effect(fit.female_effect(), fit.female ? se_of(f, "female", 0) : 0.0);
  const Eigen::VectorXd wd = fit.weekday_effects();
  for (int k = 0; k < 6; ++k) {
    const auto pos = std::find(fit.weekday_levels.begin(), fit.weekday_levels.end(), k + 1);
    const double se = pos == fit.weekday_levels.end() ? 0.0 : se_of(f, "weekday", pos - fit.weekday_levels.begin());
    fixed[kWeekdayKeys[k]] = effect(wd(k), se);
  }
  j["fixed_effects"] = std::move(fixed);
  j["reference"] = {{"age", "A35-59"}, {"gender", "M"}, {"weekday", "Monday"}};

  ordered vc;
  vc["blocks"] = string_list(fit.random_blocks);
  vc["sigma_u"] = mat(fit.sigma_u());
  vc["off_diagonal_estimated"] = false;
  vc["note"] = "diagonal components phi / lambda_j; covariances between blocks are not estimated";
  j["variance_components"] = std::move(vc);
  j["trend_weekday_averaging"] = "equal weights over the seven weekdays";

  ordered re = ordered::array();
  std::vector<Eigen::VectorXd> u;
  for (const auto& b : fit.random_blocks) u.push_back(fit.random_effects(b));
  for (std::size_t r = 0; r < fit.cells.districts.size(); ++r) {
    ordered o;
    o["district_id"] = fit.cells.districts[r];
    for (std::size_t b = 0; b < u.size(); ++b) o[fit.random_blocks[b]] = u[b](static_cast<Eigen::Index>(r));
    re.push_back(std::move(o));
  }
  j["random_effects"] = std::move(re);
  j["warnings"] = string_list(fit.warnings);
  j["fit"] = fit_core(f, options.include_covariance);
  return dump(j);
}

FitObservations parse_fit_observations(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": invalid JSON: " + e.what());
  }
  const Reader r(doc, "", source);
  const std::string format = r.at("format").string();
  if (format != kDelayFitFormat && format != kMortalityFitFormat) r.at("format").fail("not a fit document");
  if (r.at("format_version").integer() != kFormatVersion) r.at("format_version").fail("unsupported version");
  FitObservations o;
  o.model = r.at("model").string();
  const Reader f = r.at("fit");
  try {
    o.family = parse_family(f.at("family").string());
  } catch (const ParseError& e) {
    f.at("family").fail(e.what());
  }
  o.phi = f.at("phi").number();
  o.phi_text = f.at("phi").raw().dump();
  const Reader obs = f.at("observations");
  o.y = read_vec(obs.at("y"));
  o.mean = read_vec(obs.at("mean"));
  o.weights = read_vec(obs.at("weights"));
  if (obs.has("trials")) o.trials = read_vec(obs.at("trials"));
  const auto n = o.y.size();
  if (o.mean.size() != n || o.weights.size() != n || (o.trials.size() != 0 && o.trials.size() != n)) {
    obs.fail("observation vectors differ in length");
  }
  if (o.family == Family::QuasiBinomial && o.trials.size() != n) obs.fail("binomial fit without trials");
  return o;
}

Eigen::VectorXd pearson_residuals(const FitObservations& o) {
  Eigen::VectorXd r(o.y.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    double v = o.mean(i);
    if (o.family == Family::QuasiBinomial) v = o.mean(i) * (1.0 - o.mean(i) / o.trials(i));
    r(i) = std::sqrt(o.weights(i)) * (o.y(i) - o.mean(i)) / std::sqrt(v);
  }
  return r;
}

}  // namespace nowcast::json
