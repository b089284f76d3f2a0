#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <regex>

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>

#include "manifest.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/delay.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/mortality.hpp"
#include "nowcast/serialize.hpp"
#include "nowcast/simgen.hpp"
#include "nowcast/triangle.hpp"
#include "version.hpp"

namespace nowcast::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kNowcastHeader = {"t", "C_observed", "F_hat", "Y_hat", "pi_lower", "pi_upper"};

std::string fmt(double x) { return csv::format_double(x); }

class OutputDir {
 public:
  OutputDir(const std::string& dir, Manifest& manifest) : dir_(dir), manifest_(manifest) {
    fs::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& bytes) {
    const fs::path p = dir_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    csv::write_whole_file(p.string(), bytes);
    manifest_.output(name, bytes);
  }

  void finish(const std::string& command) {
    csv::write_whole_file((dir_ / (command + ".manifest.json")).string(), manifest_.emit());
  }

 private:
  fs::path dir_;
  Manifest& manifest_;
};

// --- ingest ---------------------------------------------------------------------

struct IngestArgs {
  std::string snapshot_dir;
  std::string out;
  int d_max = kDefaultMaxDelay;
  std::string t0;
};

int cmd_ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(a.snapshot_dir)) throw InputError("snapshot directory not found: " + a.snapshot_dir);
  if (a.d_max < 1) throw InputError("--dmax must be at least 1");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(a.snapshot_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no snapshot CSV files in " + a.snapshot_dir);

  Manifest manifest("ingest");
  manifest.flag("dmax", std::to_string(a.d_max));
  if (!a.t0.empty()) manifest.flag("t0", a.t0);
  std::vector<SnapshotTable> snaps;
  for (const auto& f : files) {
    snaps.push_back(parse_snapshot(f));
    manifest.input(f);
  }
  std::sort(snaps.begin(), snaps.end(),
            [](const SnapshotTable& x, const SnapshotTable& y) { return x.download_date < y.download_date; });
  std::vector<std::string> missing;
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    if (snaps[i].download_date == snaps[i - 1].download_date) {
      throw InputError("two snapshots for download date " + snaps[i].download_date.iso());
    }
    for (Date d = snaps[i - 1].download_date + 1; d < snaps[i].download_date; d = d + 1) missing.push_back(d.iso());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw InputError("snapshot dates are not contiguous; missing: " + list);
  }

  const Date first = snaps.front().download_date;
  const Date T = snaps.back().download_date;
  const Date t0 = a.t0.empty() ? first : Date::parse(a.t0);
  if (t0 > T) throw InputError("--t0 " + t0.iso() + " is after the last snapshot " + T.iso());
  manifest.data_range(first.iso(), T.iso());

  std::vector<DeathEvent> events;
  std::string warnings = "kind,date,detail\n";
  std::size_t dropped = 0;
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    DiffResult diff = diff_snapshots(snaps[i - 1], snaps[i], a.d_max);
    for (auto& e : diff.events) {
      if (e.registration < t0) {
        ++dropped;
        continue;
      }
      events.push_back(std::move(e));
    }
    for (const auto& w : diff.warnings) {
      warnings += "decrement," + w.download_date.iso() + "," + w.key.district_id + " " +
                  std::string(to_string(w.key.age)) + " " + std::string(to_string(w.key.gender)) + " " +
                  w.key.registration.iso() + " " + std::to_string(w.previous) + "->" + std::to_string(w.current) +
                  "\n";
    }
  }
  if (dropped > 0) {
    warnings += "before_t0," + t0.iso() + "," + std::to_string(dropped) + " deaths registered before t0 dropped\n";
    err << "warning: " << dropped << " deaths registered before " << t0.iso() << " dropped\n";
  }
  std::sort(events.begin(), events.end());
  const ReportingTriangle tri = build_triangle(events, t0, T, a.d_max);

  OutputDir dir(a.out, manifest);
  dir.write("triangle.csv", emit_triangle(tri));
  dir.write("events.csv", emit_events(events));
  dir.write("warnings.csv", warnings);
  dir.finish("ingest");
  out << "ingested " << snaps.size() << " snapshots (" << first.iso() << " .. " << T.iso() << "), " << events.size()
      << " deaths\n";
  return kOk;
}

// --- nowcast --------------------------------------------------------------------

struct NowcastArgs {
  std::string triangle;
  std::string out;
  std::optional<int> d_max;
  int n_boot = kDefaultBootstrapDraws;
  std::uint64_t seed = 1;
  std::string truth;
};

std::string emit_nowcast(const std::vector<NowcastResult>& results) {
  std::string s = "t,C_observed,F_hat,Y_hat,pi_lower,pi_upper\n";
  for (const auto& r : results) {
    s += r.t.iso() + "," + std::to_string(r.c_observed) + "," + fmt(r.f_hat) + "," + fmt(r.y_hat) + ",";
    if (r.has_interval()) s += fmt(r.pi_lower) + "," + fmt(r.pi_upper);
    else s += ",";
    s += "\n";
  }
  return s;
}

std::vector<NowcastResult> parse_nowcast(const std::string& path) {
  std::vector<NowcastResult> out;
  for (const auto& rec : csv::read_file(path, kNowcastHeader)) {
    const auto& f = rec.fields;
    NowcastResult r;
    try {
      r.t = Date::parse(f[0]);
    } catch (const ParseError& e) {
      throw ParseError(path, rec.line, e.what());
    }
    r.c_observed = csv::parse_int(f[1], path, rec.line);
    r.f_hat = csv::parse_double(f[2], path, rec.line);
    r.y_hat = csv::parse_double(f[3], path, rec.line);
    if (!f[4].empty() || !f[5].empty()) {
      r.pi_lower = csv::parse_double(f[4], path, rec.line);
      r.pi_upper = csv::parse_double(f[5], path, rec.line);
      r.n_boot = 1;
    }
    if (!out.empty() && r.t != out.back().t + 1) throw ParseError(path, rec.line, "dates must be consecutive");
    out.push_back(r);
  }
  if (out.empty()) throw ParseError(path + ": nowcast file has no rows");
  return out;
}

int cmd_nowcast(const NowcastArgs& a, std::ostream& out, std::ostream& err) {
  if (a.n_boot < 0) throw InputError("--nboot must be nonnegative");
  Manifest manifest("nowcast");
  ReportingTriangle tri = read_triangle(a.triangle);
  manifest.input(a.triangle);
  if (a.d_max) {
    if (*a.d_max > tri.d_max) {
      throw InputError("--dmax " + std::to_string(*a.d_max) + " exceeds the triangle's d_max " +
                       std::to_string(tri.d_max));
    }
    tri = fold_triangle(tri, *a.d_max);
  }
  manifest.flag("dmax", std::to_string(tri.d_max));
  manifest.flag("nboot", std::to_string(a.n_boot));
  manifest.seed(a.seed);
  manifest.data_range(tri.t0.iso(), tri.T.iso());

  const DelayFit fit = fit_delay(tri);
  for (const auto& w : fit.warnings) err << "warning: " << w << "\n";
  const auto results = bootstrap_nowcast(tri, fit, a.n_boot, a.seed);

  std::vector<Date> dates;
  for (const auto& r : results) dates.push_back(r.t);
  const OffsetSeries offsets{tri.t0, offset_log_F(fit, dates, tri.T)};

  OutputDir dir(a.out, manifest);
  dir.write("nowcast.csv", emit_nowcast(results));
  dir.write("offsets.csv", emit_offsets(offsets));
  dir.write("delay_fit.json", json::emit_delay_fit(fit, {manifest.hash(), true}));
  dir.finish("nowcast");

  out << "nowcast for " << results.size() << " registration dates (" << tri.t0.iso() << " .. " << (tri.T - 1).iso()
      << "), d_max " << tri.d_max << ", " << a.n_boot << " bootstrap draws\n";

  if (!a.truth.empty()) {
    const auto truth = json::parse_truth(csv::read_whole_file(a.truth), a.truth);
    if (a.n_boot == 0) throw InputError("--truth needs bootstrap intervals (--nboot > 0)");
    int inside = 0, total = 0, inside_all = 0, total_all = 0;
    for (const auto& r : results) {
      const int i = r.t - truth.t0;
      if (i < 0 || i >= truth.national.size() || tri.T - r.t >= tri.d_max) continue;
      const double y = truth.national(i);
      const bool hit = r.pi_lower <= y && y <= r.pi_upper;
      ++total_all;
      inside_all += hit;
      if (y >= 10) {
        ++total;
        inside += hit;
      }
    }
    out << "coverage: " << inside << "/" << total << " partially observed dates with true Y >= 10 inside the 95% interval";
    if (total > 0) out << " (" << fmt(static_cast<double>(inside) / total) << ")";
    out << "; all partially observed dates: " << inside_all << "/" << total_all << "\n";
  }
  return kOk;
}

// --- fit-mortality --------------------------------------------------------------

struct MortalityArgs {
  std::string events, population, geometry, offsets, nowcast, out;
  std::string window = "last-7-days";
  bool agesplit = false;
};

std::pair<Date, Date> parse_window(const std::string& w, Date first, Date last) {
  static const std::regex last_n(R"(last-(\d+)-days?)");
  std::smatch m;
  Date a, b;
  if (std::regex_match(w, m, last_n)) {
    const int n = std::stoi(m[1].str());
    if (n < 1) throw InputError("--window needs at least one day");
    b = last;
    a = last - (n - 1);
  } else {
    const auto colon = w.find(':');
    if (colon == std::string::npos) throw InputError("--window must be last-N-days or YYYY-MM-DD:YYYY-MM-DD");
    a = Date::parse(w.substr(0, colon));
    b = Date::parse(w.substr(colon + 1));
  }
  if (a < first || b > last || a > b) {
    throw InputError("--window " + w + " is outside the fitted range " + first.iso() + " .. " + last.iso());
  }
  return {a, b};
}

OffsetSeries series_from(const std::vector<NowcastResult>& results, const Eigen::VectorXd& values) {
  return OffsetSeries{results.front().t, values};
}

int cmd_fit_mortality(const MortalityArgs& a, std::ostream& out, std::ostream& err) {
  Manifest manifest("fit-mortality");
  const auto events = read_events(a.events);
  const auto pop = read_population(a.population);
  const auto geo = read_geometry(a.geometry);
  const auto offsets = read_offsets(a.offsets);
  for (const auto* p : {&a.events, &a.population, &a.geometry, &a.offsets}) manifest.input(*p);
  if (!a.nowcast.empty()) manifest.input(a.nowcast);
  manifest.flag("agesplit", a.agesplit ? "true" : "false");
  manifest.flag("window", a.window);

  const Date T = offsets.last() + 1;
  const CellTable cells = assemble_cells(events, pop, geo, offsets, offsets.first, T);
  manifest.data_range(cells.first.iso(), cells.last.iso());
  const auto [wa, wb] = parse_window(a.window, cells.first, cells.last);

  MortalitySpecs specs;
  specs.agesplit = a.agesplit;
  const MortalityFit fit = fit_mortality(cells, specs);
  for (const auto& w : fit.warnings) err << "warning: " << w << "\n";

  std::optional<BoundRefits> refits;
  if (!a.nowcast.empty()) {
    const auto results = parse_nowcast(a.nowcast);
    const OffsetSeries lower = series_from(results, bound_offsets(results, Bound::Lower));
    const OffsetSeries upper = series_from(results, bound_offsets(results, Bound::Upper));
    refits = refit_offset_bounds(cells, fit, lower, upper);
  }

  std::string districts = "district_id,expected_deaths,rate_per_100k,u0,u1";
  if (a.agesplit) districts += ",u0_80plus,u1_80plus";
  districts += "\n";
  std::vector<Eigen::VectorXd> u;
  for (const auto& b : fit.random_blocks) u.push_back(fit.random_effects(b));
  const auto map = expected_deaths_map(fit, wa, wb);
  for (std::size_t r = 0; r < map.size(); ++r) {
    districts += map[r].district_id + "," + fmt(map[r].expected_deaths) + "," + fmt(map[r].rate_per_100k);
    for (const auto& v : u) districts += "," + fmt(v(static_cast<Eigen::Index>(r)));
    districts += "\n";
  }

  const auto trend = time_trend_curve(fit);
  std::vector<TrendPoint> worst, best;
  if (refits) {
    worst = time_trend_curve(refits->worst);
    best = time_trend_curve(refits->best);
  }
  std::string trend_csv = "t,rate,lower,upper,rate_worst,rate_best\n";
  for (std::size_t i = 0; i < trend.size(); ++i) {
    trend_csv += trend[i].t.iso() + "," + fmt(trend[i].rate) + "," + fmt(trend[i].lower) + "," + fmt(trend[i].upper) + ",";
    if (refits) trend_csv += fmt(worst[i].rate) + "," + fmt(best[i].rate);
    else trend_csv += ",";
    trend_csv += "\n";
  }

  OutputDir dir(a.out, manifest);
  dir.write("mortality_fit.json", json::emit_mortality_fit(fit, {manifest.hash(), false}));
  dir.write("districts.csv", districts);
  dir.write("trend.csv", trend_csv);
  dir.finish("fit-mortality");
  out << "mortality fit on " << cells.cells.size() << " cells, " << cells.districts.size() << " districts; phi "
      << fmt(fit.fit.phi) << "; map window " << wa.iso() << " .. " << wb.iso() << "\n";
  return kOk;
}

// --- diagnose -------------------------------------------------------------------

struct DiagnoseArgs {
  std::string fit;
  std::string out;
};

int cmd_diagnose(const DiagnoseArgs& a, std::ostream& out, std::ostream&) {
  Manifest manifest("diagnose");
  const auto obs = json::parse_fit_observations(csv::read_whole_file(a.fit), a.fit);
  manifest.input(a.fit);
  const Eigen::VectorXd r = json::pearson_residuals(obs);
  const auto n = static_cast<std::size_t>(r.size());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return r(static_cast<Eigen::Index>(x)) < r(static_cast<Eigen::Index>(y));
  });
  // Plotting positions (i - a) / (n + 1 - 2a), a = 3/8 for n <= 10 else 1/2.
  const double off = n <= 10 ? 0.375 : 0.5;
  const boost::math::normal normal;
  std::string s = "index,theoretical_quantile,pearson_residual\n";
  for (std::size_t k = 0; k < n; ++k) {
    const double p = (static_cast<double>(k + 1) - off) / (static_cast<double>(n) + 1.0 - 2.0 * off);
    s += std::to_string(order[k]) + "," + fmt(boost::math::quantile(normal, p)) + "," +
         fmt(r(static_cast<Eigen::Index>(order[k]))) + "\n";
  }
  const fs::path target(a.out);
  const std::string dir_name = target.has_parent_path() ? target.parent_path().string() : ".";
  OutputDir dir(dir_name, manifest);
  dir.write(target.filename().string(), s);
  dir.finish("diagnose");
  out << "phi = " << obs.phi_text << "\n";
  return kOk;
}

// --- simulate -------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream&) {
  Manifest manifest("simulate");
  const std::string text = csv::read_whole_file(a.config);
  const SimConfig config = json::parse_config(text, a.config);
  manifest.input(a.config);
  manifest.config_hash(sha256_hex(text));
  manifest.seed(config.seed);
  manifest.data_range(config.t0.iso(), config.T.iso());

  const SimOutput sim = simulate(config);
  const fs::path snap_dir = fs::path(a.out) / "snapshots";
  if (fs::is_directory(snap_dir)) {
    static const std::regex stale(R"(snapshot_\d{4}-\d{2}-\d{2}\.csv)");
    for (const auto& e : fs::directory_iterator(snap_dir)) {
      if (std::regex_match(e.path().filename().string(), stale)) fs::remove(e.path());
    }
  }
  OutputDir dir(a.out, manifest);
  for (const auto& snap : sim.snapshots) {
    dir.write("snapshots/snapshot_" + snap.download_date.iso() + ".csv", emit_snapshot(snap));
  }
  dir.write("truth.json", json::emit_truth(sim.truth));
  dir.write("population.csv", emit_population(config.population()));
  dir.write("geometry.csv", emit_geometry(config.geometry()));
  dir.finish("simulate");
  out << "simulated " << sim.truth.events.size() << " deaths in " << config.districts.size() << " districts over "
      << (config.T - config.t0) << " days; " << sim.snapshots.size() << " snapshots\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nowcasting of reported deaths and regional mortality modeling", "nowcast"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print tool and file format versions");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build the reporting triangle from daily snapshot files");
  c_ingest->add_option("snapshot_dir", ingest.snapshot_dir, "Directory of snapshot CSVs")->required();
  c_ingest->add_option("--out", ingest.out, "Output directory")->required();
  c_ingest->add_option("--dmax", ingest.d_max, "Maximum reporting delay in days")->capture_default_str();
  c_ingest->add_option("--t0", ingest.t0, "First registration date kept (default: first snapshot)");

  NowcastArgs nc;
  int nc_dmax = 0;
  auto* c_nowcast = app.add_subcommand("nowcast", "Fit the delay model and nowcast recent deaths");
  c_nowcast->add_option("triangle", nc.triangle, "Triangle CSV from ingest")->required();
  c_nowcast->add_option("--out", nc.out, "Output directory")->required();
  auto* o_dmax = c_nowcast->add_option("--dmax", nc_dmax, "Fold the triangle to this maximum delay");
  c_nowcast->add_option("--nboot", nc.n_boot, "Bootstrap draws (0: point nowcasts only)")->capture_default_str();
  c_nowcast->add_option("--seed", nc.seed, "Bootstrap seed")->capture_default_str();
  c_nowcast->add_option("--truth", nc.truth, "truth.json from simulate; prints interval coverage");

  MortalityArgs mort;
  auto* c_mort = app.add_subcommand("fit-mortality", "Fit the regional mortality model");
  c_mort->add_option("--events", mort.events, "Event log CSV from ingest")->required();
  c_mort->add_option("--population", mort.population, "Population CSV")->required();
  c_mort->add_option("--geometry", mort.geometry, "District centroid CSV")->required();
  c_mort->add_option("--offsets", mort.offsets, "log F offsets CSV from nowcast")->required();
  c_mort->add_option("--nowcast", mort.nowcast, "Nowcast CSV with intervals for best/worst-case refits");
  c_mort->add_flag("--agesplit", mort.agesplit, "Separate district effects for ages below and above 80");
  c_mort->add_option("--window", mort.window, "Map window: last-N-days or YYYY-MM-DD:YYYY-MM-DD")
      ->capture_default_str();
  c_mort->add_option("--out", mort.out, "Output directory")->required();

  DiagnoseArgs diag;
  auto* c_diag = app.add_subcommand("diagnose", "Pearson residual QQ table of a fit");
  c_diag->add_option("fit", diag.fit, "Fit JSON")->required();
  c_diag->add_option("--out", diag.out, "Residual CSV path")->required();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate synthetic snapshots with known truth");
  c_sim->add_option("config", sim.config, "Simulation config JSON")->required();
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  std::vector<std::string> argv_store = {"nowcast"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  if (version) {
    out << "nowcast " << kToolVersion << " (file formats: version " << kFormatVersion << ")\n";
    return kOk;
  }
  try {
    if (*c_ingest) return cmd_ingest(ingest, out, err);
    if (*c_nowcast) {
      if (*o_dmax) nc.d_max = nc_dmax;
      return cmd_nowcast(nc, out, err);
    }
    if (*c_mort) return cmd_fit_mortality(mort, out, err);
    if (*c_diag) return cmd_diagnose(diag, out, err);
    if (*c_sim) return cmd_simulate(sim, out, err);
    out << app.help();
    return kInputError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace nowcast::cli
