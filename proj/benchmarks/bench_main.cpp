#include <map>

#include <benchmark/benchmark.h>

#include "nowcast/delay.hpp"
#include "nowcast/mortality.hpp"
#include "nowcast/simgen.hpp"
#include "nowcast/triangle.hpp"

namespace {

using namespace nowcast;

struct Fixture {
  SimConfig config;
  SimOutput out;
  ReportingTriangle observed;
};

const Fixture& fixture(int districts) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(districts);
  if (it == cache.end()) {
    GridOptions go;
    go.districts = districts;
    go.days = 50;
    go.seed = 42;
    Fixture f;
    f.config = grid_config(go);
    f.out = simulate(f.config);
    f.observed = f.out.truth.observed();
    it = cache.emplace(districts, std::move(f)).first;
  }
  return it->second;
}

void BM_BuildTriangle(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto tri = build_triangle(f.out.truth.events, f.config.t0, f.config.T, f.config.d_max);
    benchmark::DoNotOptimize(tri);
  }
  state.counters["events"] = static_cast<double>(f.out.truth.events.size());
}
BENCHMARK(BM_BuildTriangle)->Arg(50)->Arg(412)->Unit(benchmark::kMillisecond);

void BM_FitDelay(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto fit = fit_delay(f.observed);
    benchmark::DoNotOptimize(fit);
  }
}
BENCHMARK(BM_FitDelay)->Arg(50)->Arg(412)->Unit(benchmark::kMillisecond);

void BM_Bootstrap(benchmark::State& state) {
  const auto& f = fixture(412);
  const auto fit = fit_delay(f.observed);
  for (auto _ : state) {
    auto res = bootstrap_nowcast(f.observed, fit, static_cast<int>(state.range(0)), 7);
    benchmark::DoNotOptimize(res);
  }
}
BENCHMARK(BM_Bootstrap)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_FitMortality(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  const auto fit = fit_delay(f.observed);
  std::vector<Date> dates;
  for (Date t = f.config.t0; t < f.config.T; t = t + 1) dates.push_back(t);
  const OffsetSeries offsets{f.config.t0, offset_log_F(fit, dates, f.config.T)};
  const auto cells = assemble_cells(f.out.truth.events, f.config.population(), f.config.geometry(), offsets,
                                    f.config.t0, f.config.T, f.config.recent_days);
  for (auto _ : state) {
    auto m = fit_mortality(cells);
    benchmark::DoNotOptimize(m);
  }
  state.counters["cells"] = static_cast<double>(cells.cells.size());
}
BENCHMARK(BM_FitMortality)->Arg(50)->Arg(412)->Unit(benchmark::kSecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
