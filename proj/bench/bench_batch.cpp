// Serial reference vs OpenMP batch kernels on the bundled feeder.

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "feeder_envelope/batch.hpp"
#include "feeder_envelope/io.hpp"
#include "feeder_envelope/sensitivity.hpp"

using namespace feeder_envelope;

namespace {

const std::string kData = FE_DATA_DIR;

const FeederModel& model() {
  static const FeederModel m = load_ordered_feeder_file(kData + "/feeder13.json");
  return m;
}

std::vector<InjectionProfile> profiles(int count) {
  const Scenario base = load_scenario_file(kData + "/scenarios/nominal_cost.json", model());
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> f(0.2, 1.2);
  std::vector<InjectionProfile> out;
  for (int i = 0; i < count; ++i) {
    InjectionProfile inj = base.forecast_injection();
    for (int k = 0; k < inj.p.size(); ++k) {
      const double s = f(rng);
      inj.p(k) *= s;
      inj.q(k) *= s;
    }
    out.push_back(inj);
  }
  return out;
}

std::vector<Scenario> scenarios(int count) {
  const Scenario base = load_scenario_file(kData + "/scenarios/hosting_leaves.json", model());
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> f(0.4, 1.1);
  std::vector<Scenario> out(count, base);
  for (auto& sc : out) {
    const double s = f(rng);
    sc.P_L *= s;
    sc.Q_L *= s;
  }
  return out;
}

template <bool Parallel>
void loadflow(benchmark::State& state) {
  const auto ps = profiles(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto r = Parallel ? solve_loadflow_batch(model(), ps) : solve_loadflow_batch_serial(model(), ps);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = Parallel ? batch_threads() : 1;
}

template <bool Parallel>
void tightening(benchmark::State& state) {
  const auto scs = scenarios(static_cast<int>(state.range(0)));
  const SensitivityMatrices mats = build_sensitivities(model());
  for (auto _ : state) {
    auto r = Parallel ? tighten_batch(model(), mats, scs) : tighten_batch_serial(model(), mats, scs);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = Parallel ? batch_threads() : 1;
}

}  // namespace

BENCHMARK(loadflow<false>)->Name("loadflow/serial")->Arg(64)->Arg(1024);
BENCHMARK(loadflow<true>)->Name("loadflow/openmp")->Arg(64)->Arg(1024);
BENCHMARK(tightening<false>)->Name("tighten/serial")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(tightening<true>)->Name("tighten/openmp")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
