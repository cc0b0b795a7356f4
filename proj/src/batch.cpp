#include "feeder_envelope/batch.hpp"

#include <cstdlib>

#include <omp.h>

namespace feeder_envelope {

namespace {

template <class Item, class Fn>
Item guarded(Fn&& fn) {
  Item item;
  try {
    item.result = fn();
  } catch (const std::exception& e) {
    item.error = e.what();
    item.exception = std::current_exception();
  }
  return item;
}

}  // namespace

int batch_threads() {
  const int max_threads = omp_get_max_threads();
  if (const char* env = std::getenv("FEEDER_ENVELOPE_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) return std::min(requested, max_threads);
  }
  return max_threads;
}

std::vector<LoadFlowState> solve_loadflow_batch(const FeederModel& model, std::span<const InjectionProfile> profiles,
                                                const LoadFlowOptions& options) {
  std::vector<LoadFlowState> out(profiles.size());
  const auto count = static_cast<std::ptrdiff_t>(profiles.size());
#pragma omp parallel for schedule(dynamic) num_threads(batch_threads())
  for (std::ptrdiff_t i = 0; i < count; ++i) out[i] = solve_loadflow(model, profiles[i], options);
  return out;
}

std::vector<LoadFlowState> solve_loadflow_batch_serial(const FeederModel& model,
                                                       std::span<const InjectionProfile> profiles,
                                                       const LoadFlowOptions& options) {
  std::vector<LoadFlowState> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) out.push_back(solve_loadflow(model, p, options));
  return out;
}

std::vector<BatchTightenItem> tighten_batch(const FeederModel& model, const SensitivityMatrices& mats,
                                            std::span<const Scenario> scenarios, const TighteningSettings& settings) {
  std::vector<BatchTightenItem> out(scenarios.size());
  const auto count = static_cast<std::ptrdiff_t>(scenarios.size());
#pragma omp parallel for schedule(dynamic) num_threads(batch_threads())
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    out[i] = guarded<BatchTightenItem>([&] { return tighten(model, mats, scenarios[i], settings); });
  }
  return out;
}

std::vector<BatchTightenItem> tighten_batch_serial(const FeederModel& model, const SensitivityMatrices& mats,
                                                   std::span<const Scenario> scenarios,
                                                   const TighteningSettings& settings) {
  std::vector<BatchTightenItem> out;
  out.reserve(scenarios.size());
  for (const auto& sc : scenarios) {
    out.push_back(guarded<BatchTightenItem>([&] { return tighten(model, mats, sc, settings); }));
  }
  return out;
}

std::vector<BatchScheduleItem> tighten_multiperiod_batch(const FeederModel& model, const SensitivityMatrices& mats,
                                                         std::span<const Scenario> scenarios,
                                                         const TighteningSettings& settings, Linearization mode) {
  std::vector<BatchScheduleItem> out(scenarios.size());
  const auto count = static_cast<std::ptrdiff_t>(scenarios.size());
#pragma omp parallel for schedule(dynamic) num_threads(batch_threads())
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    out[i] = guarded<BatchScheduleItem>(
        [&] { return tighten_multiperiod(model, mats, scenarios[i], settings, mode); });
  }
  return out;
}

}  // namespace feeder_envelope
