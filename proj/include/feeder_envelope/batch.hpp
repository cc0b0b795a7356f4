#pragma once

#include <exception>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feeder_envelope/loadflow.hpp"
#include "feeder_envelope/tightening.hpp"

namespace feeder_envelope {

/// Thread count for batch kernels: FEEDER_ENVELOPE_THREADS if set and
/// positive, capped at the OpenMP maximum; otherwise the OpenMP maximum.
int batch_threads();

/// Independent load flows, one per profile. The OpenMP version and the serial
/// reference produce bitwise identical states.
std::vector<LoadFlowState> solve_loadflow_batch(const FeederModel& model, std::span<const InjectionProfile> profiles,
                                                const LoadFlowOptions& options = {});
std::vector<LoadFlowState> solve_loadflow_batch_serial(const FeederModel& model,
                                                       std::span<const InjectionProfile> profiles,
                                                       const LoadFlowOptions& options = {});

/// Outcome of one scenario in a batch; `error` and `exception` are set
/// instead of `result` when the run threw.
struct BatchTightenItem {
  std::optional<TightenResult> result;
  std::string error;
  std::exception_ptr exception;
};

std::vector<BatchTightenItem> tighten_batch(const FeederModel& model, const SensitivityMatrices& mats,
                                            std::span<const Scenario> scenarios, const TighteningSettings& settings = {});
std::vector<BatchTightenItem> tighten_batch_serial(const FeederModel& model, const SensitivityMatrices& mats,
                                                   std::span<const Scenario> scenarios,
                                                   const TighteningSettings& settings = {});

/// Same for multi-period runs.
struct BatchScheduleItem {
  std::optional<MultiPeriodResult> result;
  std::string error;
  std::exception_ptr exception;
};

std::vector<BatchScheduleItem> tighten_multiperiod_batch(const FeederModel& model, const SensitivityMatrices& mats,
                                                         std::span<const Scenario> scenarios,
                                                         const TighteningSettings& settings = {},
                                                         Linearization mode = Linearization::per_step);

}  // namespace feeder_envelope
