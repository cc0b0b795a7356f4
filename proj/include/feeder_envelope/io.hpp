#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "feeder_envelope/loadflow.hpp"
#include "feeder_envelope/opf.hpp"
#include "feeder_envelope/tightening.hpp"

namespace feeder_envelope {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a scenario document against an ordered feeder; node references are
/// external ids and are translated to node indices.
Scenario load_scenario(std::string_view source, const FeederModel& model);
Scenario load_scenario_file(const std::string& path, const FeederModel& model);

/// Reads {"dispatch": [{node, p_pu, q_pu}]} as produced by `solve`, adding the
/// set-points to the scenario's forecast injections.
InjectionProfile load_dispatch(std::string_view source, const Scenario& scenario, const FeederModel& model);

using ordered_json = nlohmann::ordered_json;

ordered_json violations_to_json(const std::vector<Violation>& violations);
ordered_json loadflow_to_json(const FeederModel& model, const LoadFlowState& state);
ordered_json solution_to_json(const FeederModel& model, const RobustOpfSolution& sol);
ordered_json schedule_to_json(const FeederModel& model, const DispatchSchedule& sched);
ordered_json trace_record_to_json(const TraceRecord& rec);

/// One JSON object per line, one line per outer iteration.
std::string trace_to_jsonl(const TighteningTrace& trace);

/// node,V_minus,V_exact,V_plus rows in ascending node id.
std::string voltage_csv(const FeederModel& model, const RobustOpfSolution& sol, const LoadFlowState& exact);

/// step,load_p,battery_discharge,generation rows.
std::string schedule_csv(const DispatchSchedule& sched, const Scenario& scenario);

/// Writes `text` to `path`, throwing std::runtime_error on failure.
void write_file(const std::string& path, const std::string& text);

}  // namespace feeder_envelope
