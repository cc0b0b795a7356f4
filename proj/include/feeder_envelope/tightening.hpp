#pragma once

#include <string>
#include <vector>

#include "feeder_envelope/loadflow.hpp"
#include "feeder_envelope/opf.hpp"

namespace feeder_envelope {

struct TighteningSettings {
  double eps = 1e-5;      // stop once ||V* - V0||_inf <= eps (pu^2)
  int max_outer = 20;
  double slack = 1e-6;    // admissibility slack used to rank iterates
  int max_backtracks = 8; // halvings toward the previous expansion point when a later iterate is infeasible
  LoadFlowOptions loadflow;
  QpSettings qp;
};

enum class Termination {
  converged,         // error <= eps
  max_outer,         // iteration budget used up
  infeasible,        // robust program infeasible at a later iterate
  solver_limit,      // QP iteration limit at a later iterate
  oracle_divergence  // load flow failed at a dispatched point
};

std::string to_string(Termination t);

struct TraceRecord {
  int iteration = 0;
  double objective = 0.0;
  double error = 0.0;   // ||V* - V0||_inf, V* the envelope midpoint
  int violations = 0;   // oracle violations of this iterate's dispatch
  double total_injection = 0.0;  // sum of generator real output over all periods
  double max_l0 = 0.0;  // largest squared current at the expansion point
  int backtracks = 0;   // expansion-point halvings needed to restore feasibility
};

struct TighteningTrace {
  std::vector<TraceRecord> records;
  Termination termination = Termination::max_outer;
  bool converged = false;
  int iterations = 0;
};

/// Result of a tightening run. `solution` is the admissible iterate with the
/// best objective; if no iterate was admissible it is the last one and
/// `admissible` is false.
template <class Solution>
struct TightenOutcome {
  Solution solution;
  TighteningTrace trace;
  std::vector<Violation> violations;  // oracle validation of `solution`
  std::vector<LoadFlowState> validation;  // one exact state per period
  bool admissible = false;
  int selected_iteration = 0;
};

using TightenResult = TightenOutcome<RobustOpfSolution>;
using MultiPeriodResult = TightenOutcome<DispatchSchedule>;

/// Alternates robust OPF solves with exact load flows, moving the expansion
/// point to each new dispatch, until the optimiser's voltages agree with the
/// load flow. max_outer = 1 gives the one-shot robust solve.
TightenResult tighten(const FeederModel& model, const SensitivityMatrices& mats, const Scenario& scenario,
                      const TighteningSettings& settings = {});

enum class Linearization {
  per_step,  // each period expands around its own forecast / dispatch
  shared     // every period uses the first period's expansion point
};

MultiPeriodResult tighten_multiperiod(const FeederModel& model, const SensitivityMatrices& mats,
                                      const Scenario& scenario, const TighteningSettings& settings = {},
                                      Linearization mode = Linearization::per_step);

struct FlexibilityEnvelope {
  std::vector<int> node_ids;
  Eigen::VectorXd up;    // per flexible unit, maximum aggregate injection run
  Eigen::VectorXd down;  // per flexible unit, maximum aggregate consumption run
  double total_up = 0.0;
  double total_down = 0.0;
  TightenResult up_run;
  TightenResult down_run;
};

/// Two tightened solves: maximise and minimise total injection of the
/// scenario's units, each validated by the exact load flow.
FlexibilityEnvelope flexibility_envelope(const FeederModel& model, const SensitivityMatrices& mats,
                                         const Scenario& scenario, const TighteningSettings& settings = {});

}  // namespace feeder_envelope
