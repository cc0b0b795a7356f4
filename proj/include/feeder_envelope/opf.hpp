#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "feeder_envelope/bounds.hpp"
#include "feeder_envelope/feeder.hpp"
#include "feeder_envelope/qp.hpp"
#include "feeder_envelope/sensitivity.hpp"

namespace feeder_envelope {

/// A dispatchable unit at one node. `c1` multiplies p^2, `c2` multiplies p.
struct Generator {
  int node = 0;  // node index in the ordered feeder
  double pmin = 0.0;
  double pmax = 0.0;
  double qmin = 0.0;
  double qmax = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
};

enum class Objective {
  cost,       // sum c1 p^2 + c2 p
  hosting,    // maximise sum p
  flex_up,    // maximise sum p
  flex_down,  // minimise sum p
};

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

/// Storage unit; positive p_b discharges into the network.
struct BatterySpec {
  int node = 0;  // node index in the ordered feeder
  double p_rate = 0.0;
  double b_max = 0.0;
  double b_min = 0.0;
  double b0 = 0.0;
  std::optional<double> b_final;  // pins B(T) when set
};

struct Horizon {
  int steps = 1;
  double dt_h = 1.0;
  std::vector<double> load_series;  // per-step multiplier on the base loads
};

/// Forecast net demand (positive = consumption) per node index 1..n, plus
/// the controllable resources and what to optimise.
struct Scenario {
  Eigen::VectorXd P_L;
  Eigen::VectorXd Q_L;
  std::vector<Generator> generators;
  Objective objective = Objective::cost;
  std::optional<Horizon> horizon;
  std::vector<BatterySpec> batteries;

  /// Throws std::invalid_argument when a field is inconsistent with the feeder.
  void validate(const FeederModel& model) const;

  /// Net injections with every generator at zero output.
  InjectionProfile forecast_injection() const { return {-P_L, -Q_L}; }

  /// Loads of step t under the horizon's load series.
  Scenario at_step(int t) const;
};

/// Raised when the robust program has no feasible point.
class OpfInfeasible : public std::runtime_error {
 public:
  OpfInfeasible(const std::string& what, Eigen::VectorXd certificate, std::vector<std::string> rows)
      : std::runtime_error(what), certificate_(std::move(certificate)), rows_(std::move(rows)) {}
  const Eigen::VectorXd& certificate() const { return certificate_; }
  /// Names of the constraint rows carrying the certificate's largest weights.
  const std::vector<std::string>& rows() const { return rows_; }

 private:
  Eigen::VectorXd certificate_;
  std::vector<std::string> rows_;
};

/// Raised when the QP solver stops on its iteration limit.
class OpfSolverLimit : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Column layout of one period inside a program: [p_g | q_g | l+ | p_b].
struct StepLayout {
  int offset = 0;
  int n = 0;
  int gens = 0;
  int batteries = 0;
  std::vector<int> gen_nodes;
  std::vector<int> battery_nodes;
  CurrentEnvelope envelope;
  OperatingPoint op;
  Eigen::VectorXd P_L;
  Eigen::VectorXd Q_L;

  int pg(int g) const { return offset + g; }
  int qg(int g) const { return offset + gens + g; }
  int lplus(int k) const { return offset + 2 * gens + k; }
  int pb(int b) const { return offset + 2 * gens + n + b; }
  int width() const { return 2 * gens + n + batteries; }
};

struct OpfProgram {
  QpProblem qp;
  std::vector<StepLayout> steps;
  std::vector<BatterySpec> batteries;
  double dt_h = 1.0;
};

/// Robust single-period solution, indexed by node index 1..n (entry k-1).
struct RobustOpfSolution {
  Eigen::VectorXd p_g, q_g;  // per generator
  Eigen::VectorXd p, q;      // net nodal injections
  Eigen::VectorXd P_plus, P_minus, Q_plus, Q_minus, V_plus, V_minus;
  Eigen::VectorXd l_minus;
  Eigen::VectorXd l_plus;      // max(l0, 2 l- - l0)
  Eigen::VectorXd l_plus_var;  // epigraph variable as returned by the solver
  double objective = 0.0;
  QpStatus status = QpStatus::optimal;
  std::vector<int> node_ids;      // external id per entry
  std::vector<int> gen_node_ids;  // external id per generator

  InjectionProfile injection() const { return {p, q}; }
  Eigen::VectorXd voltage_midpoint() const { return 0.5 * (V_plus + V_minus); }
};

struct DispatchSchedule {
  int steps = 0;
  double dt_h = 1.0;
  std::vector<RobustOpfSolution> periods;
  Eigen::MatrixXd P_b;  // steps x batteries
  Eigen::MatrixXd soc;  // (steps + 1) x batteries, row 0 is B0
  double objective = 0.0;
  QpStatus status = QpStatus::optimal;
  std::vector<int> battery_node_ids;
};

/// Single-period robust program around one operating point.
OpfProgram build_p3(const SensitivityMatrices& mats, const OperatingPoint& op, const Scenario& scenario,
                    const FeederModel& model);

/// Converts an optimal QP solution into envelopes; throws OpfInfeasible or
/// OpfSolverLimit for non-optimal statuses.
RobustOpfSolution extract_solution(const OpfProgram& program, const QpSolution& sol, const FeederModel& model);

/// Multi-period program: one robust block per step, coupled through battery
/// state of charge. `ops` and `scenarios` carry one entry per step.
OpfProgram build_p4(const SensitivityMatrices& mats, const std::vector<OperatingPoint>& ops,
                    const std::vector<Scenario>& scenarios, const std::vector<BatterySpec>& batteries,
                    int steps, double dt_h, const FeederModel& model);

DispatchSchedule extract_schedule(const OpfProgram& program, const QpSolution& sol, const FeederModel& model);

/// build + solve + extract.
RobustOpfSolution solve_p3(const SensitivityMatrices& mats, const OperatingPoint& op, const Scenario& scenario,
                           const FeederModel& model, const QpSettings& settings = {});

}  // namespace feeder_envelope
