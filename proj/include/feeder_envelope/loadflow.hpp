#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "feeder_envelope/feeder.hpp"

namespace feeder_envelope {

/// Net nodal injections for nodes 1..n (entry k-1 is node k). Positive means
/// power injected into the network, so loads enter with a negative sign.
struct InjectionProfile {
  Eigen::VectorXd p;
  Eigen::VectorXd q;

  static InjectionProfile zero(int n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)}; }
};

enum class LoadFlowStatus { converged, max_iterations, voltage_collapse };

struct LoadFlowState {
  Eigen::VectorXd V;  // squared voltage per node
  Eigen::VectorXd P;  // flow leaving node k toward its parent
  Eigen::VectorXd Q;
  Eigen::VectorXd l;  // squared current per branch
  LoadFlowStatus status = LoadFlowStatus::max_iterations;
  int iterations = 0;
  double residual = 0.0;
  int collapse_node = -1;  // node index that first fell below the collapse floor

  bool converged() const { return status == LoadFlowStatus::converged; }
};

struct LoadFlowOptions {
  double tol = 1e-10;
  int max_iter = 200;
  double collapse_floor = 0.25;  // pu^2
};

LoadFlowState solve_loadflow(const FeederModel& model, const InjectionProfile& inj,
                             const LoadFlowOptions& options = {});

/// Absolute violations of the four branch-flow equations.
struct ResidualReport {
  double voltage = 0.0;   // v_j = v_i + 2 r P_j + 2 x Q_j - |z|^2 l
  double real = 0.0;      // P_i = p_i + sum_children (P_j - r l)
  double reactive = 0.0;  // Q_i = q_i + sum_children (Q_j - x l)
  double current = 0.0;   // l V_j = P_j^2 + Q_j^2
  double max() const;
};

ResidualReport residuals(const FeederModel& model, const LoadFlowState& state, const InjectionProfile& inj);

enum class Quantity { voltage_low, voltage_high, real_flow_low, real_flow_high, reactive_flow_low,
                      reactive_flow_high, current_high };

std::string to_string(Quantity q);

struct Violation {
  Quantity quantity;
  int node_id = 0;   // external id of the node (or of the branch's child node)
  double amount = 0.0;  // positive distance beyond the limit
  int step = 0;         // period index in multi-period runs
};

/// Lists every voltage, flow and current limit exceeded by more than `slack`.
std::vector<Violation> check_admissible(const FeederModel& model, const LoadFlowState& state, double slack);

/// Real power drawn from the substation: minus the net upward flow into node 0.
double substation_inflow(const FeederModel& model, const LoadFlowState& state);

}  // namespace feeder_envelope
