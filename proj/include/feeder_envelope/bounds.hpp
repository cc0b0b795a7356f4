#pragma once

#include <array>

#include <Eigen/Dense>

#include "feeder_envelope/loadflow.hpp"
#include "feeder_envelope/sensitivity.hpp"

namespace feeder_envelope {

/// Raised when the exact load flow cannot provide an expansion point.
class LoadFlowError : public std::runtime_error {
 public:
  LoadFlowError(const std::string& what, LoadFlowState state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const LoadFlowState& state() const { return state_; }

 private:
  LoadFlowState state_;
};

/// Taylor expansion point of the squared-current term: a converged load flow
/// together with the injections that produced it.
struct OperatingPoint {
  Eigen::VectorXd P0, Q0, V0, l0;
  InjectionProfile injection;
  double v0 = 1.0;
};

OperatingPoint operating_point(const FeederModel& model, const InjectionProfile& inj,
                               const LoadFlowOptions& options = {});
OperatingPoint operating_point(const LoadFlowState& state, const InjectionProfile& inj, double v0);

/// Per-branch gradient of l = (P^2 + Q^2) / v at the operating point.
struct JacobianBlocks {
  Eigen::VectorXd jP;  // 2 P0 / v0
  Eigen::VectorXd jQ;  // 2 Q0 / v0
  Eigen::VectorXd jV;  // -(P0^2 + Q0^2) / v0^2
};

JacobianBlocks jacobian(const OperatingPoint& op);

/// Closed-form spectrum of the 3x3 Hessian of l on one branch, ascending.
std::array<double, 3> hessian_eigs(const OperatingPoint& op, int branch);

/// The 3x3 Hessian itself, for numerical cross-checks.
Eigen::Matrix3d hessian(const OperatingPoint& op, int branch);

/// Affine current bounds in the injections (p, q):
///   lo(p, q) = c0 + Lp p + Lq q
///   hi(p, q) = max(l0, 2 lo(p, q) - l0)   (realised as an epigraph in the optimiser)
/// Deviations from the operating point use the flow and voltage predicted by
/// the linear model with losses frozen at l0.
struct CurrentEnvelope {
  Eigen::VectorXd c0;
  Eigen::MatrixXd Lp;
  Eigen::MatrixXd Lq;
  Eigen::VectorXd l0;

  Eigen::VectorXd lower(const InjectionProfile& inj) const;
  Eigen::VectorXd upper(const InjectionProfile& inj) const;
  /// Upper bound for a given lower-bound value: max(l0, 2 lo - l0).
  Eigen::VectorXd upper_from_lower(const Eigen::VectorXd& lo) const;
};

CurrentEnvelope build_envelope(const OperatingPoint& op, const SensitivityMatrices& mats);

/// First-order lower bound evaluated on an exact state: l0 + J (x - x0).
Eigen::VectorXd linear_lower_bound(const OperatingPoint& op, const LoadFlowState& exact);

}  // namespace feeder_envelope
