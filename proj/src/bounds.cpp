#include "feeder_envelope/bounds.hpp"

namespace feeder_envelope {

OperatingPoint operating_point(const LoadFlowState& state, const InjectionProfile& inj, double v0) {
  if (!state.converged()) throw LoadFlowError("operating point requires a converged load flow", state);
  OperatingPoint op;
  op.P0 = state.P;
  op.Q0 = state.Q;
  op.V0 = state.V;
  op.l0 = state.l;
  op.injection = inj;
  op.v0 = v0;
  return op;
}

OperatingPoint operating_point(const FeederModel& model, const InjectionProfile& inj,
                               const LoadFlowOptions& options) {
  LoadFlowState state = solve_loadflow(model, inj, options);
  if (state.status == LoadFlowStatus::voltage_collapse) {
    throw LoadFlowError("load flow collapsed at node " + std::to_string(model.node_ids[state.collapse_node]),
                        state);
  }
  if (!state.converged()) {
    throw LoadFlowError("load flow did not converge in " + std::to_string(state.iterations) + " iterations",
                        state);
  }
  return operating_point(state, inj, model.v0);
}

JacobianBlocks jacobian(const OperatingPoint& op) {
  if ((op.V0.array() <= 0.0).any()) throw std::invalid_argument("jacobian needs positive voltages");
  JacobianBlocks j;
  j.jP = 2.0 * op.P0.array() / op.V0.array();
  j.jQ = 2.0 * op.Q0.array() / op.V0.array();
  j.jV = -(op.P0.array().square() + op.Q0.array().square()) / op.V0.array().square();
  return j;
}

std::array<double, 3> hessian_eigs(const OperatingPoint& op, int branch) {
  const double v = op.V0(branch);
  if (!(v > 0.0)) throw std::invalid_argument("hessian_eigs needs a positive voltage");
  const double s2 = op.P0(branch) * op.P0(branch) + op.Q0(branch) * op.Q0(branch);
  // 2/v <= 2 (s2 + v^2) / v^3 always, so this order is ascending.
  return {0.0, 2.0 / v, 2.0 * (s2 + v * v) / (v * v * v)};
}

Eigen::Matrix3d hessian(const OperatingPoint& op, int branch) {
  const double v = op.V0(branch), P = op.P0(branch), Q = op.Q0(branch);
  Eigen::Matrix3d h;
  h << 2.0 / v, 0.0, -2.0 * P / (v * v),
       0.0, 2.0 / v, -2.0 * Q / (v * v),
       -2.0 * P / (v * v), -2.0 * Q / (v * v), 2.0 * (P * P + Q * Q) / (v * v * v);
  return h;
}

CurrentEnvelope build_envelope(const OperatingPoint& op, const SensitivityMatrices& mats) {
  const JacobianBlocks j = jacobian(op);
  const int n = mats.size();
  CurrentEnvelope env;
  env.l0 = op.l0;
  // Linearised deviations, each affine in (p, q):
  //   P_lin - P0 = C p - (D_R l0 + P0)
  //   Q_lin - Q0 = C q - (D_X l0 + Q0)
  //   V_lin - V0 = M_p p + M_q q + (v0 1 - H l0 - V0)
  env.Lp = j.jP.asDiagonal() * mats.C + j.jV.asDiagonal() * mats.M_p;
  env.Lq = j.jQ.asDiagonal() * mats.C + j.jV.asDiagonal() * mats.M_q;
  const Eigen::VectorXd offP = -(mats.D_R * op.l0 + op.P0);
  const Eigen::VectorXd offQ = -(mats.D_X * op.l0 + op.Q0);
  const Eigen::VectorXd offV = Eigen::VectorXd::Constant(n, op.v0) - mats.H * op.l0 - op.V0;
  env.c0 = op.l0 + j.jP.cwiseProduct(offP) + j.jQ.cwiseProduct(offQ) + j.jV.cwiseProduct(offV);
  return env;
}

Eigen::VectorXd CurrentEnvelope::lower(const InjectionProfile& inj) const {
  return c0 + Lp * inj.p + Lq * inj.q;
}

Eigen::VectorXd CurrentEnvelope::upper_from_lower(const Eigen::VectorXd& lo) const {
  return l0.cwiseMax(2.0 * lo - l0);
}

Eigen::VectorXd CurrentEnvelope::upper(const InjectionProfile& inj) const { return upper_from_lower(lower(inj)); }

Eigen::VectorXd linear_lower_bound(const OperatingPoint& op, const LoadFlowState& exact) {
  const JacobianBlocks j = jacobian(op);
  return op.l0 + j.jP.cwiseProduct(exact.P - op.P0) + j.jQ.cwiseProduct(exact.Q - op.Q0) +
         j.jV.cwiseProduct(exact.V - op.V0);
}

}  // namespace feeder_envelope
