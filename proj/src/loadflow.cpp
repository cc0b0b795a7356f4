#include "feeder_envelope/loadflow.hpp"

#include <algorithm>
#include <cmath>

namespace feeder_envelope {

LoadFlowState solve_loadflow(const FeederModel& model, const InjectionProfile& inj,
                             const LoadFlowOptions& options) {
  if (!model.ordered) throw FeederError("solve_loadflow requires an ordered feeder");
  if (!(options.tol > 0.0) || options.max_iter < 1) throw std::invalid_argument("load flow needs tol > 0 and max_iter >= 1");
  const int n = model.size();
  if (inj.p.size() != n || inj.q.size() != n) throw std::invalid_argument("injection profile has wrong length");

  LoadFlowState s;
  s.V = Eigen::VectorXd::Constant(n, model.v0);
  s.P = Eigen::VectorXd::Zero(n);
  s.Q = Eigen::VectorXd::Zero(n);
  s.l = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd accP(n), accQ(n);
  // After the tolerance is met a few more sweeps settle l V = P^2 + Q^2 to rounding.
  int extra = 0;
  const double settled = 1e-15 * std::max(1.0, model.v0);

  for (int it = 1; it <= options.max_iter; ++it) {
    s.iterations = it;
    // Backward sweep: leaves to root, losses from the latest voltages.
    accP = inj.p;
    accQ = inj.q;
    for (int k = n; k >= 1; --k) {
      const Branch& b = model.branches[k - 1];
      const int i = k - 1;
      s.P(i) = accP(i);
      s.Q(i) = accQ(i);
      s.l(i) = (s.P(i) * s.P(i) + s.Q(i) * s.Q(i)) / s.V(i);
      if (b.from > 0) {
        accP(b.from - 1) += s.P(i) - b.r * s.l(i);
        accQ(b.from - 1) += s.Q(i) - b.x * s.l(i);
      }
    }
    // Forward sweep: substation to leaves.
    double change = 0.0;
    for (int k = 1; k <= n; ++k) {
      const Branch& b = model.branches[k - 1];
      const int i = k - 1;
      const double up = b.from == 0 ? model.v0 : s.V(b.from - 1);
      const double v = up + 2.0 * b.r * s.P(i) + 2.0 * b.x * s.Q(i) - b.z2() * s.l(i);
      if (!(v >= options.collapse_floor)) {
        s.status = LoadFlowStatus::voltage_collapse;
        s.collapse_node = k;
        s.residual = std::numeric_limits<double>::infinity();
        return s;
      }
      change = std::max(change, std::abs(v - s.V(i)));
      s.V(i) = v;
    }
    if (change < options.tol) {
      s.status = LoadFlowStatus::converged;
      if (change <= settled || ++extra > 4) break;
    }
  }
  s.residual = residuals(model, s, inj).max();
  return s;
}

double ResidualReport::max() const { return std::max({voltage, real, reactive, current}); }

ResidualReport residuals(const FeederModel& model, const LoadFlowState& state, const InjectionProfile& inj) {
  const int n = model.size();
  if (state.V.size() != n || state.P.size() != n || state.Q.size() != n || state.l.size() != n) {
    throw std::invalid_argument("load flow state does not match feeder size");
  }
  ResidualReport rep;
  Eigen::VectorXd sumP = inj.p, sumQ = inj.q;
  for (int k = 1; k <= n; ++k) {
    const Branch& b = model.branches[k - 1];
    const int i = k - 1;
    if (b.from > 0) {
      sumP(b.from - 1) += state.P(i) - b.r * state.l(i);
      sumQ(b.from - 1) += state.Q(i) - b.x * state.l(i);
    }
    const double up = b.from == 0 ? model.v0 : state.V(b.from - 1);
    rep.voltage = std::max(rep.voltage,
                           std::abs(state.V(i) - (up + 2.0 * b.r * state.P(i) + 2.0 * b.x * state.Q(i) -
                                                  b.z2() * state.l(i))));
    rep.current = std::max(rep.current, std::abs(state.l(i) * state.V(i) - state.P(i) * state.P(i) -
                                                 state.Q(i) * state.Q(i)));
  }
  rep.real = (state.P - sumP).cwiseAbs().maxCoeff();
  rep.reactive = (state.Q - sumQ).cwiseAbs().maxCoeff();
  return rep;
}

std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::voltage_low: return "voltage_low";
    case Quantity::voltage_high: return "voltage_high";
    case Quantity::real_flow_low: return "real_flow_low";
    case Quantity::real_flow_high: return "real_flow_high";
    case Quantity::reactive_flow_low: return "reactive_flow_low";
    case Quantity::reactive_flow_high: return "reactive_flow_high";
    case Quantity::current_high: return "current_high";
  }
  return "unknown";
}

std::vector<Violation> check_admissible(const FeederModel& model, const LoadFlowState& state, double slack) {
  std::vector<Violation> out;
  auto check = [&](Quantity below, Quantity above, int id, double value, double lo, double hi) {
    if (value < lo - slack) out.push_back({below, id, lo - value});
    if (value > hi + slack) out.push_back({above, id, value - hi});
  };
  for (int k = 1; k <= model.size(); ++k) {
    const Branch& b = model.branches[k - 1];
    const int id = model.node_ids[k];
    const int i = k - 1;
    check(Quantity::voltage_low, Quantity::voltage_high, id, state.V(i), model.vmin[k], model.vmax[k]);
    check(Quantity::real_flow_low, Quantity::real_flow_high, id, state.P(i), b.pmin, b.pmax);
    check(Quantity::reactive_flow_low, Quantity::reactive_flow_high, id, state.Q(i), b.qmin, b.qmax);
    if (state.l(i) > b.lmax + slack) out.push_back({Quantity::current_high, id, state.l(i) - b.lmax});
  }
  return out;
}

double substation_inflow(const FeederModel& model, const LoadFlowState& state) {
  double up = 0.0;
  for (int k = 1; k <= model.size(); ++k) {
    const Branch& b = model.branches[k - 1];
    if (b.from == 0) up += state.P(k - 1) - b.r * state.l(k - 1);
  }
  return -up;
}

}  // namespace feeder_envelope
