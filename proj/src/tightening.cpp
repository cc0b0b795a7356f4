#include "feeder_envelope/tightening.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace feeder_envelope {

namespace {

using Eigen::VectorXd;

struct SinglePeriod {
  const FeederModel& model;
  const SensitivityMatrices& mats;
  const Scenario& scenario;
  using Solution = RobustOpfSolution;

  std::vector<InjectionProfile> forecast() const { return {scenario.forecast_injection()}; }

  Solution solve(const std::vector<OperatingPoint>& ops, const QpSettings& qs) const {
    return solve_p3(mats, ops.front(), scenario, model, qs);
  }

  static std::vector<const RobustOpfSolution*> periods(const Solution& s) { return {&s}; }
};

struct MultiPeriod {
  const FeederModel& model;
  const SensitivityMatrices& mats;
  std::vector<Scenario> scenarios;
  std::vector<BatterySpec> batteries;
  int steps;
  double dt_h;
  Linearization mode;
  using Solution = DispatchSchedule;

  std::vector<InjectionProfile> forecast() const {
    std::vector<InjectionProfile> out;
    for (const auto& s : scenarios) out.push_back(s.forecast_injection());
    return out;
  }

  Solution solve(std::vector<OperatingPoint> ops, const QpSettings& qs) const {
    if (mode == Linearization::shared) {
      for (auto& op : ops) op = ops.front();
    }
    const OpfProgram prog = build_p4(mats, ops, scenarios, batteries, steps, dt_h, model);
    return extract_schedule(prog, solve_qp(prog.qp, qs), model);
  }

  static std::vector<const RobustOpfSolution*> periods(const Solution& s) {
    std::vector<const RobustOpfSolution*> out;
    for (const auto& p : s.periods) out.push_back(&p);
    return out;
  }
};

std::vector<InjectionProfile> injections(const std::vector<OperatingPoint>& ops) {
  std::vector<InjectionProfile> out;
  for (const auto& op : ops) out.push_back(op.injection);
  return out;
}

template <class Form>
TightenOutcome<typename Form::Solution> run(const Form& form, const FeederModel& model,
                                            const TighteningSettings& set) {
  using Solution = typename Form::Solution;
  if (!(set.eps > 0.0) || set.max_outer < 1) throw std::invalid_argument("tightening needs eps > 0 and max_outer >= 1");

  std::vector<OperatingPoint> ops;
  for (const auto& inj : form.forecast()) ops.push_back(operating_point(model, inj, set.loadflow));

  TightenOutcome<Solution> out;
  std::optional<TightenOutcome<Solution>> best;
  std::optional<TightenOutcome<Solution>> last;

  std::vector<InjectionProfile> anchor;  // expansion injections of the previous iterate

  for (int k = 1; k <= set.max_outer; ++k) {
    Solution sol;
    int backtracks = 0;
    try {
      try {
        sol = form.solve(ops, set.qp);
      } catch (const OpfInfeasible&) {
        if (k == 1) throw;
        // Pull the expansion point back toward the previous one until the
        // robust program becomes feasible again.
        const std::vector<InjectionProfile> target = injections(ops);
        bool recovered = false;
        double theta = 1.0;
        while (!recovered && backtracks < set.max_backtracks) {
          theta *= 0.5;
          ++backtracks;
          try {
            for (std::size_t t = 0; t < ops.size(); ++t) {
              const InjectionProfile mid{anchor[t].p + theta * (target[t].p - anchor[t].p),
                                         anchor[t].q + theta * (target[t].q - anchor[t].q)};
              ops[t] = operating_point(model, mid, set.loadflow);
            }
            sol = form.solve(ops, set.qp);
            recovered = true;
          } catch (const OpfInfeasible&) {
          } catch (const LoadFlowError&) {
          }
        }
        if (!recovered) throw;
      }
    } catch (const OpfInfeasible&) {
      if (k == 1) throw;
      out.trace.termination = Termination::infeasible;
      break;
    } catch (const OpfSolverLimit&) {
      if (k == 1) throw;
      out.trace.termination = Termination::solver_limit;
      break;
    }

    // Exact load flow at the dispatched injections becomes the next expansion point.
    std::vector<LoadFlowState> states;
    std::vector<Violation> violations;
    double error = 0.0, total = 0.0;
    bool diverged = false;
    const auto periods = Form::periods(sol);
    for (std::size_t t = 0; t < periods.size(); ++t) {
      const RobustOpfSolution& per = *periods[t];
      LoadFlowState st = solve_loadflow(model, per.injection(), set.loadflow);
      if (!st.converged()) {
        diverged = true;
        break;
      }
      error = std::max(error, (per.voltage_midpoint() - st.V).cwiseAbs().maxCoeff());
      total += per.p_g.sum();
      for (auto v : check_admissible(model, st, set.slack)) {
        v.step = static_cast<int>(t);
        violations.push_back(v);
      }
      states.push_back(std::move(st));
    }
    if (diverged) {
      if (k == 1 && !best && !last) throw LoadFlowError("load flow diverged at the first robust dispatch", {});
      out.trace.termination = Termination::oracle_divergence;
      break;
    }

    TraceRecord rec;
    rec.iteration = k;
    rec.objective = sol.objective;
    rec.error = error;
    rec.violations = static_cast<int>(violations.size());
    rec.total_injection = total;
    rec.backtracks = backtracks;
    for (const auto& op : ops) rec.max_l0 = std::max(rec.max_l0, op.l0.maxCoeff());
    out.trace.records.push_back(rec);

    TightenOutcome<Solution> cur;
    cur.solution = sol;
    cur.violations = violations;
    cur.validation = states;
    cur.admissible = violations.empty();
    cur.selected_iteration = k;
    if (cur.admissible && (!best || sol.objective <= best->solution.objective + 1e-12)) best = cur;

    anchor = injections(ops);
    for (std::size_t t = 0; t < states.size(); ++t) {
      ops[t] = operating_point(states[t], periods[t]->injection(), model.v0);
    }
    last = std::move(cur);

    if (error <= set.eps) {
      out.trace.termination = Termination::converged;
      out.trace.converged = true;
      break;
    }
  }

  out.trace.iterations = static_cast<int>(out.trace.records.size());
  const TightenOutcome<Solution>& chosen = best ? *best : *last;
  out.solution = chosen.solution;
  out.violations = chosen.violations;
  out.validation = chosen.validation;
  out.admissible = chosen.admissible;
  out.selected_iteration = chosen.selected_iteration;
  return out;
}

}  // namespace

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_outer: return "max_outer";
    case Termination::infeasible: return "infeasible";
    case Termination::solver_limit: return "solver_limit";
    case Termination::oracle_divergence: return "oracle_divergence";
  }
  return "unknown";
}

TightenResult tighten(const FeederModel& model, const SensitivityMatrices& mats, const Scenario& scenario,
                      const TighteningSettings& settings) {
  scenario.validate(model);
  return run(SinglePeriod{model, mats, scenario}, model, settings);
}

MultiPeriodResult tighten_multiperiod(const FeederModel& model, const SensitivityMatrices& mats,
                                      const Scenario& scenario, const TighteningSettings& settings,
                                      Linearization mode) {
  scenario.validate(model);
  const Horizon h = scenario.horizon.value_or(Horizon{});
  MultiPeriod form{model, mats, {}, scenario.batteries, h.steps, h.dt_h, mode};
  for (int t = 0; t < h.steps; ++t) form.scenarios.push_back(scenario.at_step(t));
  return run(form, model, settings);
}

FlexibilityEnvelope flexibility_envelope(const FeederModel& model, const SensitivityMatrices& mats,
                                         const Scenario& scenario, const TighteningSettings& settings) {
  FlexibilityEnvelope env;
  if (scenario.generators.empty()) {
    env.up = env.down = VectorXd::Zero(0);
    return env;
  }
  for (const auto& g : scenario.generators) env.node_ids.push_back(model.node_ids[g.node]);
  Scenario up = scenario, down = scenario;
  up.objective = Objective::flex_up;
  down.objective = Objective::flex_down;
  env.up_run = tighten(model, mats, up, settings);
  env.down_run = tighten(model, mats, down, settings);
  env.up = env.up_run.solution.p_g;
  env.down = env.down_run.solution.p_g;
  env.total_up = env.up.sum();
  env.total_down = env.down.sum();
  return env;
}

}  // namespace feeder_envelope
