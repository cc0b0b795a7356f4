// feeder-envelope: load flows, robust dispatch, hosting capacity and storage
// scheduling on radial feeders. Every solve ends with an exact load-flow check.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "feeder_envelope/batch.hpp"
#include "feeder_envelope/io.hpp"
#include "feeder_envelope/sensitivity.hpp"
#include "feeder_envelope/tightening.hpp"

namespace fe = feeder_envelope;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, input_error = 2, divergence = 3, infeasible = 4, solver_limit = 5, validation_failure = 6 };

struct RunConfig {
  std::string feeder;
  std::string scenario;
  std::string out = ".";
  std::string dispatch;
  bool tighten = true;
  bool shared_linearization = false;
  bool compare_storage = false;
  int centralized_node = -1;
  double eps = 1e-5;
  double qp_eps = 1e-7;
  double oracle_tol = 1e-10;
  double slack = 1e-6;
  int max_outer = 20;
  int qp_max_iter = 100000;
};

struct Inputs {
  fe::FeederModel model;
  fe::SensitivityMatrices mats;
  fe::Scenario scenario;
};

Inputs load_inputs(const RunConfig& cfg) {
  Inputs in;
  in.model = fe::load_ordered_feeder_file(cfg.feeder);
  for (const auto& w : in.model.warnings) std::cerr << "warning: " << w << "\n";
  in.mats = fe::build_sensitivities(in.model);
  in.scenario = fe::load_scenario_file(cfg.scenario, in.model);
  return in;
}

fe::TighteningSettings settings_of(const RunConfig& cfg) {
  fe::TighteningSettings s;
  s.eps = cfg.eps;
  s.max_outer = cfg.tighten ? cfg.max_outer : 1;
  s.slack = cfg.slack;
  s.loadflow.tol = cfg.oracle_tol;
  s.qp.eps_p = s.qp.eps_d = cfg.qp_eps;
  s.qp.max_iter = cfg.qp_max_iter;
  return s;
}

std::string path_in(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

void write_json(const RunConfig& cfg, const std::string& name, const fe::ordered_json& j) {
  fe::write_file(path_in(cfg, name), j.dump(2) + "\n");
}

fe::ordered_json validation_block(const std::vector<fe::Violation>& violations, bool admissible, double slack) {
  return {{"slack", slack}, {"admissible", admissible}, {"violation_count", violations.size()},
          {"violations", fe::violations_to_json(violations)}};
}

fe::ordered_json trace_summary(const fe::TighteningTrace& t, int selected) {
  return {{"termination", fe::to_string(t.termination)}, {"converged", t.converged},
          {"iterations", t.iterations}, {"selected_iteration", selected}};
}

int report_violations(const std::vector<fe::Violation>& violations) {
  if (violations.empty()) return ok;
  std::cerr << "validation failed: " << violations.size() << " violation(s)\n";
  for (const auto& v : violations) {
    std::cerr << "  " << fe::to_string(v.quantity) << " at node " << v.node_id << " step " << v.step << " by "
              << v.amount << "\n";
  }
  return validation_failure;
}

int cmd_loadflow(const RunConfig& cfg) {
  const Inputs in = load_inputs(cfg);
  fe::LoadFlowOptions opt;
  opt.tol = cfg.oracle_tol;
  const auto state = fe::solve_loadflow(in.model, in.scenario.forecast_injection(), opt);
  write_json(cfg, "loadflow.json", fe::loadflow_to_json(in.model, state));
  if (state.status == fe::LoadFlowStatus::voltage_collapse) {
    std::cerr << "load flow diverged: voltage collapse at node " << in.model.node_ids[state.collapse_node] << "\n";
    return divergence;
  }
  if (!state.converged()) {
    std::cerr << "load flow did not converge in " << state.iterations << " iterations\n";
    return divergence;
  }
  return ok;
}

int finish_single(const RunConfig& cfg, const Inputs& in, const fe::TightenResult& res, fe::ordered_json extra = {}) {
  fe::ordered_json j = fe::solution_to_json(in.model, res.solution);
  j["tightening"] = trace_summary(res.trace, res.selected_iteration);
  j["validation"] = validation_block(res.violations, res.admissible, cfg.slack);
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(cfg, "solution.json", j);
  fe::write_file(path_in(cfg, "voltages.csv"), fe::voltage_csv(in.model, res.solution, res.validation.front()));
  fe::write_file(path_in(cfg, "trace.jsonl"), fe::trace_to_jsonl(res.trace));
  std::cout << "objective " << res.solution.objective << " after " << res.trace.iterations << " iteration(s) ("
            << fe::to_string(res.trace.termination) << ")\n";
  return report_violations(res.violations);
}

int cmd_solve(const RunConfig& cfg) {
  const Inputs in = load_inputs(cfg);
  return finish_single(cfg, in, fe::tighten(in.model, in.mats, in.scenario, settings_of(cfg)));
}

fe::ordered_json capacities(const fe::TightenResult& r) {
  fe::ordered_json per = fe::ordered_json::array();
  for (int g = 0; g < r.solution.p_g.size(); ++g) {
    per.push_back({{"node", r.solution.gen_node_ids[g]}, {"capacity_pu", r.solution.p_g(g)}});
  }
  return {{"total_pu", r.solution.p_g.sum()},
          {"per_node", per},
          {"tightening", trace_summary(r.trace, r.selected_iteration)},
          {"validation", validation_block(r.violations, r.admissible, 1e-6)}};
}

int cmd_hosting(const RunConfig& cfg) {
  Inputs in = load_inputs(cfg);
  in.scenario.objective = fe::Objective::hosting;
  std::vector<fe::Scenario> runs{in.scenario};
  if (cfg.centralized_node >= 0) {
    fe::Scenario central = in.scenario;
    fe::Generator unit;
    unit.node = in.model.index_of(cfg.centralized_node);
    for (const auto& g : in.scenario.generators) {
      unit.pmin += g.pmin;
      unit.pmax += g.pmax;
      unit.qmin += g.qmin;
      unit.qmax += g.qmax;
    }
    central.generators = {unit};
    runs.push_back(central);
  }
  const auto results = fe::tighten_batch(in.model, in.mats, runs, settings_of(cfg));
  for (const auto& r : results) {
    if (!r.result) std::rethrow_exception(r.exception);
  }
  fe::ordered_json j;
  j["distributed"] = capacities(*results[0].result);
  if (results.size() > 1) {
    j["centralized"] = capacities(*results[1].result);
    j["centralized"]["node"] = cfg.centralized_node;
  }
  write_json(cfg, "hosting.json", j);
  fe::write_file(path_in(cfg, "trace.jsonl"), fe::trace_to_jsonl(results[0].result->trace));
  std::cout << "distributed hosting total " << results[0].result->solution.p_g.sum() << " pu\n";
  if (results.size() > 1) std::cout << "centralized hosting total " << results[1].result->solution.p_g.sum() << " pu\n";
  std::vector<fe::Violation> all;
  for (const auto& r : results) all.insert(all.end(), r.result->violations.begin(), r.result->violations.end());
  return report_violations(all);
}

int cmd_flexibility(const RunConfig& cfg) {
  const Inputs in = load_inputs(cfg);
  const auto env = fe::flexibility_envelope(in.model, in.mats, in.scenario, settings_of(cfg));
  fe::ordered_json per = fe::ordered_json::array();
  for (std::size_t i = 0; i < env.node_ids.size(); ++i) {
    per.push_back({{"node", env.node_ids[i]}, {"up_pu", env.up(i)}, {"down_pu", env.down(i)}});
  }
  fe::ordered_json j{{"total_up_pu", env.total_up}, {"total_down_pu", env.total_down}, {"per_node", per}};
  std::vector<fe::Violation> all;
  if (!env.node_ids.empty()) {
    j["up"] = {{"tightening", trace_summary(env.up_run.trace, env.up_run.selected_iteration)},
               {"validation", validation_block(env.up_run.violations, env.up_run.admissible, cfg.slack)}};
    j["down"] = {{"tightening", trace_summary(env.down_run.trace, env.down_run.selected_iteration)},
                 {"validation", validation_block(env.down_run.violations, env.down_run.admissible, cfg.slack)}};
    fe::write_file(path_in(cfg, "trace_up.jsonl"), fe::trace_to_jsonl(env.up_run.trace));
    fe::write_file(path_in(cfg, "trace_down.jsonl"), fe::trace_to_jsonl(env.down_run.trace));
    all = env.up_run.violations;
    all.insert(all.end(), env.down_run.violations.begin(), env.down_run.violations.end());
  }
  write_json(cfg, "flexibility.json", j);
  std::cout << "flexibility up " << env.total_up << " pu, down " << env.total_down << " pu\n";
  return report_violations(all);
}

int cmd_multiperiod(const RunConfig& cfg) {
  const Inputs in = load_inputs(cfg);
  if (!in.scenario.horizon) throw fe::ScenarioError("multiperiod needs a 'horizon' block");
  const auto mode = cfg.shared_linearization ? fe::Linearization::shared : fe::Linearization::per_step;
  const auto settings = settings_of(cfg);

  std::vector<fe::Scenario> runs{in.scenario};
  std::vector<std::string> labels{"distributed"};
  if (cfg.compare_storage) {
    fe::Scenario none = in.scenario;
    none.batteries.clear();
    runs.push_back(none);
    labels.push_back("no_storage");
    if (!in.scenario.batteries.empty()) {
      fe::Scenario central = in.scenario;
      fe::BatterySpec unit;
      unit.node = cfg.centralized_node >= 0 ? in.model.index_of(cfg.centralized_node) : in.scenario.batteries[0].node;
      for (const auto& b : in.scenario.batteries) {
        unit.p_rate += b.p_rate;
        unit.b_max += b.b_max;
        unit.b_min += b.b_min;
        unit.b0 += b.b0;
        if (b.b_final) unit.b_final = unit.b_final.value_or(0.0) + *b.b_final;
      }
      central.batteries = {unit};
      runs.push_back(central);
      labels.push_back("centralized");
    }
  }
  const auto results = fe::tighten_multiperiod_batch(in.model, in.mats, runs, settings, mode);
  for (const auto& r : results) {
    if (!r.result) std::rethrow_exception(r.exception);
  }
  const auto& main = *results[0].result;
  fe::ordered_json j = fe::schedule_to_json(in.model, main.solution);
  j["linearization"] = cfg.shared_linearization ? "shared" : "per_step";
  j["tightening"] = trace_summary(main.trace, main.selected_iteration);
  j["validation"] = validation_block(main.violations, main.admissible, cfg.slack);
  if (cfg.compare_storage) {
    fe::ordered_json cmp;
    for (std::size_t i = 0; i < results.size(); ++i) {
      double total = 0.0;
      for (const auto& p : results[i].result->solution.periods) total += p.p_g.sum();
      cmp[labels[i]] = {{"hosting_total_pu", total}, {"admissible", results[i].result->admissible}};
    }
    j["storage_comparison"] = cmp;
  }
  write_json(cfg, "schedule.json", j);
  fe::write_file(path_in(cfg, "schedule.csv"), fe::schedule_csv(main.solution, in.scenario));
  fe::write_file(path_in(cfg, "trace.jsonl"), fe::trace_to_jsonl(main.trace));
  std::cout << "schedule objective " << main.solution.objective << " over " << main.solution.steps << " steps\n";
  std::vector<fe::Violation> all;
  for (const auto& r : results) all.insert(all.end(), r.result->violations.begin(), r.result->violations.end());
  return report_violations(all);
}

int cmd_validate(const RunConfig& cfg) {
  const Inputs in = load_inputs(cfg);
  fe::InjectionProfile inj = in.scenario.forecast_injection();
  if (!cfg.dispatch.empty()) {
    std::ifstream f(cfg.dispatch);
    if (!f) throw fe::ScenarioError("cannot open " + cfg.dispatch);
    std::stringstream ss;
    ss << f.rdbuf();
    inj = fe::load_dispatch(ss.str(), in.scenario, in.model);
  }
  fe::LoadFlowOptions opt;
  opt.tol = cfg.oracle_tol;
  const auto state = fe::solve_loadflow(in.model, inj, opt);
  if (!state.converged()) {
    write_json(cfg, "validation.json", {{"loadflow", fe::loadflow_to_json(in.model, state)}});
    std::cerr << "load flow diverged at the dispatched injections\n";
    return divergence;
  }
  const auto violations = fe::check_admissible(in.model, state, cfg.slack);
  write_json(cfg, "validation.json",
             {{"validation", validation_block(violations, violations.empty(), cfg.slack)},
              {"loadflow", fe::loadflow_to_json(in.model, state)}});
  std::cout << violations.size() << " violation(s)\n";
  return report_violations(violations);
}

void common_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--feeder", cfg.feeder, "feeder JSON")->required()->check(CLI::ExistingFile);
  app->add_option("--scenario", cfg.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  app->add_option("--out", cfg.out, "output directory");
  app->add_option("--oracle-tol", cfg.oracle_tol, "load-flow tolerance")->check(CLI::PositiveNumber);
  app->add_option("--slack", cfg.slack, "admissibility slack")->check(CLI::NonNegativeNumber);
}

void solve_flags(CLI::App* app, RunConfig& cfg) {
  common_flags(app, cfg);
  app->add_flag("--tighten,!--no-tighten", cfg.tighten, "iterate the bound tightening (default on)");
  app->add_option("--eps", cfg.eps, "tightening tolerance on the voltage error")->check(CLI::PositiveNumber);
  app->add_option("--qp-eps", cfg.qp_eps, "QP residual tolerance")->check(CLI::PositiveNumber);
  app->add_option("--max-outer", cfg.max_outer, "tightening iteration limit")->check(CLI::PositiveNumber);
  app->add_option("--qp-max-iter", cfg.qp_max_iter, "QP iteration limit")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust dispatch envelopes for radial distribution feeders"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto* lf = app.add_subcommand("loadflow", "exact load flow at the scenario's forecast");
  common_flags(lf, cfg);
  auto* solve = app.add_subcommand("solve", "robust dispatch with oracle validation");
  solve_flags(solve, cfg);
  auto* hosting = app.add_subcommand("hosting", "maximum admissible generation at the scenario's units");
  solve_flags(hosting, cfg);
  hosting->add_option("--centralized-node", cfg.centralized_node, "also size one aggregate unit at this node");
  auto* flex = app.add_subcommand("flexibility", "up/down envelope of the scenario's units");
  solve_flags(flex, cfg);
  auto* mp = app.add_subcommand("multiperiod", "storage-coupled schedule over the scenario's horizon");
  solve_flags(mp, cfg);
  mp->add_flag("--shared-linearization", cfg.shared_linearization, "expand every step around the first one");
  mp->add_flag("--compare-storage", cfg.compare_storage, "also run without storage and with one central battery");
  mp->add_option("--centralized-node", cfg.centralized_node, "node of the central battery");
  auto* val = app.add_subcommand("validate", "check a dispatch against the exact load flow");
  common_flags(val, cfg);
  val->add_option("--dispatch", cfg.dispatch, "solution JSON with a 'dispatch' array")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : input_error;
  }

  try {
    fs::create_directories(cfg.out);
    if (lf->parsed()) return cmd_loadflow(cfg);
    if (solve->parsed()) return cmd_solve(cfg);
    if (hosting->parsed()) return cmd_hosting(cfg);
    if (flex->parsed()) return cmd_flexibility(cfg);
    if (mp->parsed()) return cmd_multiperiod(cfg);
    return cmd_validate(cfg);
  } catch (const fe::FeederError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return input_error;
  } catch (const fe::ScenarioError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return input_error;
  } catch (const fe::LoadFlowError& e) {
    std::cerr << "oracle divergence: " << e.what() << "\n";
    return divergence;
  } catch (const fe::OpfInfeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    for (const auto& row : e.rows()) std::cerr << "  certificate row " << row << "\n";
    return infeasible;
  } catch (const fe::OpfSolverLimit& e) {
    std::cerr << "solver limit: " << e.what() << "\n";
    return solver_limit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return input_error;
  }
}
