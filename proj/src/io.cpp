#include "feeder_envelope/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace feeder_envelope {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ScenarioError("unknown field '" + key + "' in " + where);
    }
  }
}

double number(const json& obj, const char* key, const std::string& where, std::optional<double> fallback = {}) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw ScenarioError("missing field '" + std::string(key) + "' in " + where);
  }
  if (!it->is_number() || !std::isfinite(it->get<double>())) {
    throw ScenarioError("field '" + std::string(key) + "' in " + where + " must be a finite number");
  }
  return it->get<double>();
}

int node_index(const json& obj, const std::string& where, const FeederModel& model) {
  auto it = obj.find("node");
  if (it == obj.end() || !it->is_number_integer()) throw ScenarioError(where + " needs an integer 'node'");
  const int id = it->get<int>();
  if (id == 0) throw ScenarioError(where + " refers to the substation");
  try {
    return model.index_of(id);
  } catch (const FeederError&) {
    throw ScenarioError(where + " refers to unknown node " + std::to_string(id));
  }
}

json parse(std::string_view source, const char* what) {
  try {
    return json::parse(source);
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string(what) + " parse error: " + e.what());
  }
}

// Entry order sorted by external node id.
std::vector<int> by_id(const std::vector<int>& ids) {
  std::vector<int> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return ids[a] < ids[b]; });
  return idx;
}

json ordered(const Eigen::VectorXd& v, const std::vector<int>& order) {
  json arr = json::array();
  for (int i : order) arr.push_back(v(i));
  return arr;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Scenario load_scenario(std::string_view source, const FeederModel& model) {
  const json doc = parse(source, "scenario");
  if (!doc.is_object()) throw ScenarioError("scenario must be a JSON object");
  reject_unknown(doc, {"loads", "generators", "objective", "horizon", "batteries"}, "scenario");
  const int n = model.size();
  Scenario sc;
  sc.P_L = Eigen::VectorXd::Zero(n);
  sc.Q_L = Eigen::VectorXd::Zero(n);

  if (doc.contains("loads")) {
    const json& loads = doc["loads"];
    if (!loads.is_array()) throw ScenarioError("'loads' must be an array");
    for (std::size_t i = 0; i < loads.size(); ++i) {
      const std::string where = "loads[" + std::to_string(i) + "]";
      reject_unknown(loads[i], {"node", "p_pu", "q_pu"}, where);
      const int k = node_index(loads[i], where, model);
      sc.P_L(k - 1) += number(loads[i], "p_pu", where);
      sc.Q_L(k - 1) += number(loads[i], "q_pu", where, 0.0);
    }
  }
  if (doc.contains("generators")) {
    const json& gens = doc["generators"];
    if (!gens.is_array()) throw ScenarioError("'generators' must be an array");
    for (std::size_t i = 0; i < gens.size(); ++i) {
      const std::string where = "generators[" + std::to_string(i) + "]";
      reject_unknown(gens[i], {"node", "pmin_pu", "pmax_pu", "qmin_pu", "qmax_pu", "c1", "c2"}, where);
      Generator g;
      g.node = node_index(gens[i], where, model);
      g.pmin = number(gens[i], "pmin_pu", where);
      g.pmax = number(gens[i], "pmax_pu", where);
      g.qmin = number(gens[i], "qmin_pu", where, 0.0);
      g.qmax = number(gens[i], "qmax_pu", where, 0.0);
      g.c1 = number(gens[i], "c1", where, 0.0);
      g.c2 = number(gens[i], "c2", where, 0.0);
      sc.generators.push_back(g);
    }
  }
  if (doc.contains("objective")) {
    if (!doc["objective"].is_string()) throw ScenarioError("'objective' must be a string");
    try {
      sc.objective = objective_from_string(doc["objective"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(e.what());
    }
  }
  if (doc.contains("horizon")) {
    const json& h = doc["horizon"];
    if (!h.is_object()) throw ScenarioError("'horizon' must be an object");
    reject_unknown(h, {"T", "dt_h", "load_series"}, "horizon");
    Horizon hz;
    if (!h.contains("T") || !h["T"].is_number_integer()) throw ScenarioError("horizon needs an integer 'T'");
    hz.steps = h["T"].get<int>();
    hz.dt_h = number(h, "dt_h", "horizon", 1.0);
    if (h.contains("load_series")) {
      if (!h["load_series"].is_array()) throw ScenarioError("'load_series' must be an array");
      for (const auto& v : h["load_series"]) {
        if (!v.is_number()) throw ScenarioError("'load_series' entries must be numbers");
        hz.load_series.push_back(v.get<double>());
      }
    }
    sc.horizon = hz;
  }
  if (doc.contains("batteries")) {
    const json& bats = doc["batteries"];
    if (!bats.is_array()) throw ScenarioError("'batteries' must be an array");
    for (std::size_t i = 0; i < bats.size(); ++i) {
      const std::string where = "batteries[" + std::to_string(i) + "]";
      reject_unknown(bats[i], {"node", "p_rate_pu", "b_max_puh", "b_min_puh", "b0_puh", "b_final_puh"}, where);
      BatterySpec b;
      b.node = node_index(bats[i], where, model);
      b.p_rate = number(bats[i], "p_rate_pu", where);
      b.b_max = number(bats[i], "b_max_puh", where);
      b.b_min = number(bats[i], "b_min_puh", where, 0.0);
      b.b0 = number(bats[i], "b0_puh", where);
      if (bats[i].contains("b_final_puh")) b.b_final = number(bats[i], "b_final_puh", where);
      sc.batteries.push_back(b);
    }
  }
  try {
    sc.validate(model);
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }
  return sc;
}

Scenario load_scenario_file(const std::string& path, const FeederModel& model) {
  return load_scenario(read_file(path), model);
}

InjectionProfile load_dispatch(std::string_view source, const Scenario& scenario, const FeederModel& model) {
  const json doc = parse(source, "dispatch");
  if (!doc.is_object() || !doc.contains("dispatch") || !doc["dispatch"].is_array()) {
    throw ScenarioError("dispatch file needs a 'dispatch' array");
  }
  InjectionProfile inj = scenario.forecast_injection();
  const json& arr = doc["dispatch"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "dispatch[" + std::to_string(i) + "]";
    const int k = node_index(arr[i], where, model);
    inj.p(k - 1) += number(arr[i], "p_pu", where);
    inj.q(k - 1) += number(arr[i], "q_pu", where, 0.0);
  }
  return inj;
}

ordered_json violations_to_json(const std::vector<Violation>& violations) {
  ordered_json arr = ordered_json::array();
  for (const auto& v : violations) {
    arr.push_back({{"quantity", to_string(v.quantity)}, {"node", v.node_id}, {"step", v.step}, {"amount", v.amount}});
  }
  return arr;
}

ordered_json loadflow_to_json(const FeederModel& model, const LoadFlowState& state) {
  std::vector<int> ids(model.node_ids.begin() + 1, model.node_ids.end());
  const auto order = by_id(ids);
  ordered_json j;
  j["converged"] = state.converged();
  j["status"] = state.status == LoadFlowStatus::converged        ? "converged"
                : state.status == LoadFlowStatus::voltage_collapse ? "voltage_collapse"
                                                                   : "max_iterations";
  j["iterations"] = state.iterations;
  j["residual"] = std::isfinite(state.residual) ? ordered_json(state.residual) : ordered_json(nullptr);
  ordered_json idarr = ordered_json::array();
  for (int i : order) idarr.push_back(ids[i]);
  j["node_ids"] = idarr;
  j["V"] = ordered(state.V, order);
  j["P"] = ordered(state.P, order);
  j["Q"] = ordered(state.Q, order);
  j["l"] = ordered(state.l, order);
  if (state.status == LoadFlowStatus::voltage_collapse) j["collapse_node"] = model.node_ids[state.collapse_node];
  return j;
}

ordered_json solution_to_json(const FeederModel& model, const RobustOpfSolution& sol) {
  (void)model;
  const auto order = by_id(sol.node_ids);
  ordered_json j;
  j["status"] = to_string(sol.status);
  j["objective"] = sol.objective;
  ordered_json disp = ordered_json::array();
  for (int g = 0; g < sol.p_g.size(); ++g) {
    disp.push_back({{"node", sol.gen_node_ids[g]}, {"p_pu", sol.p_g(g)}, {"q_pu", sol.q_g(g)}});
  }
  j["dispatch"] = disp;
  ordered_json idarr = ordered_json::array();
  for (int i : order) idarr.push_back(sol.node_ids[i]);
  j["node_ids"] = idarr;
  j["p"] = ordered(sol.p, order);
  j["q"] = ordered(sol.q, order);
  j["P_plus"] = ordered(sol.P_plus, order);
  j["P_minus"] = ordered(sol.P_minus, order);
  j["Q_plus"] = ordered(sol.Q_plus, order);
  j["Q_minus"] = ordered(sol.Q_minus, order);
  j["V_plus"] = ordered(sol.V_plus, order);
  j["V_minus"] = ordered(sol.V_minus, order);
  j["l_minus"] = ordered(sol.l_minus, order);
  j["l_plus"] = ordered(sol.l_plus, order);
  return j;
}

ordered_json schedule_to_json(const FeederModel& model, const DispatchSchedule& sched) {
  ordered_json j;
  j["status"] = to_string(sched.status);
  j["objective"] = sched.objective;
  j["T"] = sched.steps;
  j["dt_h"] = sched.dt_h;
  ordered_json bats = ordered_json::array();
  for (int b = 0; b < static_cast<int>(sched.battery_node_ids.size()); ++b) {
    ordered_json pb = ordered_json::array(), soc = ordered_json::array();
    for (int t = 0; t < sched.steps; ++t) pb.push_back(sched.P_b(t, b));
    for (int t = 0; t <= sched.steps; ++t) soc.push_back(sched.soc(t, b));
    bats.push_back({{"node", sched.battery_node_ids[b]}, {"P_b", pb}, {"soc", soc}});
  }
  j["batteries"] = bats;
  ordered_json periods = ordered_json::array();
  for (const auto& p : sched.periods) periods.push_back(solution_to_json(model, p));
  j["periods"] = periods;
  return j;
}

ordered_json trace_record_to_json(const TraceRecord& rec) {
  return {{"iteration", rec.iteration},     {"objective", rec.objective},
          {"error", rec.error},             {"violations", rec.violations},
          {"total_injection", rec.total_injection}, {"max_l0", rec.max_l0},
          {"backtracks", rec.backtracks}};
}

std::string trace_to_jsonl(const TighteningTrace& trace) {
  std::string out;
  for (const auto& r : trace.records) out += trace_record_to_json(r).dump() + "\n";
  return out;
}

std::string voltage_csv(const FeederModel& model, const RobustOpfSolution& sol, const LoadFlowState& exact) {
  (void)model;
  std::ostringstream os;
  os << std::setprecision(12);
  os << "node,V_minus,V_exact,V_plus\n";
  for (int i : by_id(sol.node_ids)) {
    os << sol.node_ids[i] << "," << sol.V_minus(i) << "," << exact.V(i) << "," << sol.V_plus(i) << "\n";
  }
  return os.str();
}

std::string schedule_csv(const DispatchSchedule& sched, const Scenario& scenario) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "step,load_p,battery_discharge,generation\n";
  for (int t = 0; t < sched.steps; ++t) {
    const double load = scenario.at_step(t).P_L.sum();
    const double discharge = sched.P_b.cols() > 0 ? sched.P_b.row(t).sum() : 0.0;
    os << t << "," << load << "," << discharge << "," << sched.periods[t].p_g.sum() << "\n";
  }
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace feeder_envelope
