#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "support.hpp"

using namespace fe_test;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string err;
};

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("feeder_envelope_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(FE_CLI) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string feeder_arg() { return "--feeder " + data_path("feeder13.json"); }
std::string scen(const std::string& name) { return "--scenario " + data_path("scenarios/" + name); }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("scenario parsing") {
  FeederModel m = feeder13();
  SUBCASE("bundled scenario") {
    Scenario sc = scenario13(m, "nominal_cost.json");
    CHECK(sc.generators.size() == 3);
    CHECK(sc.objective == Objective::cost);
    CHECK(sc.P_L(m.index_of(2) - 1) == doctest::Approx(0.8785));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(load_scenario("{\"loads\": [", m), ScenarioError);
    CHECK_THROWS_WITH_AS(load_scenario(R"({"loadz": []})", m), doctest::Contains("unknown field"), ScenarioError);
    CHECK_THROWS_WITH_AS(load_scenario(R"({"loads": [{"node": 0, "p_pu": 1}]})", m), doctest::Contains("substation"),
                         ScenarioError);
    CHECK_THROWS_WITH_AS(load_scenario(R"({"loads": [{"node": 99, "p_pu": 1}]})", m), doctest::Contains("unknown node"),
                         ScenarioError);
    CHECK_THROWS_AS(load_scenario(R"({"objective": "cheapest"})", m), ScenarioError);
    CHECK_THROWS_AS(load_scenario(R"({"generators": [{"node": 2, "pmin_pu": 1, "pmax_pu": 0}]})", m), ScenarioError);
    CHECK_THROWS_AS(load_scenario(R"({"horizon": {"T": 2, "load_series": [1]}})", m), ScenarioError);
    CHECK_THROWS_AS(
        load_scenario(R"({"batteries": [{"node": 2, "p_rate_pu": 0.1, "b_max_puh": 0.1, "b0_puh": 0.2}]})", m),
        ScenarioError);
  }
  SUBCASE("dispatch adds set-points to the forecast") {
    Scenario sc = scenario13(m, "nominal_cost.json");
    InjectionProfile inj = load_dispatch(R"({"dispatch": [{"node": 7, "p_pu": 0.25, "q_pu": -0.1}]})", sc, m);
    const int k = m.index_of(7) - 1;
    CHECK(inj.p(k) == doctest::Approx(-sc.P_L(k) + 0.25));
    CHECK(inj.q(k) == doctest::Approx(-sc.Q_L(k) - 0.1));
  }
}

TEST_CASE("writers order nodes by id") {
  FeederModel m = feeder13();
  Scenario sc = scenario13(m, "nominal_cost.json");
  LoadFlowState s = solve_loadflow(m, sc.forecast_injection());
  auto j = loadflow_to_json(m, s);
  std::vector<int> ids = j["node_ids"].get<std::vector<int>>();
  CHECK(std::is_sorted(ids.begin(), ids.end()));
  CHECK(ids.size() == 12);
  CHECK(j["V"][1].get<double>() == s.V(m.index_of(2) - 1));
  CHECK(j["converged"].get<bool>());
}

TEST_CASE("cli loadflow") {
  SUBCASE("no load gives the substation voltage everywhere") {
    fs::path dir = scratch("lf_noload");
    write(dir / "empty.json", "{}");
    Run r = cli("loadflow " + feeder_arg() + " --scenario " + (dir / "empty.json").string() + " --out " +
                    (dir / "out").string(),
                dir);
    CHECK(r.code == 0);
    auto j = read_json(dir / "out" / "loadflow.json");
    for (double v : j["V"]) CHECK(v == 1.0609);
  }
  SUBCASE("overload collapses and names the node") {
    fs::path dir = scratch("lf_collapse");
    write(dir / "feeder.json", feeder_json(1.0, {{0, 1, 0.05, 0.1}, {1, 2, 0.05, 0.1}}));
    write(dir / "load.json", R"({"loads": [{"node": 2, "p_pu": 3.0, "q_pu": 1.5}]})");
    Run r = cli("loadflow --feeder " + (dir / "feeder.json").string() + " --scenario " + (dir / "load.json").string() +
                    " --out " + dir.string(),
                dir);
    CHECK(r.code == 3);
    CHECK(r.err.find("voltage collapse at node") != std::string::npos);
  }
  SUBCASE("malformed JSON") {
    fs::path dir = scratch("lf_malformed");
    write(dir / "bad.json", "{\"loads\": [");
    Run r = cli("loadflow " + feeder_arg() + " --scenario " + (dir / "bad.json").string() + " --out " + dir.string(),
                dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("parse error") != std::string::npos);
  }
  SUBCASE("unknown subcommand flag") {
    fs::path dir = scratch("lf_flag");
    CHECK(cli("loadflow --bogus", dir).code == 2);
  }
}

TEST_CASE("cli solve") {
  SUBCASE("nominal cost case validates and is byte-for-byte reproducible") {
    fs::path dir = scratch("solve_nominal");
    const std::string base = "solve " + feeder_arg() + " " + scen("nominal_cost.json") + " --out ";
    REQUIRE(cli(base + (dir / "a").string(), dir).code == 0);
    REQUIRE(cli(base + (dir / "b").string(), dir).code == 0);
    auto j = read_json(dir / "a" / "solution.json");
    CHECK(j["status"] == "optimal");
    CHECK(j["validation"]["violation_count"] == 0);
    CHECK(j["validation"]["admissible"] == true);
    for (const char* f : {"solution.json", "voltages.csv", "trace.jsonl"}) {
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    const std::string csv = slurp(dir / "a" / "voltages.csv");
    CHECK(csv.rfind("node,V_minus,V_exact,V_plus\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  }
  SUBCASE("vmax below v0 without reactive resources is infeasible") {
    fs::path dir = scratch("solve_infeasible");
    write(dir / "feeder.json", feeder_json(1.0, {{0, 1, 0.01, 0.02}}, 0.81, 0.98));
    write(dir / "sc.json", R"({"generators": [{"node": 1, "pmin_pu": 0, "pmax_pu": 1}], "objective": "hosting"})");
    Run r = cli("solve --feeder " + (dir / "feeder.json").string() + " --scenario " + (dir / "sc.json").string() +
                    " --out " + dir.string(),
                dir);
    CHECK(r.code == 4);
    CHECK(r.err.find("certificate row V+") != std::string::npos);
  }
  SUBCASE("solver limit") {
    fs::path dir = scratch("solve_limit");
    Run r = cli("solve " + feeder_arg() + " " + scen("nominal_cost.json") + " --qp-max-iter 3 --out " + dir.string(),
                dir);
    CHECK(r.code == 5);
  }
  SUBCASE("tightened hosting objective is at least the one-shot objective") {
    fs::path dir = scratch("solve_pair");
    const std::string base = "solve " + feeder_arg() + " " + scen("hosting_leaves.json");
    REQUIRE(cli(base + " --tighten --out " + (dir / "t").string(), dir).code == 0);
    REQUIRE(cli(base + " --no-tighten --out " + (dir / "o").string(), dir).code == 0);
    auto t = read_json(dir / "t" / "solution.json");
    auto o = read_json(dir / "o" / "solution.json");
    CHECK(o["tightening"]["iterations"] == 1);
    CHECK(t["objective"].get<double>() <= o["objective"].get<double>());
  }
}

TEST_CASE("cli hosting") {
  SUBCASE("distributed and centralized totals side by side") {
    fs::path dir = scratch("hosting");
    REQUIRE(cli("hosting " + feeder_arg() + " " + scen("hosting_leaves.json") + " --centralized-node 2 --out " +
                    dir.string(),
                dir)
                .code == 0);
    auto j = read_json(dir / "hosting.json");
    CHECK(j["distributed"]["total_pu"].get<double>() > 0.0);
    CHECK(j["centralized"]["total_pu"].get<double>() > 0.0);
    CHECK(j["distributed"]["per_node"].size() == 6);
    CHECK(j["distributed"]["validation"]["violation_count"] == 0);
    CHECK(j["centralized"]["validation"]["violation_count"] == 0);
  }
  SUBCASE("no headroom gives zero capacity") {
    fs::path dir = scratch("hosting_zero");
    write(dir / "feeder.json", feeder_json(1.0, {{0, 1, 0.01, 0.02}, {1, 2, 0.01, 0.02}}, 0.81, 1.0));
    write(dir / "sc.json", R"({"generators": [{"node": 1, "pmin_pu": 0, "pmax_pu": 1},
                                              {"node": 2, "pmin_pu": 0, "pmax_pu": 1}]})");
    REQUIRE(cli("hosting --feeder " + (dir / "feeder.json").string() + " --scenario " + (dir / "sc.json").string() +
                    " --out " + dir.string(),
                dir)
                .code == 0);
    auto j = read_json(dir / "hosting.json");
    for (const auto& e : j["distributed"]["per_node"]) CHECK(std::abs(e["capacity_pu"].get<double>()) <= 1e-7);
  }
}

TEST_CASE("cli flexibility") {
  fs::path dir = scratch("flex");
  REQUIRE(cli("flexibility " + feeder_arg() + " " + scen("flex_noload.json") + " --out " + dir.string(), dir).code ==
          0);
  auto j = read_json(dir / "flexibility.json");
  CHECK(j["total_up_pu"].get<double>() > 0.0);
  CHECK(j["total_down_pu"].get<double>() < 0.0);
  CHECK(j["down"]["tightening"]["converged"] == true);
  CHECK(fs::exists(dir / "trace_down.jsonl"));
}

TEST_CASE("cli multiperiod with storage comparison") {
  fs::path dir = scratch("multiperiod");
  REQUIRE(cli("multiperiod " + feeder_arg() + " " + scen("multiperiod_storage.json") +
                  " --compare-storage --centralized-node 2 --out " + dir.string(),
              dir)
              .code == 0);
  auto j = read_json(dir / "schedule.json");
  const auto& cmp = j["storage_comparison"];
  CHECK(cmp["distributed"]["hosting_total_pu"].get<double>() >= cmp["no_storage"]["hosting_total_pu"].get<double>());
  CHECK(cmp.contains("centralized"));
  for (const auto& b : j["batteries"]) {
    for (double v : b["soc"]) {
      CHECK(v <= 0.3 + 1e-9);
      CHECK(v >= -1e-9);
    }
  }
  const std::string csv = slurp(dir / "schedule.csv");
  CHECK(csv.rfind("step,load_p,battery_discharge,generation\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}

TEST_CASE("cli validate") {
  fs::path dir = scratch("validate");
  REQUIRE(cli("solve " + feeder_arg() + " " + scen("nominal_cost.json") + " --out " + dir.string(), dir).code == 0);
  Run r = cli("validate " + feeder_arg() + " " + scen("nominal_cost.json") + " --dispatch " +
                  (dir / "solution.json").string() + " --out " + (dir / "v").string(),
              dir);
  CHECK(r.code == 0);
  CHECK(read_json(dir / "v" / "validation.json")["validation"]["violation_count"] == 0);

  write(dir / "flood.json", R"({"dispatch": [{"node": 7, "p_pu": 4.0}, {"node": 8, "p_pu": 4.0}]})");
  Run bad = cli("validate " + feeder_arg() + " " + scen("nominal_cost.json") + " --dispatch " +
                    (dir / "flood.json").string() + " --out " + (dir / "w").string(),
                dir);
  CHECK(bad.code == 6);
  CHECK(bad.err.find("voltage_high") != std::string::npos);
}
