#include "sfdi/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace sfdi;
namespace st = sfdi::testing;
namespace fs = std::filesystem;

namespace {

ScenarioConfig scenario_config(const std::string& out_dir, const std::string& mode = "sparse") {
  ScenarioConfig cfg;
  cfg.case_path = st::data_path("pglib_opf_case57_ieee.m");
  cfg.zone_buses = st::scenario_zone_buses();
  cfg.boundary_buses = st::scenario_boundary();
  cfg.target_line = {23, 24};
  cfg.w = 3.0;
  cfg.mode = mode == "sparse" ? AttackMode::sparse : AttackMode::arbitrary;
  cfg.output_dir = out_dir;
  cfg.seed = 1;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("sfdi_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return st::read_file(p.string()); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SFDI_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(ScenarioConfig, JsonRoundTrip) {
  ScenarioConfig cfg = scenario_config("/tmp/x");
  cfg.solver.strategy = SearchStrategy::branch_and_prune;
  cfg.solver.eq_tol = 1e-9;
  cfg.stealth.pmu_channels = false;
  ScenarioConfig back = scenario_from_json(scenario_to_json(cfg));
  EXPECT_EQ(back.case_path, cfg.case_path);
  EXPECT_EQ(back.zone_buses, cfg.zone_buses);
  EXPECT_EQ(back.boundary_buses, cfg.boundary_buses);
  EXPECT_EQ(back.target_line, cfg.target_line);
  EXPECT_EQ(back.mode, cfg.mode);
  EXPECT_EQ(back.solver.strategy, cfg.solver.strategy);
  EXPECT_DOUBLE_EQ(back.solver.eq_tol, cfg.solver.eq_tol);
  EXPECT_EQ(back.stealth.pmu_channels, cfg.stealth.pmu_channels);
  EXPECT_EQ(back.seed, cfg.seed);
}

TEST(ScenarioConfig, ShippedScenarioFilesLoad) {
  const fs::path root = fs::path(SFDI_DATA_DIR).parent_path().parent_path();
  for (const char* name : {"ieee57_sparse.json", "ieee57_arbitrary.json"}) {
    ScenarioConfig cfg = load_scenario((root / "scenarios" / name).string());
    EXPECT_EQ(cfg.zone_buses.size(), 21u);
    EXPECT_EQ(cfg.boundary_buses, st::scenario_boundary());
    EXPECT_DOUBLE_EQ(cfg.w, 3.0);
    // the configs point at the bundled case, relative to the repo root
    EXPECT_TRUE(fs::exists(root / cfg.case_path)) << cfg.case_path;
  }
}

TEST(ScenarioConfig, DefaultsApplied) {
  json j = {{"case_path", "x.m"},
            {"zone_buses", {1, 2}},
            {"boundary_buses", {1}},
            {"target_line", {1, 2}}};
  ScenarioConfig cfg = scenario_from_json(j);
  EXPECT_DOUBLE_EQ(cfg.w, 1.0);
  EXPECT_EQ(cfg.mode, AttackMode::sparse);
  EXPECT_DOUBLE_EQ(cfg.solver.eq_tol, 1e-8);
  EXPECT_TRUE(cfg.solver.enforce_reactive_overload);
  EXPECT_TRUE(cfg.stealth.pmu_channels);
}

TEST(Pipeline, RunEqualsDirectLibraryCalls) {
  ScenarioConfig cfg = scenario_config(fresh_dir("direct").string());
  PipelineRun run = run_pipeline(cfg);

  const Network net = load_case(cfg.case_path);
  const VoltageState baseline = newton_power_flow(net).state;
  AttackZone zone = build_zone(net, cfg.zone_buses, cfg.boundary_buses, 23, 24, cfg.w);
  SparseAttackResult direct = solve_sparse(net, zone, baseline, cfg.solver);

  EXPECT_EQ(run.attack.selection.z, direct.selection.z);
  EXPECT_EQ(run.attack.subsets_explored, direct.subsets_explored);
  EXPECT_TRUE(run.attack.solution.state.v == direct.solution.state.v);
  EXPECT_TRUE(run.attack.solution.state.theta == direct.solution.state.theta);
}

TEST(Pipeline, ReportsAreByteIdenticalAcrossRuns) {
  fs::path dir1 = fresh_dir("repro1");
  fs::path dir2 = fresh_dir("repro2");
  ScenarioConfig cfg1 = scenario_config(dir1.string());
  ScenarioConfig cfg2 = scenario_config(dir2.string());
  write_attack_reports(cfg1, run_pipeline(cfg1));
  write_attack_reports(cfg2, run_pipeline(cfg2));
  for (const char* name : {"power_flow.csv", "selection_report.csv", "attack_vector.csv",
                           "attack_vector.json", "stealth_verdict.json"}) {
    EXPECT_EQ(slurp(dir1 / name), slurp(dir2 / name)) << name;
  }
  // metadata differs only in output_dir inside the config echo; normalize it
  json m1 = json::parse(slurp(dir1 / "run_metadata.json"));
  json m2 = json::parse(slurp(dir2 / "run_metadata.json"));
  m1["config"]["output_dir"] = m2["config"]["output_dir"] = "";
  EXPECT_EQ(m1.dump(), m2.dump());
}

TEST(Pipeline, SelectionReportLayout) {
  fs::path dir = fresh_dir("layout");
  ScenarioConfig cfg = scenario_config(dir.string());
  PipelineRun run = run_pipeline(cfg);
  write_attack_reports(cfg, run);
  std::ifstream in(dir / "selection_report.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header,
            "bus_id,role,zero_injection,selected,v_before,v_after,theta_before,theta_after");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows++;
  EXPECT_EQ(rows, st::scenario_zone_buses().size());
}

TEST(Pipeline, AttackVectorJsonRoundTrip) {
  fs::path dir = fresh_dir("avjson");
  ScenarioConfig cfg = scenario_config(dir.string());
  PipelineRun run = run_pipeline(cfg);
  json j = attack_vector_to_json(run.net, run.vector);
  AttackVector back = attack_vector_from_json(run.net, json::parse(j.dump()));
  ASSERT_EQ(back.entries.size(), run.vector.entries.size());
  auto it = run.vector.entries.begin();
  for (const auto& [mid, d] : back.entries) {
    EXPECT_EQ(mid, it->first);
    EXPECT_EQ(d.before, it->second.before);  // bit-exact through JSON
    EXPECT_EQ(d.after, it->second.after);
    ++it;
  }
}

TEST(Pipeline, VerifyAcceptsOwnOutput) {
  ScenarioConfig cfg = scenario_config(fresh_dir("verify").string());
  PipelineRun run = run_pipeline(cfg);
  json j = attack_vector_to_json(run.net, run.vector);
  AttackVector av = attack_vector_from_json(run.net, j);
  VerifyReport report = verify_attack_file(run.net, av, cfg);
  for (const auto& check : report.checks) EXPECT_TRUE(check.pass) << check.name;
  EXPECT_TRUE(report.all_ok());
}

TEST(Pipeline, VerifyCatchesTamperedFlowDelta) {
  ScenarioConfig cfg = scenario_config(fresh_dir("tamper").string());
  PipelineRun run = run_pipeline(cfg);
  AttackVector av = run.vector;
  for (auto& [mid, d] : av.entries) {
    if (is_flow_kind(mid.kind)) {
      d.after += 1e-3;
      break;
    }
  }
  VerifyReport report = verify_attack_file(run.net, av, cfg);
  EXPECT_FALSE(report.all_ok());
  bool consistency_failed = false;
  for (const auto& check : report.checks)
    if (check.name == "consistency" && !check.pass) consistency_failed = true;
  EXPECT_TRUE(consistency_failed);
}

TEST(Pipeline, VerifyRejectsEmptyVectorForOverloadGoal) {
  ScenarioConfig cfg = scenario_config(fresh_dir("empty").string());
  PipelineRun run = run_pipeline(cfg);
  AttackVector av = run.vector;
  av.entries.clear();
  VerifyReport report = verify_attack_file(run.net, av, cfg);
  bool overload_failed = false;
  for (const auto& check : report.checks)
    if (check.name == "overload" && !check.pass) overload_failed = true;
  EXPECT_TRUE(overload_failed);
}

// --- CLI end-to-end -------------------------------------------------------

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fresh_dir("cli");
    config_path_ = (dir_ / "scenario.json").string();
    ScenarioConfig cfg = scenario_config((dir_ / "out").string());
    std::ofstream out(config_path_);
    out << scenario_to_json(cfg).dump(2);
  }
  fs::path dir_;
  std::string config_path_;
};

TEST_F(CliTest, PowerFlowCommand) {
  EXPECT_EQ(run_cli("pf --config " + config_path_), 0);
  std::ifstream in(dir_ / "out" / "power_flow.csv");
  ASSERT_TRUE(in.good());
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines++;
  EXPECT_EQ(lines, 58u);  // header + 57 buses
}

TEST_F(CliTest, AttackVerifyPipeline) {
  EXPECT_EQ(run_cli("attack --config " + config_path_), 0);
  const fs::path vector_path = dir_ / "out" / "attack_vector.json";
  ASSERT_TRUE(fs::exists(vector_path));
  EXPECT_EQ(run_cli("verify " + vector_path.string() + " --config " + config_path_), 0);

  // CLI output equals a direct library run
  fs::path lib_dir = fresh_dir("cli_lib");
  ScenarioConfig cfg = scenario_config(lib_dir.string());
  write_attack_reports(cfg, run_pipeline(cfg));
  EXPECT_EQ(slurp(vector_path), slurp(lib_dir / "attack_vector.json"));
  EXPECT_EQ(slurp(dir_ / "out" / "selection_report.csv"),
            slurp(lib_dir / "selection_report.csv"));
}

TEST_F(CliTest, FlagOverridesConfig) {
  // arbitrary mode selects all 17 interior buses
  EXPECT_EQ(run_cli("attack --config " + config_path_ + " --mode arbitrary"), 0);
  json meta = json::parse(slurp(dir_ / "out" / "run_metadata.json"));
  EXPECT_EQ(meta["cardinality"].get<std::size_t>(), 17u);
  EXPECT_EQ(meta["status"].get<std::string>(), "feasible_heuristic");
}

TEST_F(CliTest, MissingCaseFileGivesInputErrorExit) {
  EXPECT_EQ(run_cli("pf --config " + config_path_ + " --case /nonexistent.m"), 4);
}

TEST_F(CliTest, InfeasibleScenarioGivesDedicatedExit) {
  EXPECT_EQ(run_cli("attack --config " + config_path_ + " --angle-limit 1e-4"), 2);
}

TEST_F(CliTest, NonConvergentCaseGivesConvergenceExit) {
  const fs::path bad_case = dir_ / "bad.m";
  std::string text = st::two_bus_case_text();
  auto pos = text.find("2 1 50 20");
  text.replace(pos, 9, "2 1 9e4 9");
  std::ofstream out(bad_case);
  out << text;
  out.close();
  EXPECT_EQ(run_cli("pf --config " + config_path_ + " --case " + bad_case.string()), 5);
}
