// Command-line front end for the sparse FDI attack pipeline.
//
// Subcommands:
//   pf      solve the pre-attack power flow and write per-bus voltages
//   attack  run the full pipeline and emit selection/vector/stealth reports
//   verify  re-check a previously emitted attack vector without re-solving
//
// Exit codes: 0 success (stealth pass), 2 infeasible / violated constraint,
// 3 stealth failure, 4 input error, 5 convergence error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfdi/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitStealthFail = 3;
constexpr int kExitInputError = 4;
constexpr int kExitConvergence = 5;

struct Overrides {
  std::optional<std::string> case_path;
  std::vector<int> zone_buses;
  std::vector<int> boundary_buses;
  std::vector<int> target_line;
  std::optional<double> w;
  std::optional<std::string> mode;
  std::optional<std::string> strategy;
  std::optional<double> eq_tol;
  std::optional<double> big_m;
  std::optional<double> angle_limit;
  std::optional<int> lm_max_iter;
  std::optional<double> time_budget;
  std::optional<bool> reactive_overload;
  std::optional<double> tau;
  std::optional<bool> pmu;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--case", ov.case_path, "MATPOWER case file (overrides config)");
  cmd->add_option("--zone", ov.zone_buses, "zone bus ids");
  cmd->add_option("--boundary", ov.boundary_buses, "boundary bus ids");
  cmd->add_option("--target", ov.target_line, "target line as two bus ids")->expected(2);
  cmd->add_option("--w", ov.w, "overload coefficient W");
  cmd->add_option("--mode", ov.mode, "sparse|arbitrary");
  cmd->add_option("--strategy", ov.strategy,
                  "exact_enumeration|branch_and_prune|greedy");
  cmd->add_option("--eq-tol", ov.eq_tol, "equality feasibility tolerance, p.u.");
  cmd->add_option("--big-m", ov.big_m, "angle freedom for selected buses, rad");
  cmd->add_option("--angle-limit", ov.angle_limit, "zone-line angle bound, rad");
  cmd->add_option("--lm-max-iter", ov.lm_max_iter, "inner solver iteration cap");
  cmd->add_option("--time-budget", ov.time_budget, "search wall-clock cap, s");
  cmd->add_option("--reactive-overload", ov.reactive_overload,
                  "also scale Q on the target line (default from config)");
  cmd->add_option("--tau", ov.tau, "bad-data threshold (0 = chi-square default)");
  cmd->add_option("--pmu", ov.pmu, "include angle channels in the estimator");
  cmd->add_option("--output-dir", ov.output_dir, "report directory");
  cmd->add_option("--seed", ov.seed, "noise seed");
}

sfdi::ScenarioConfig merge(const std::string& config_path, const Overrides& ov) {
  sfdi::ScenarioConfig cfg = sfdi::load_scenario(config_path);
  if (ov.case_path) cfg.case_path = *ov.case_path;
  if (!ov.zone_buses.empty()) cfg.zone_buses = {ov.zone_buses.begin(), ov.zone_buses.end()};
  if (!ov.boundary_buses.empty())
    cfg.boundary_buses = {ov.boundary_buses.begin(), ov.boundary_buses.end()};
  if (!ov.target_line.empty()) cfg.target_line = {ov.target_line[0], ov.target_line[1]};
  if (ov.w) cfg.w = *ov.w;
  if (ov.mode)
    cfg.mode = *ov.mode == "arbitrary" ? sfdi::AttackMode::arbitrary : sfdi::AttackMode::sparse;
  if (ov.strategy) cfg.solver.strategy = sfdi::strategy_from_string(*ov.strategy);
  if (ov.eq_tol) cfg.solver.eq_tol = *ov.eq_tol;
  if (ov.big_m) cfg.solver.big_m = *ov.big_m;
  if (ov.angle_limit) cfg.solver.angle_limit = *ov.angle_limit;
  if (ov.lm_max_iter) cfg.solver.lm_max_iter = *ov.lm_max_iter;
  if (ov.time_budget) cfg.solver.time_budget = *ov.time_budget;
  if (ov.reactive_overload) cfg.solver.enforce_reactive_overload = *ov.reactive_overload;
  if (ov.tau) cfg.stealth.tau = *ov.tau;
  if (ov.pmu) cfg.stealth.pmu_channels = *ov.pmu;
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (ov.seed) cfg.seed = *ov.seed;
  return cfg;
}

int cmd_pf(const sfdi::ScenarioConfig& cfg) {
  sfdi::Network net = sfdi::load_case(cfg.case_path);
  sfdi::PowerFlowResult pf = sfdi::newton_power_flow(net);
  std::filesystem::create_directories(cfg.output_dir);
  const auto out = std::filesystem::path(cfg.output_dir) / "power_flow.csv";
  sfdi::detail::write_file(out, sfdi::power_flow_csv(net, pf.state));
  std::printf("power flow converged in %d iterations, max mismatch %.3e p.u.\n",
              pf.iterations, pf.max_mismatch);
  std::printf("wrote %s (%zu buses)\n", out.string().c_str(), net.bus_count());
  return kExitOk;
}

int cmd_attack(const sfdi::ScenarioConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  sfdi::PipelineRun run = sfdi::run_pipeline(cfg);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!run.attack.solution.feasible) {
    std::printf("attack infeasible: status=%s residual=%.3e (explored %zu subsets)\n",
                sfdi::to_string(run.attack.status).c_str(),
                run.attack.solution.residual_norm, run.attack.subsets_explored);
    return kExitInfeasible;
  }
  sfdi::write_attack_reports(cfg, run);

  std::printf("status: %s, cardinality %zu of %zu interior buses, %zu subsets explored\n",
              sfdi::to_string(run.attack.status).c_str(), run.attack.cardinality,
              run.zone.interior_buses.size(), run.attack.subsets_explored);
  std::printf("selected buses:");
  for (int id : run.attack.selection.selected_bus_ids(run.zone)) std::printf(" %d", id);
  std::printf("\n");
  std::printf("%-6s %-9s %10s %10s %12s %12s\n", "bus", "role", "V before", "V after",
              "theta before", "theta after");
  for (int id : run.zone.zone_buses) {
    const auto ei = static_cast<Eigen::Index>(run.net.bus_index(id));
    std::printf("%-6d %-9s %10.4f %10.4f %12.4f %12.4f\n", id,
                run.zone.boundary_buses.count(id) ? "boundary" : "interior",
                run.baseline.v[ei], run.attack.solution.state.v[ei], run.baseline.theta[ei],
                run.attack.solution.state.theta[ei]);
  }
  const sfdi::Branch& t = run.net.branches()[run.zone.target_line];
  sfdi::BranchFlow pre = sfdi::branch_flow(run.net, t, run.baseline);
  sfdi::BranchFlow post = sfdi::branch_flow(run.net, t, run.attack.solution.state);
  std::printf("target line %d-%d: P %.4f -> %.4f (x%.3f), Q %.4f -> %.4f\n", t.from_bus,
              t.to_bus, pre.p_from, post.p_from, post.p_from / pre.p_from, pre.q_from,
              post.q_from);
  std::printf("attack vector entries: %zu\n", run.vector.entries.size());
  std::printf("stealth (noiseless): %s, |r_attack - r_clean| = %.3e\n",
              run.stealth_noiseless.pass ? "pass" : "FAIL", run.stealth_noiseless.norm_gap);
  std::printf("stealth (noisy):     %s, r_clean=%.4f r_attack=%.4f tau=%.4f\n",
              run.stealth_noisy.pass ? "pass" : "FAIL", run.stealth_noisy.residual_clean,
              run.stealth_noisy.residual_attacked, run.stealth_noisy.tau);
  std::printf("reports written to %s (%.2f s)\n", cfg.output_dir.c_str(), elapsed);

  if (!run.stealth_noiseless.pass || !run.stealth_noisy.pass) return kExitStealthFail;
  return kExitOk;
}

int cmd_verify(const std::string& attack_path, const sfdi::ScenarioConfig& cfg) {
  sfdi::Network net = sfdi::load_case(cfg.case_path);
  std::ifstream in(attack_path);
  if (!in) throw sfdi::ValidationError("cannot open attack file '" + attack_path + "'");
  sfdi::json j;
  in >> j;
  sfdi::AttackVector av = sfdi::attack_vector_from_json(net, j);
  sfdi::VerifyReport report = sfdi::verify_attack_file(net, av, cfg);
  for (const auto& check : report.checks)
    std::printf("%-24s %s  %s\n", check.name.c_str(), check.pass ? "pass" : "FAIL",
                check.detail.c_str());
  if (!report.constraints_ok) return kExitInfeasible;
  if (!report.stealth_ok) return kExitStealthFail;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse AC false-data-injection attack designer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string attack_path;
  Overrides ov;

  CLI::App* pf = app.add_subcommand("pf", "pre-attack power flow");
  pf->add_option("--config", config_path, "scenario config JSON")->required();
  add_override_flags(pf, ov);

  CLI::App* attack = app.add_subcommand("attack", "design the attack");
  attack->add_option("--config", config_path, "scenario config JSON")->required();
  add_override_flags(attack, ov);

  CLI::App* verify = app.add_subcommand("verify", "re-check an emitted attack vector");
  verify->add_option("attack_file", attack_path, "attack_vector.json path")->required();
  verify->add_option("--config", config_path, "scenario config JSON")->required();
  add_override_flags(verify, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    const sfdi::ScenarioConfig cfg = merge(config_path, ov);
    if (pf->parsed()) return cmd_pf(cfg);
    if (attack->parsed()) return cmd_attack(cfg);
    return cmd_verify(attack_path, cfg);
  } catch (const sfdi::ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInputError;
  }
}
