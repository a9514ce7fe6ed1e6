#pragma once

// Scenario configuration and end-to-end orchestration:
// parse -> power flow -> zone -> solve -> attack vector -> stealth,
// with CSV/JSON report emission. The CLI is a thin wrapper over this
// header so that command output always equals direct library results.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfdi/acpf.hpp"
#include "sfdi/attack_vector.hpp"
#include "sfdi/netmodel.hpp"
#include "sfdi/sparse_attack.hpp"
#include "sfdi/stealth.hpp"
#include "sfdi/zone.hpp"

namespace sfdi {

using nlohmann::json;

enum class AttackMode { sparse, arbitrary };

struct StealthConfig {
  NoiseSigma sigma{};        // noise used for the noisy stealth verdict
  double tau = 0.0;          // 0: chi-square default
  bool pmu_channels = true;
};

struct ScenarioConfig {
  std::string case_path;
  std::set<int> zone_buses;
  std::set<int> boundary_buses;
  std::pair<int, int> target_line{0, 0};
  double w = 1.0;
  AttackMode mode = AttackMode::sparse;
  SolverConfig solver{};
  StealthConfig stealth{};
  std::string output_dir = ".";
  std::uint64_t seed = 1;
};

inline SearchStrategy strategy_from_string(const std::string& s) {
  if (s == "exact_enumeration") return SearchStrategy::exact_enumeration;
  if (s == "branch_and_prune") return SearchStrategy::branch_and_prune;
  if (s == "greedy") return SearchStrategy::greedy;
  throw ValidationError("unknown strategy '" + s + "'");
}

inline const char* to_string(SearchStrategy s) {
  switch (s) {
    case SearchStrategy::exact_enumeration: return "exact_enumeration";
    case SearchStrategy::branch_and_prune: return "branch_and_prune";
    case SearchStrategy::greedy: return "greedy";
  }
  return "?";
}

inline ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig cfg;
  cfg.case_path = j.at("case_path").get<std::string>();
  for (int id : j.at("zone_buses")) cfg.zone_buses.insert(id);
  for (int id : j.at("boundary_buses")) cfg.boundary_buses.insert(id);
  auto tl = j.at("target_line");
  cfg.target_line = {tl.at(0).get<int>(), tl.at(1).get<int>()};
  cfg.w = j.value("w", 1.0);
  const std::string mode = j.value("mode", "sparse");
  if (mode == "sparse") cfg.mode = AttackMode::sparse;
  else if (mode == "arbitrary") cfg.mode = AttackMode::arbitrary;
  else throw ValidationError("unknown mode '" + mode + "'");
  if (j.contains("solver")) {
    const json& s = j["solver"];
    cfg.solver.big_m = s.value("big_m", cfg.solver.big_m);
    cfg.solver.angle_limit = s.value("angle_limit", cfg.solver.angle_limit);
    cfg.solver.eq_tol = s.value("eq_tol", cfg.solver.eq_tol);
    cfg.solver.lm_max_iter = s.value("lm_max_iter", cfg.solver.lm_max_iter);
    cfg.solver.time_budget = s.value("time_budget", cfg.solver.time_budget);
    cfg.solver.enforce_reactive_overload =
        s.value("enforce_reactive_overload", cfg.solver.enforce_reactive_overload);
    if (s.contains("strategy"))
      cfg.solver.strategy = strategy_from_string(s["strategy"].get<std::string>());
  }
  if (j.contains("stealth")) {
    const json& s = j["stealth"];
    cfg.stealth.sigma.flow = s.value("sigma_flow", cfg.stealth.sigma.flow);
    cfg.stealth.sigma.injection = s.value("sigma_injection", cfg.stealth.sigma.injection);
    cfg.stealth.sigma.v_mag = s.value("sigma_v_mag", cfg.stealth.sigma.v_mag);
    cfg.stealth.sigma.v_ang = s.value("sigma_v_ang", cfg.stealth.sigma.v_ang);
    cfg.stealth.tau = s.value("tau", cfg.stealth.tau);
    cfg.stealth.pmu_channels = s.value("pmu_channels", cfg.stealth.pmu_channels);
  }
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

inline json scenario_to_json(const ScenarioConfig& cfg) {
  json j;
  j["case_path"] = cfg.case_path;
  j["zone_buses"] = cfg.zone_buses;
  j["boundary_buses"] = cfg.boundary_buses;
  j["target_line"] = {cfg.target_line.first, cfg.target_line.second};
  j["w"] = cfg.w;
  j["mode"] = cfg.mode == AttackMode::sparse ? "sparse" : "arbitrary";
  j["solver"] = {{"big_m", cfg.solver.big_m},
                 {"angle_limit", cfg.solver.angle_limit},
                 {"eq_tol", cfg.solver.eq_tol},
                 {"lm_max_iter", cfg.solver.lm_max_iter},
                 {"strategy", to_string(cfg.solver.strategy)},
                 {"time_budget", cfg.solver.time_budget},
                 {"enforce_reactive_overload", cfg.solver.enforce_reactive_overload}};
  j["stealth"] = {{"sigma_flow", cfg.stealth.sigma.flow},
                  {"sigma_injection", cfg.stealth.sigma.injection},
                  {"sigma_v_mag", cfg.stealth.sigma.v_mag},
                  {"sigma_v_ang", cfg.stealth.sigma.v_ang},
                  {"tau", cfg.stealth.tau},
                  {"pmu_channels", cfg.stealth.pmu_channels}};
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  return j;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  json j;
  in >> j;
  return scenario_from_json(j);
}

inline Network load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open case file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_case(buf.str());
}

namespace detail {

inline std::string full(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << content;
}

}  // namespace detail

// --- attack vector serialization ---------------------------------------

inline json attack_vector_to_json(const Network& net, const AttackVector& av) {
  json j;
  j["zone_buses"] = av.zone.zone_buses;
  j["boundary_buses"] = av.zone.boundary_buses;
  const Branch& t = net.branches()[av.zone.target_line];
  j["target_line"] = {{"from", t.from_bus}, {"to", t.to_bus}, {"index", av.zone.target_line}};
  j["w"] = av.zone.w_coefficient;
  json entries = json::array();
  for (const auto& [mid, d] : av.entries) {
    json e;
    e["kind"] = to_string(mid.kind);
    e["location"] = mid.location;
    if (is_flow_kind(mid.kind)) {
      const Branch& br = net.branches()[static_cast<std::size_t>(mid.location)];
      e["from"] = br.from_bus;
      e["to"] = br.to_bus;
    }
    e["before"] = d.before;
    e["after"] = d.after;
    e["delta"] = d.delta();
    entries.push_back(e);
  }
  j["entries"] = entries;
  return j;
}

inline AttackVector attack_vector_from_json(const Network& net, const json& j) {
  AttackVector av;
  std::set<int> zone_buses, boundary;
  for (int id : j.at("zone_buses")) zone_buses.insert(id);
  for (int id : j.at("boundary_buses")) boundary.insert(id);
  av.zone = build_zone(net, zone_buses, boundary, j.at("target_line").at("from").get<int>(),
                       j.at("target_line").at("to").get<int>(), j.at("w").get<double>());
  for (const json& e : j.at("entries")) {
    MeasurementId mid{measurement_kind_from_string(e.at("kind").get<std::string>()),
                      e.at("location").get<int>()};
    if (is_flow_kind(mid.kind)) {
      if (mid.location < 0 || static_cast<std::size_t>(mid.location) >= net.branches().size())
        throw ValidationError("attack vector references branch index " +
                              std::to_string(mid.location));
    } else if (!net.has_bus(mid.location)) {
      throw ValidationError("attack vector references unknown bus " +
                            std::to_string(mid.location));
    }
    av.entries[mid] = {e.at("before").get<double>(), e.at("after").get<double>()};
  }
  return av;
}

inline std::string attack_vector_to_csv(const Network& net, const AttackVector& av) {
  std::ostringstream out;
  out << "kind,location,from_bus,to_bus,baseline,attacked,delta\n";
  for (const auto& [mid, d] : av.entries) {
    out << to_string(mid.kind) << ',' << mid.location << ',';
    if (is_flow_kind(mid.kind)) {
      const Branch& br = net.branches()[static_cast<std::size_t>(mid.location)];
      out << br.from_bus << ',' << br.to_bus;
    } else {
      out << ',';
    }
    out << ',' << detail::full(d.before) << ',' << detail::full(d.after) << ','
        << detail::full(d.delta()) << '\n';
  }
  return out.str();
}

// --- pipeline steps ------------------------------------------------------

struct PipelineRun {
  Network net;
  VoltageState baseline;
  AttackZone zone;
  SparseAttackResult attack;
  AttackVector vector;
  StealthVerdict stealth_noiseless;
  StealthVerdict stealth_noisy;
};

inline std::string power_flow_csv(const Network& net, const VoltageState& state) {
  std::ostringstream out;
  out << "bus_id,v,theta\n";
  for (std::size_t i = 0; i < net.bus_count(); ++i)
    out << net.buses()[i].id << ',' << detail::full(state.v[static_cast<Eigen::Index>(i)])
        << ',' << detail::full(state.theta[static_cast<Eigen::Index>(i)]) << '\n';
  return out.str();
}

inline std::string selection_report_csv(const Network& net, const AttackZone& zone,
                                        const VoltageState& baseline,
                                        const SparseAttackResult& result) {
  const std::set<int> selected = result.selection.selected_bus_ids(zone);
  std::ostringstream out;
  out << "bus_id,role,zero_injection,selected,v_before,v_after,theta_before,theta_after\n";
  for (int id : zone.zone_buses) {
    const auto ei = static_cast<Eigen::Index>(net.bus_index(id));
    const bool boundary = zone.boundary_buses.count(id) != 0;
    const bool zi = zone.interior_zero_injection.count(id) != 0;
    out << id << ',' << (boundary ? "boundary" : "interior") << ',' << (zi ? 1 : 0) << ','
        << (selected.count(id) ? 1 : 0) << ',' << detail::full(baseline.v[ei]) << ','
        << detail::full(result.solution.state.v[ei]) << ','
        << detail::full(baseline.theta[ei]) << ','
        << detail::full(result.solution.state.theta[ei]) << '\n';
  }
  return out.str();
}

// Runs the full pipeline in memory (no files).
inline PipelineRun run_pipeline(const ScenarioConfig& cfg) {
  PipelineRun run{.net = load_case(cfg.case_path),
                  .baseline = {},
                  .zone = {},
                  .attack = {},
                  .vector = {},
                  .stealth_noiseless = {},
                  .stealth_noisy = {}};
  run.baseline = newton_power_flow(run.net).state;
  run.zone = build_zone(run.net, cfg.zone_buses, cfg.boundary_buses, cfg.target_line.first,
                        cfg.target_line.second, cfg.w);
  run.attack = cfg.mode == AttackMode::sparse
                   ? solve_sparse(run.net, run.zone, run.baseline, cfg.solver)
                   : solve_arbitrary(run.net, run.zone, run.baseline, cfg.solver);
  if (run.attack.solution.feasible) {
    run.vector = assemble(run.net, run.zone, run.baseline, run.attack.solution.state);
    StealthOptions noiseless;
    noiseless.pmu_channels = cfg.stealth.pmu_channels;
    noiseless.tau = cfg.stealth.tau;
    noiseless.seed = cfg.seed;
    run.stealth_noiseless = stealth_check(run.net, run.zone, run.baseline,
                                          run.attack.solution.state, noiseless);
    StealthOptions noisy = noiseless;
    noisy.noise = cfg.stealth.sigma;
    run.stealth_noisy =
        stealth_check(run.net, run.zone, run.baseline, run.attack.solution.state, noisy);
  }
  return run;
}

inline json stealth_verdict_json(const StealthVerdict& v) {
  return json{{"pass", v.pass},
              {"residual_clean", v.residual_clean},
              {"residual_attacked", v.residual_attacked},
              {"norm_gap", v.norm_gap},
              {"tau", v.tau},
              {"flagged_clean", v.flagged_clean},
              {"flagged_attacked", v.flagged_attacked}};
}

// Writes the report set for an attack run; returns the metadata document.
inline json write_attack_reports(const ScenarioConfig& cfg, const PipelineRun& run) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  detail::write_file(dir / "power_flow.csv", power_flow_csv(run.net, run.baseline));
  detail::write_file(dir / "selection_report.csv",
                     selection_report_csv(run.net, run.zone, run.baseline, run.attack));
  detail::write_file(dir / "attack_vector.csv", attack_vector_to_csv(run.net, run.vector));
  detail::write_file(dir / "attack_vector.json",
                     attack_vector_to_json(run.net, run.vector).dump(2) + "\n");

  json verdicts{{"noiseless", stealth_verdict_json(run.stealth_noiseless)},
                {"noisy", stealth_verdict_json(run.stealth_noisy)}};
  detail::write_file(dir / "stealth_verdict.json", verdicts.dump(2) + "\n");

  json meta;
  meta["mode"] = cfg.mode == AttackMode::sparse ? "sparse" : "arbitrary";
  meta["status"] = to_string(run.attack.status);
  meta["cardinality"] = run.attack.cardinality;
  meta["subsets_explored"] = run.attack.subsets_explored;
  meta["selected_buses"] = run.attack.selection.selected_bus_ids(run.zone);
  meta["residual_norm"] = run.attack.solution.residual_norm;
  meta["inner_iterations"] = run.attack.solution.iterations;
  meta["config"] = scenario_to_json(cfg);
  detail::write_file(dir / "run_metadata.json", meta.dump(2) + "\n");
  return meta;
}

// --- verification of an emitted attack vector ---------------------------

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool constraints_ok = true;
  bool stealth_ok = true;

  bool all_ok() const { return constraints_ok && stealth_ok; }
};

// Re-checks a previously emitted attack vector without re-solving: the
// attacked state is reconstructed from the phasor deltas, then every
// constraint and the measurement-consistency of the file are validated.
inline VerifyReport verify_attack_file(const Network& net, const AttackVector& av,
                                       const ScenarioConfig& cfg) {
  VerifyReport report;
  const AttackZone& zone = av.zone;
  const VoltageState baseline = newton_power_flow(net).state;
  auto add = [&](const std::string& name, bool pass, const std::string& detail) {
    report.checks.push_back({name, pass, detail});
    if (!pass) report.constraints_ok = false;
  };

  // confinement of the support
  {
    bool ok = true;
    std::string bad;
    for (const auto& [mid, d] : av.entries) {
      bool in_zone = true;
      if (is_flow_kind(mid.kind)) {
        in_zone = std::find(zone.zone_lines.begin(), zone.zone_lines.end(),
                            static_cast<std::size_t>(mid.location)) != zone.zone_lines.end();
      } else if (mid.kind == MeasurementKind::v_mag || mid.kind == MeasurementKind::v_ang) {
        in_zone = zone.is_interior(mid.location);
      } else {
        in_zone = zone.zone_buses.count(mid.location) &&
                  !zone.interior_zero_injection.count(mid.location);
      }
      if (!in_zone) {
        ok = false;
        bad = std::string(to_string(mid.kind)) + "@" + std::to_string(mid.location);
        break;
      }
    }
    add("confinement", ok, ok ? "support inside zone" : "entry outside zone: " + bad);
  }

  // reconstruct the attacked state from phasor deltas
  VoltageState attacked = baseline;
  for (const auto& [mid, d] : av.entries) {
    if (mid.kind != MeasurementKind::v_mag && mid.kind != MeasurementKind::v_ang) continue;
    if (!zone.is_interior(mid.location)) continue;
    const auto ei = static_cast<Eigen::Index>(net.bus_index(mid.location));
    (mid.kind == MeasurementKind::v_mag ? attacked.v[ei] : attacked.theta[ei]) += d.delta();
  }

  // file deltas must equal h(attacked) - h(baseline) entry for entry, and
  // no required entry may be missing
  {
    AttackVector expected = assemble(net, zone, baseline, attacked);
    double worst = 0.0;
    std::string worst_id;
    for (const auto& [mid, d] : expected.entries) {
      double file_delta = 0.0;
      if (auto it = av.entries.find(mid); it != av.entries.end())
        file_delta = it->second.delta();
      const double err = std::abs(file_delta - d.delta());
      if (err > worst) {
        worst = err;
        worst_id = std::string(to_string(mid.kind)) + "@" + std::to_string(mid.location);
      }
    }
    for (const auto& [mid, d] : av.entries) {
      if (expected.entries.count(mid)) continue;
      const double err = std::abs(d.delta());
      if (err > worst) {
        worst = err;
        worst_id =
            std::string(to_string(mid.kind)) + "@" + std::to_string(mid.location) + " (spurious)";
      }
    }
    add("consistency", worst <= 1e-9,
        "max |file - recomputed| = " + detail::full(worst) +
            (worst_id.empty() ? "" : " at " + worst_id));
  }

  // zero-injection balance
  {
    double worst = 0.0;
    int worst_bus = 0;
    for (int id : zone.interior_zero_injection) {
      PowerPair m = injection_mismatch(net, attacked, id);
      const double e = std::max(std::abs(m.p), std::abs(m.q));
      if (e > worst) {
        worst = e;
        worst_bus = id;
      }
    }
    add("zero_injection_balance", worst <= cfg.solver.eq_tol,
        "max violation " + detail::full(worst) + " at bus " + std::to_string(worst_bus));
  }

  // overload target
  {
    BranchFlow pre = branch_flow(net, net.branches()[zone.target_line], baseline);
    BranchFlow post = branch_flow(net, net.branches()[zone.target_line], attacked);
    const double p_err = std::abs(post.p_from - zone.w_coefficient * pre.p_from);
    const double q_err = std::abs(post.q_from - zone.w_coefficient * pre.q_from);
    const bool ok = p_err <= 1e-6 && (!cfg.solver.enforce_reactive_overload || q_err <= 1e-6);
    add("overload", ok,
        "|P - W*P_pre| = " + detail::full(p_err) + ", |Q - W*Q_pre| = " + detail::full(q_err));
  }

  // angle-difference bounds
  {
    double worst = 0.0;
    for (std::size_t k : zone.zone_lines) {
      const Branch& br = net.branches()[k];
      const double d =
          std::abs(attacked.theta[static_cast<Eigen::Index>(net.bus_index(br.from_bus))] -
                   attacked.theta[static_cast<Eigen::Index>(net.bus_index(br.to_bus))]);
      worst = std::max(worst, d);
    }
    add("angle_bounds", worst <= cfg.solver.angle_limit + 1e-9,
        "max |theta_lm| = " + detail::full(worst));
  }

  // stealth
  {
    StealthOptions opt;
    opt.pmu_channels = cfg.stealth.pmu_channels;
    opt.tau = cfg.stealth.tau;
    opt.seed = cfg.seed;
    StealthVerdict v = stealth_check(net, zone, baseline, attacked, opt);
    report.stealth_ok = v.pass;
    report.checks.push_back(
        {"stealth", v.pass, "norm gap " + detail::full(v.norm_gap)});
  }
  return report;
}

}  // namespace sfdi
