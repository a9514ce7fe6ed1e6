#pragma once

// Minimum-cardinality measurement-selection solver. The binary gating of
// bus phasors is realized by variable substitution: an unselected bus is
// never entered as a variable (exact pinning), a selected bus frees both
// magnitude and angle. With the selection fixed, the remaining nonlinear
// system -- zero-injection balance at interior zero-injection buses plus
// the target-line overload -- is solved by projected Levenberg-Marquardt
// with minimum-norm steps from the baseline state.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "sfdi/acpf.hpp"
#include "sfdi/netmodel.hpp"
#include "sfdi/zone.hpp"

namespace sfdi {

// Binary choice per interior zone bus, ordered like AttackZone::interior_buses.
struct SelectionVector {
  std::vector<std::uint8_t> z;

  static SelectionVector none(const AttackZone& zone) {
    SelectionVector s;
    s.z.assign(zone.interior_buses.size(), 0);
    return s;
  }
  static SelectionVector all(const AttackZone& zone) {
    SelectionVector s;
    s.z.assign(zone.interior_buses.size(), 1);
    return s;
  }
  static SelectionVector of(const AttackZone& zone, const std::set<int>& bus_ids) {
    SelectionVector s = none(zone);
    for (std::size_t i = 0; i < zone.interior_buses.size(); ++i)
      if (bus_ids.count(zone.interior_buses[i])) s.z[i] = 1;
    return s;
  }

  std::size_t cardinality() const {
    std::size_t c = 0;
    for (auto b : z) c += b;
    return c;
  }
  std::set<int> selected_bus_ids(const AttackZone& zone) const {
    std::set<int> ids;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i]) ids.insert(zone.interior_buses[i]);
    return ids;
  }
};

enum class SearchStrategy { exact_enumeration, branch_and_prune, greedy };

struct SolverConfig {
  double big_m = 10.0;                       // angle freedom for selected buses, rad
  double angle_limit = std::numbers::pi / 6; // zone-line angle-difference bound, rad
  double eq_tol = 1e-8;                      // equality feasibility tolerance, p.u.
  int lm_max_iter = 200;
  SearchStrategy strategy = SearchStrategy::exact_enumeration;
  double time_budget = 300.0;                // wall-clock cap, s; <= 0 disables
  bool enforce_reactive_overload = true;     // scale Q on the target line too
};

struct InnerSolution {
  VoltageState state;        // full network state; non-selected entries = baseline
  bool feasible = false;
  double residual_norm = 0.0;  // max |equality violation|, p.u.
  int iterations = 0;
};

enum class SolveStatus { optimal, feasible_heuristic, infeasible, budget_exhausted };

inline std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::feasible_heuristic: return "feasible_heuristic";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::budget_exhausted: return "budget_exhausted";
  }
  return "unknown";
}

struct SparseAttackResult {
  SelectionVector selection;
  std::size_t cardinality = 0;
  InnerSolution solution;
  std::size_t subsets_explored = 0;
  SolveStatus status = SolveStatus::infeasible;
};

namespace detail {

// Variable layout for one inner solve: (v, theta) per selected bus.
struct InnerProblem {
  std::vector<int> free_buses;                  // bus ids, ascending
  std::vector<std::size_t> free_index;          // bus index in the network
  std::map<std::size_t, int> var_of_bus_index;  // bus index -> variable pair slot
  std::vector<int> balance_buses;               // interior zero-injection bus ids
  double target_p = 0.0;                        // W-scaled from-end targets
  double target_q = 0.0;
  bool use_q = true;
  Eigen::Index residual_size() const {
    return static_cast<Eigen::Index>(2 * balance_buses.size()) + (use_q ? 2 : 1);
  }
};

inline InnerProblem make_inner_problem(const Network& net, const AttackZone& zone,
                                       const VoltageState& baseline,
                                       const SelectionVector& selection,
                                       const SolverConfig& cfg) {
  InnerProblem prob;
  for (std::size_t i = 0; i < selection.z.size(); ++i) {
    if (!selection.z[i]) continue;
    int id = zone.interior_buses[i];
    prob.free_buses.push_back(id);
    std::size_t idx = net.bus_index(id);
    prob.var_of_bus_index[idx] = static_cast<int>(prob.free_index.size());
    prob.free_index.push_back(idx);
  }
  prob.balance_buses.assign(zone.interior_zero_injection.begin(),
                            zone.interior_zero_injection.end());
  BranchFlow pre = branch_flow(net, net.branches()[zone.target_line], baseline);
  prob.target_p = zone.w_coefficient * pre.p_from;
  prob.target_q = zone.w_coefficient * pre.q_from;
  prob.use_q = cfg.enforce_reactive_overload;
  return prob;
}

inline Eigen::VectorXd inner_residual(const Network& net, const AttackZone& zone,
                                      const InnerProblem& prob, const VoltageState& state) {
  Eigen::VectorXd r(prob.residual_size());
  Eigen::Index row = 0;
  for (int id : prob.balance_buses) {
    PowerPair inj = bus_injection(net, state, net.bus_index(id));
    r[row++] = inj.p;
    r[row++] = inj.q;
  }
  BranchFlow f = branch_flow(net, net.branches()[zone.target_line], state);
  r[row++] = f.p_from - prob.target_p;
  if (prob.use_q) r[row++] = f.q_from - prob.target_q;
  return r;
}

// Jacobian of the equality residuals with respect to the stacked free
// variables (v_0, theta_0, v_1, theta_1, ...).
inline Eigen::MatrixXd inner_jacobian(const Network& net, const AttackZone& zone,
                                      const InnerProblem& prob, const VoltageState& state) {
  const Eigen::Index cols = static_cast<Eigen::Index>(2 * prob.free_index.size());
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(prob.residual_size(), cols);
  auto var_slot = [&](std::size_t bus_index) {
    auto it = prob.var_of_bus_index.find(bus_index);
    return it == prob.var_of_bus_index.end() ? -1 : it->second;
  };
  Eigen::Index row = 0;
  for (int id : prob.balance_buses) {
    const std::size_t bi = net.bus_index(id);
    if (int slot = var_slot(bi); slot >= 0) {
      const Bus& bus = net.buses()[bi];
      const double v = state.v[static_cast<Eigen::Index>(bi)];
      J(row, 2 * slot) += 2.0 * bus.g_shunt * v;
      J(row + 1, 2 * slot) -= 2.0 * bus.b_shunt * v;
    }
    for (const BranchEnd& end : net.incident(bi)) {
      const Branch& br = net.branches()[end.branch];
      const std::size_t fi = net.bus_index(br.from_bus);
      const std::size_t ti = net.bus_index(br.to_bus);
      const int fslot = var_slot(fi);
      const int tslot = var_slot(ti);
      if (fslot < 0 && tslot < 0) continue;
      FlowJacobian Jb = flow_jacobian(net, br, state);
      const int pr = end.at_from ? 0 : 2;  // p_from / p_to row of Jb
      const int qr = end.at_from ? 1 : 3;
      if (fslot >= 0) {
        J(row, 2 * fslot) += Jb(pr, 0);
        J(row, 2 * fslot + 1) += Jb(pr, 2);
        J(row + 1, 2 * fslot) += Jb(qr, 0);
        J(row + 1, 2 * fslot + 1) += Jb(qr, 2);
      }
      if (tslot >= 0) {
        J(row, 2 * tslot) += Jb(pr, 1);
        J(row, 2 * tslot + 1) += Jb(pr, 3);
        J(row + 1, 2 * tslot) += Jb(qr, 1);
        J(row + 1, 2 * tslot + 1) += Jb(qr, 3);
      }
    }
    row += 2;
  }
  {
    const Branch& br = net.branches()[zone.target_line];
    const std::size_t fi = net.bus_index(br.from_bus);
    const std::size_t ti = net.bus_index(br.to_bus);
    FlowJacobian Jb = flow_jacobian(net, br, state);
    const int fslot = var_slot(fi);
    const int tslot = var_slot(ti);
    for (int comp = 0; comp < (prob.use_q ? 2 : 1); ++comp) {
      if (fslot >= 0) {
        J(row + comp, 2 * fslot) += Jb(comp, 0);
        J(row + comp, 2 * fslot + 1) += Jb(comp, 2);
      }
      if (tslot >= 0) {
        J(row + comp, 2 * tslot) += Jb(comp, 1);
        J(row + comp, 2 * tslot + 1) += Jb(comp, 3);
      }
    }
  }
  return J;
}

// Angle-difference bound violations over zone lines: (line, +/-limit).
inline std::vector<std::pair<std::size_t, double>> angle_violations(
    const Network& net, const AttackZone& zone, const VoltageState& state, double limit,
    double slack = 0.0) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k : zone.zone_lines) {
    const Branch& br = net.branches()[k];
    const double d = state.theta[static_cast<Eigen::Index>(net.bus_index(br.from_bus))] -
                     state.theta[static_cast<Eigen::Index>(net.bus_index(br.to_bus))];
    if (d > limit + slack) out.emplace_back(k, limit);
    else if (d < -limit - slack) out.emplace_back(k, -limit);
  }
  return out;
}

}  // namespace detail

// Solves the fixed-selection subproblem. Unselected interior buses and
// boundary buses keep their baseline phasors bit-exactly; selected buses
// move within the voltage box (and +/- big_m around the baseline angle).
// Feasible iff the equality residuals reach eq_tol and every zone-line
// angle difference respects angle_limit.
inline InnerSolution inner_feasibility(const Network& net, const AttackZone& zone,
                                       const VoltageState& baseline,
                                       const SelectionVector& selection,
                                       const SolverConfig& cfg = {}) {
  if (selection.z.size() != zone.interior_buses.size())
    throw ValidationError("selection has " + std::to_string(selection.z.size()) +
                          " entries for " + std::to_string(zone.interior_buses.size()) +
                          " interior buses");
  detail::InnerProblem prob = detail::make_inner_problem(net, zone, baseline, selection, cfg);
  InnerSolution sol;
  sol.state = baseline;

  const Eigen::Index nvar = static_cast<Eigen::Index>(2 * prob.free_index.size());
  Eigen::VectorXd residual = detail::inner_residual(net, zone, prob, sol.state);
  sol.residual_norm = residual.lpNorm<Eigen::Infinity>();

  if (nvar > 0) {
    const double stop_tol = std::min(cfg.eq_tol * 1e-4, 1e-12);
    auto clamp_state = [&](VoltageState& s) {
      for (std::size_t j = 0; j < prob.free_index.size(); ++j) {
        const std::size_t bi = prob.free_index[j];
        const Bus& bus = net.buses()[bi];
        auto ei = static_cast<Eigen::Index>(bi);
        s.v[ei] = std::clamp(s.v[ei], bus.v_min, bus.v_max);
        const double t0 = baseline.theta[ei];
        s.theta[ei] = std::clamp(s.theta[ei], t0 - cfg.big_m, t0 + cfg.big_m);
      }
    };

    // A selected bus must sit inside the voltage box even if the baseline
    // violates it (the box binds only when a bus is manipulated).
    clamp_state(sol.state);

    // Penalty rows for angle-difference bounds, activated when violated.
    std::vector<std::pair<std::size_t, double>> active_bounds;
    constexpr double kPenaltyWeight = 1e3;
    auto augmented = [&](const VoltageState& s) -> Eigen::VectorXd {
      Eigen::VectorXd base = detail::inner_residual(net, zone, prob, s);
      if (active_bounds.empty()) return base;
      Eigen::VectorXd full(base.size() + static_cast<Eigen::Index>(active_bounds.size()));
      full.head(base.size()) = base;
      Eigen::Index row = base.size();
      for (auto [k, limit] : active_bounds) {
        const Branch& br = net.branches()[k];
        const double d =
            s.theta[static_cast<Eigen::Index>(net.bus_index(br.from_bus))] -
            s.theta[static_cast<Eigen::Index>(net.bus_index(br.to_bus))];
        const double excess = limit > 0 ? std::max(0.0, d - limit) : std::min(0.0, d - limit);
        full[row++] = kPenaltyWeight * excess;
      }
      return full;
    };
    auto augmented_jacobian = [&](const VoltageState& s) -> Eigen::MatrixXd {
      Eigen::MatrixXd base = detail::inner_jacobian(net, zone, prob, s);
      if (active_bounds.empty()) return base;
      Eigen::MatrixXd full = Eigen::MatrixXd::Zero(
          base.rows() + static_cast<Eigen::Index>(active_bounds.size()), base.cols());
      full.topRows(base.rows()) = base;
      Eigen::Index row = base.rows();
      for (auto [k, limit] : active_bounds) {
        const Branch& br = net.branches()[k];
        const std::size_t fi = net.bus_index(br.from_bus);
        const std::size_t ti = net.bus_index(br.to_bus);
        const double d = s.theta[static_cast<Eigen::Index>(fi)] -
                         s.theta[static_cast<Eigen::Index>(ti)];
        const bool active = limit > 0 ? d > limit : d < limit;
        if (active) {
          if (auto it = prob.var_of_bus_index.find(fi); it != prob.var_of_bus_index.end())
            full(row, 2 * it->second + 1) = kPenaltyWeight;
          if (auto it = prob.var_of_bus_index.find(ti); it != prob.var_of_bus_index.end())
            full(row, 2 * it->second + 1) = -kPenaltyWeight;
        }
        row++;
      }
      return full;
    };

    for (int round = 0; round < 5; ++round) {
      Eigen::VectorXd f = augmented(sol.state);
      double cost = f.squaredNorm();
      double lambda = 1e-3;
      int iter = 0;
      while (iter < cfg.lm_max_iter) {
        if (f.head(residual.size()).lpNorm<Eigen::Infinity>() <= stop_tol) break;
        Eigen::MatrixXd J = augmented_jacobian(sol.state);
        Eigen::VectorXd g = J.transpose() * f;
        if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;
        Eigen::MatrixXd JtJ = J.transpose() * J;
        bool accepted = false;
        while (lambda <= 1e12) {
          Eigen::MatrixXd A = JtJ;
          A.diagonal().array() += lambda;
          Eigen::VectorXd step = Eigen::LDLT<Eigen::MatrixXd>(A).solve(-g);
          VoltageState trial = sol.state;
          for (std::size_t j = 0; j < prob.free_index.size(); ++j) {
            auto ei = static_cast<Eigen::Index>(prob.free_index[j]);
            trial.v[ei] += step[2 * static_cast<Eigen::Index>(j)];
            trial.theta[ei] += step[2 * static_cast<Eigen::Index>(j) + 1];
          }
          clamp_state(trial);
          Eigen::VectorXd f_trial = augmented(trial);
          const double trial_cost = f_trial.squaredNorm();
          iter++;
          if (trial_cost < cost) {
            sol.state = std::move(trial);
            f = std::move(f_trial);
            cost = trial_cost;
            lambda = std::max(lambda / 10.0, 1e-12);
            accepted = true;
            break;
          }
          lambda *= 10.0;
          if (iter >= cfg.lm_max_iter) break;
        }
        if (!accepted) break;  // stalled: no descent direction at max damping
      }
      sol.iterations += iter;

      auto violations =
          detail::angle_violations(net, zone, sol.state, cfg.angle_limit, 1e-12);
      if (violations.empty()) break;
      bool changed = false;
      for (auto& v : violations) {
        if (std::find(active_bounds.begin(), active_bounds.end(), v) == active_bounds.end()) {
          active_bounds.push_back(v);
          changed = true;
        }
      }
      if (!changed) break;
    }
  }

  residual = detail::inner_residual(net, zone, prob, sol.state);
  sol.residual_norm = residual.lpNorm<Eigen::Infinity>();
  const bool angles_ok =
      detail::angle_violations(net, zone, sol.state, cfg.angle_limit, 1e-9).empty();
  sol.feasible = sol.residual_norm <= cfg.eq_tol && angles_ok;
  return sol;
}

namespace detail {

class SearchClock {
 public:
  explicit SearchClock(double budget_s) : budget_(budget_s) {}
  bool expired() const {
    if (budget_ <= 0.0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() >
           budget_;
  }

 private:
  double budget_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// Ascending-cardinality search for the smallest feasible selection. Because
// freeing more buses never removes solutions, the first feasible selection
// found at cardinality k proves every selection of size < k infeasible, so
// the result is optimal. branch_and_prune additionally discards any prefix
// whose all-ones completion is infeasible; greedy grows the selection by
// largest residual decrease and is only a heuristic.
inline SparseAttackResult solve_sparse(const Network& net, const AttackZone& zone,
                                       const VoltageState& baseline,
                                       const SolverConfig& cfg = {}) {
  const std::size_t n = zone.interior_buses.size();
  SparseAttackResult result;
  detail::SearchClock clock(cfg.time_budget);

  auto attempt = [&](const SelectionVector& sel) -> InnerSolution {
    result.subsets_explored++;
    return inner_feasibility(net, zone, baseline, sel, cfg);
  };

  if (cfg.strategy == SearchStrategy::greedy) {
    SelectionVector sel = SelectionVector::none(zone);
    InnerSolution sol = attempt(sel);
    while (!sol.feasible) {
      if (sel.cardinality() == n) {
        result.selection = sel;
        result.cardinality = n;
        result.solution = sol;
        result.status = SolveStatus::infeasible;
        return result;
      }
      if (clock.expired()) {
        result.status = SolveStatus::budget_exhausted;
        result.selection = sel;
        result.solution = sol;
        return result;
      }
      std::size_t best = n;
      double best_residual = std::numeric_limits<double>::infinity();
      InnerSolution best_sol;
      for (std::size_t i = 0; i < n; ++i) {
        if (sel.z[i]) continue;
        SelectionVector trial = sel;
        trial.z[i] = 1;
        InnerSolution s = attempt(trial);
        if (s.feasible || s.residual_norm < best_residual) {
          best = i;
          best_residual = s.residual_norm;
          best_sol = std::move(s);
          if (best_sol.feasible) break;
        }
      }
      sel.z[best] = 1;
      sol = std::move(best_sol);
    }
    result.selection = sel;
    result.cardinality = sel.cardinality();
    result.solution = sol;
    result.status = SolveStatus::feasible_heuristic;
    return result;
  }

  // Monotonicity pre-check: if even all-ones fails, nothing can succeed.
  {
    InnerSolution all = attempt(SelectionVector::all(zone));
    if (!all.feasible) {
      result.selection = SelectionVector::all(zone);
      result.cardinality = n;
      result.solution = all;
      result.status = SolveStatus::infeasible;
      return result;
    }
  }

  const bool prune = cfg.strategy == SearchStrategy::branch_and_prune;
  std::map<std::vector<std::uint8_t>, bool> completion_cache;
  auto completion_feasible = [&](const SelectionVector& sel, std::size_t next) -> bool {
    SelectionVector full = sel;
    for (std::size_t i = next; i < n; ++i) full.z[i] = 1;
    auto it = completion_cache.find(full.z);
    if (it != completion_cache.end()) return it->second;
    bool ok = attempt(full).feasible;
    completion_cache.emplace(full.z, ok);
    return ok;
  };

  for (std::size_t k = 0; k <= n; ++k) {
    // Lexicographic enumeration of k-subsets over ascending interior bus ids.
    SelectionVector sel = SelectionVector::none(zone);
    SelectionVector found_selection;
    InnerSolution found;
    bool have_found = false;
    bool budget_hit = false;

    auto recurse = [&](auto&& self, std::size_t start, std::size_t remaining) -> void {
      if (have_found || budget_hit) return;
      if (remaining == 0) {
        if (clock.expired()) {
          budget_hit = true;
          return;
        }
        InnerSolution s = attempt(sel);
        if (s.feasible) {
          found = std::move(s);
          found_selection = sel;
          have_found = true;
        }
        return;
      }
      if (n - start < remaining) return;
      if (prune && !completion_feasible(sel, start)) return;
      for (std::size_t i = start; i + remaining <= n && !have_found && !budget_hit; ++i) {
        sel.z[i] = 1;
        self(self, i + 1, remaining - 1);
        sel.z[i] = 0;
      }
    };
    recurse(recurse, 0, k);

    if (have_found) {
      result.selection = std::move(found_selection);
      result.cardinality = k;
      result.solution = std::move(found);
      result.status = SolveStatus::optimal;
      return result;
    }
    if (budget_hit) {
      result.status = SolveStatus::budget_exhausted;
      return result;
    }
  }
  return result;  // unreachable: the all-ones pre-check guarantees success
}

// All-ones selection: every interior bus is manipulated, no minimality claim.
inline SparseAttackResult solve_arbitrary(const Network& net, const AttackZone& zone,
                                          const VoltageState& baseline,
                                          const SolverConfig& cfg = {}) {
  SparseAttackResult result;
  result.selection = SelectionVector::all(zone);
  result.cardinality = result.selection.cardinality();
  result.solution = inner_feasibility(net, zone, baseline, result.selection, cfg);
  result.subsets_explored = 1;
  result.status =
      result.solution.feasible ? SolveStatus::feasible_heuristic : SolveStatus::infeasible;
  return result;
}

}  // namespace sfdi
