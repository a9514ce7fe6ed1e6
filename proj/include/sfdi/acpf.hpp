#pragma once

// Nonlinear branch-flow / injection-balance evaluation with analytic
// Jacobians, and the Newton-Raphson power flow that produces the
// pre-attack operating point.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfdi/netmodel.hpp"

namespace sfdi {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularJacobianError : public ConvergenceError {
 public:
  using ConvergenceError::ConvergenceError;
};

// Per-bus voltage magnitude (p.u.) and angle (rad), indexed like Network::buses.
struct VoltageState {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;

  static VoltageState flat(const Network& net) {
    VoltageState s;
    const auto n = static_cast<Eigen::Index>(net.bus_count());
    s.v = Eigen::VectorXd::Ones(n);
    s.theta = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Bus& b = net.buses()[static_cast<std::size_t>(i)];
      if (b.kind != BusKind::pq) s.v[i] = net.v_setpoint_at(static_cast<std::size_t>(i));
    }
    return s;
  }

  // Stored case-file voltages, shifted so the slack angle is zero.
  static VoltageState from_stored(const Network& net) {
    VoltageState s;
    const auto n = static_cast<Eigen::Index>(net.bus_count());
    s.v.resize(n);
    s.theta.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Bus& b = net.buses()[static_cast<std::size_t>(i)];
      s.v[i] = b.v_init > 0.0 ? b.v_init : 1.0;
      s.theta[i] = b.theta_init;
    }
    s.theta.array() -= s.theta[static_cast<Eigen::Index>(net.slack_index())];
    return s;
  }
};

// Sending- and receiving-end branch flows, p.u.
struct BranchFlow {
  double p_from = 0.0;
  double q_from = 0.0;
  double p_to = 0.0;
  double q_to = 0.0;
};

// Pi-model flows for one branch given endpoint voltages. With tap = 1 and
// shift = 0 these are the textbook polar branch-flow equations.
inline BranchFlow branch_flow_values(const Branch& br, double v_from, double theta_from,
                                     double v_to, double theta_to) {
  const double g = br.g_series();
  const double b = br.b_series();
  const double bc2 = br.b_charging / 2.0;
  const double a = br.tap;
  const double d = theta_from - theta_to - br.shift;
  const double c = std::cos(d);
  const double s = std::sin(d);
  const double vv = v_from * v_to / a;

  BranchFlow f;
  f.p_from = g * v_from * v_from / (a * a) - vv * (g * c + b * s);
  f.q_from = -(b + bc2) * v_from * v_from / (a * a) - vv * (g * s - b * c);
  f.p_to = g * v_to * v_to - vv * (g * c - b * s);
  f.q_to = -(b + bc2) * v_to * v_to + vv * (b * c + g * s);
  return f;
}

inline BranchFlow branch_flow(const Network& net, const Branch& br,
                              const VoltageState& state) {
  const auto i = static_cast<Eigen::Index>(net.bus_index(br.from_bus));
  const auto j = static_cast<Eigen::Index>(net.bus_index(br.to_bus));
  return branch_flow_values(br, state.v[i], state.theta[i], state.v[j], state.theta[j]);
}

// Partials of {p_from, q_from, p_to, q_to} (rows) with respect to
// {v_from, v_to, theta_from, theta_to} (columns).
using FlowJacobian = Eigen::Matrix4d;

inline FlowJacobian flow_jacobian_values(const Branch& br, double v_from, double theta_from,
                                         double v_to, double theta_to) {
  const double g = br.g_series();
  const double b = br.b_series();
  const double bc2 = br.b_charging / 2.0;
  const double a = br.tap;
  const double d = theta_from - theta_to - br.shift;
  const double c = std::cos(d);
  const double s = std::sin(d);
  const double vv = v_from * v_to / a;

  FlowJacobian J;
  // p_from
  J(0, 0) = 2.0 * g * v_from / (a * a) - (v_to / a) * (g * c + b * s);
  J(0, 1) = -(v_from / a) * (g * c + b * s);
  J(0, 2) = vv * (g * s - b * c);
  J(0, 3) = -J(0, 2);
  // q_from
  J(1, 0) = -2.0 * (b + bc2) * v_from / (a * a) - (v_to / a) * (g * s - b * c);
  J(1, 1) = -(v_from / a) * (g * s - b * c);
  J(1, 2) = -vv * (g * c + b * s);
  J(1, 3) = -J(1, 2);
  // p_to
  J(2, 0) = -(v_to / a) * (g * c - b * s);
  J(2, 1) = 2.0 * g * v_to - (v_from / a) * (g * c - b * s);
  J(2, 2) = vv * (g * s + b * c);
  J(2, 3) = -J(2, 2);
  // q_to
  J(3, 0) = (v_to / a) * (b * c + g * s);
  J(3, 1) = -2.0 * (b + bc2) * v_to + (v_from / a) * (b * c + g * s);
  J(3, 2) = vv * (g * c - b * s);
  J(3, 3) = -J(3, 2);
  return J;
}

inline FlowJacobian flow_jacobian(const Network& net, const Branch& br,
                                  const VoltageState& state) {
  const auto i = static_cast<Eigen::Index>(net.bus_index(br.from_bus));
  const auto j = static_cast<Eigen::Index>(net.bus_index(br.to_bus));
  return flow_jacobian_values(br, state.v[i], state.theta[i], state.v[j], state.theta[j]);
}

struct PowerPair {
  double p = 0.0;
  double q = 0.0;
};

// Network-side injection at a bus: shunt consumption plus the sum of flows
// into incident in-service branches. Equals P_G - P_D / Q_G - Q_D at a
// solved operating point, and zero at a zero-injection bus.
inline PowerPair bus_injection(const Network& net, const VoltageState& state,
                               std::size_t index) {
  const Bus& bus = net.buses()[index];
  const double v = state.v[static_cast<Eigen::Index>(index)];
  PowerPair inj{bus.g_shunt * v * v, -bus.b_shunt * v * v};
  for (const BranchEnd& end : net.incident(index)) {
    BranchFlow f = branch_flow(net, net.branches()[end.branch], state);
    inj.p += end.at_from ? f.p_from : f.p_to;
    inj.q += end.at_from ? f.q_from : f.q_to;
  }
  return inj;
}

// Power-balance residual (Delta p, Delta q) at a bus, p.u.
inline PowerPair injection_mismatch(const Network& net, const VoltageState& state,
                                    int bus_id) {
  const std::size_t i = net.bus_index(bus_id);
  const Bus& bus = net.buses()[i];
  PowerPair inj = bus_injection(net, state, i);
  return {inj.p - (net.p_gen_at(i) - bus.p_demand),
          inj.q - (net.q_gen_at(i) - bus.q_demand)};
}

struct PowerFlowOptions {
  double tol = 1e-10;          // max |mismatch|, p.u.
  int max_iter = 30;
  int max_step_halvings = 10;
  bool enforce_q_limits = false;
  bool use_stored_start = true;
};

struct PowerFlowResult {
  VoltageState state;
  int iterations = 0;
  double max_mismatch = 0.0;
};

namespace detail {

struct NewtonVariables {
  // variable slots: theta for every non-slack bus, v for every PQ bus
  std::vector<int> theta_var;  // bus index -> column, -1 if fixed
  std::vector<int> v_var;
  Eigen::Index count = 0;
};

inline NewtonVariables newton_variables(const Network& net,
                                        const std::vector<BusKind>& kinds) {
  NewtonVariables vars;
  const std::size_t n = net.bus_count();
  vars.theta_var.assign(n, -1);
  vars.v_var.assign(n, -1);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (kinds[i] != BusKind::slack) vars.theta_var[i] = static_cast<int>(col++);
  for (std::size_t i = 0; i < n; ++i)
    if (kinds[i] == BusKind::pq) vars.v_var[i] = static_cast<int>(col++);
  vars.count = col;
  return vars;
}

// Mismatch rows: P balance at non-slack buses, then Q balance at PQ buses.
inline Eigen::VectorXd newton_mismatch(const Network& net, const VoltageState& state,
                                       const std::vector<BusKind>& kinds,
                                       const std::vector<double>& q_target) {
  const std::size_t n = net.bus_count();
  std::vector<double> p_acc(n), q_acc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Bus& bus = net.buses()[i];
    const double v = state.v[static_cast<Eigen::Index>(i)];
    p_acc[i] = bus.g_shunt * v * v - (net.p_gen_at(i) - bus.p_demand);
    q_acc[i] = -bus.b_shunt * v * v - q_target[i];
  }
  for (std::size_t k = 0; k < net.branches().size(); ++k) {
    const Branch& br = net.branches()[k];
    if (!br.status) continue;
    BranchFlow f = branch_flow(net, br, state);
    const std::size_t fi = net.bus_index(br.from_bus);
    const std::size_t ti = net.bus_index(br.to_bus);
    p_acc[fi] += f.p_from;
    q_acc[fi] += f.q_from;
    p_acc[ti] += f.p_to;
    q_acc[ti] += f.q_to;
  }
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (kinds[i] != BusKind::slack) rows++;
    if (kinds[i] == BusKind::pq) rows++;
  }
  Eigen::VectorXd m(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (kinds[i] != BusKind::slack) m[r++] = p_acc[i];
  for (std::size_t i = 0; i < n; ++i)
    if (kinds[i] == BusKind::pq) m[r++] = q_acc[i];
  return m;
}

}  // namespace detail

// Full-Jacobian polar Newton-Raphson power flow. PV magnitudes stay pinned
// to their setpoints (optional PV->PQ switching on reactive limits), the
// slack angle stays at zero, and the iteration halves its step when the
// mismatch norm fails to decrease.
inline PowerFlowResult newton_power_flow(const Network& net, const PowerFlowOptions& opt = {}) {
  const std::size_t n = net.bus_count();
  std::vector<BusKind> kinds(n);
  for (std::size_t i = 0; i < n; ++i) kinds[i] = net.buses()[i].kind;

  VoltageState state =
      opt.use_stored_start ? VoltageState::from_stored(net) : VoltageState::flat(net);
  for (std::size_t i = 0; i < n; ++i)
    if (kinds[i] != BusKind::pq)
      state.v[static_cast<Eigen::Index>(i)] = net.v_setpoint_at(i);
  state.theta[static_cast<Eigen::Index>(net.slack_index())] = 0.0;

  // Scheduled reactive injection per bus; updated if a PV bus hits a limit.
  std::vector<double> q_target(n);
  auto reset_q_targets = [&] {
    for (std::size_t i = 0; i < n; ++i)
      q_target[i] = net.q_gen_at(i) - net.buses()[i].q_demand;
  };
  reset_q_targets();

  int total_iterations = 0;
  for (int outer = 0;; ++outer) {
    detail::NewtonVariables vars = detail::newton_variables(net, kinds);
    Eigen::VectorXd mismatch = detail::newton_mismatch(net, state, kinds, q_target);
    double norm = mismatch.lpNorm<Eigen::Infinity>();

    int iter = 0;
    while (norm > opt.tol) {
      if (iter >= opt.max_iter)
        throw ConvergenceError("power flow did not converge in " +
                               std::to_string(opt.max_iter) + " iterations (max mismatch " +
                               std::to_string(norm) + ")");
      // Assemble the Jacobian of the mismatch vector.
      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(mismatch.size(), vars.count);
      std::vector<int> p_row(n, -1), q_row(n, -1);
      {
        Eigen::Index r = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (kinds[i] != BusKind::slack) p_row[i] = static_cast<int>(r++);
        for (std::size_t i = 0; i < n; ++i)
          if (kinds[i] == BusKind::pq) q_row[i] = static_cast<int>(r++);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const Bus& bus = net.buses()[i];
        const double v = state.v[static_cast<Eigen::Index>(i)];
        if (vars.v_var[i] >= 0) {
          if (p_row[i] >= 0) J(p_row[i], vars.v_var[i]) += 2.0 * bus.g_shunt * v;
          if (q_row[i] >= 0) J(q_row[i], vars.v_var[i]) -= 2.0 * bus.b_shunt * v;
        }
      }
      for (const Branch& br : net.branches()) {
        if (!br.status) continue;
        const std::size_t fi = net.bus_index(br.from_bus);
        const std::size_t ti = net.bus_index(br.to_bus);
        FlowJacobian Jb = flow_jacobian(net, br, state);
        const int rows[4] = {p_row[fi], q_row[fi], p_row[ti], q_row[ti]};
        const int cols[4] = {vars.v_var[fi], vars.v_var[ti], vars.theta_var[fi],
                             vars.theta_var[ti]};
        for (int rr = 0; rr < 4; ++rr) {
          if (rows[rr] < 0) continue;
          for (int cc = 0; cc < 4; ++cc)
            if (cols[cc] >= 0) J(rows[rr], cols[cc]) += Jb(rr, cc);
        }
      }

      Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
      if (!lu.isInvertible())
        throw SingularJacobianError("power flow Jacobian is singular at iteration " +
                                    std::to_string(iter));
      Eigen::VectorXd step = lu.solve(-mismatch);

      // Step halving on mismatch-norm increase.
      double scale = 1.0;
      VoltageState trial = state;
      Eigen::VectorXd trial_mismatch;
      double trial_norm = 0.0;
      for (int h = 0;; ++h) {
        trial = state;
        for (std::size_t i = 0; i < n; ++i) {
          if (vars.theta_var[i] >= 0)
            trial.theta[static_cast<Eigen::Index>(i)] += scale * step[vars.theta_var[i]];
          if (vars.v_var[i] >= 0)
            trial.v[static_cast<Eigen::Index>(i)] += scale * step[vars.v_var[i]];
        }
        trial_mismatch = detail::newton_mismatch(net, trial, kinds, q_target);
        trial_norm = trial_mismatch.lpNorm<Eigen::Infinity>();
        if (trial_norm < norm || h >= opt.max_step_halvings) break;
        scale *= 0.5;
      }
      state = trial;
      mismatch = std::move(trial_mismatch);
      norm = trial_norm;
      iter++;
      total_iterations++;
    }

    if (!opt.enforce_q_limits) break;
    // PV->PQ switching: pin reactive output at the violated limit.
    bool switched = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (kinds[i] != BusKind::pv) continue;
      PowerPair inj = bus_injection(net, state, i);
      const double q_gen_needed = inj.q + net.buses()[i].q_demand;
      double q_min = 0.0, q_max = 0.0;
      for (const Generator& g : net.generators()) {
        if (g.bus != net.buses()[i].id || !g.status) continue;
        q_min += g.q_min;
        q_max += g.q_max;
      }
      if (q_gen_needed > q_max + 1e-9) {
        kinds[i] = BusKind::pq;
        q_target[i] = q_max - net.buses()[i].q_demand;
        switched = true;
      } else if (q_gen_needed < q_min - 1e-9) {
        kinds[i] = BusKind::pq;
        q_target[i] = q_min - net.buses()[i].q_demand;
        switched = true;
      }
    }
    if (!switched) break;
    if (outer > static_cast<int>(n)) throw ConvergenceError("PV/PQ switching did not settle");
  }

  PowerFlowResult result;
  result.state = std::move(state);
  result.iterations = total_iterations;
  Eigen::VectorXd final_mismatch =
      detail::newton_mismatch(net, result.state, kinds, q_target);
  result.max_mismatch = final_mismatch.size() ? final_mismatch.lpNorm<Eigen::Infinity>() : 0.0;
  return result;
}

}  // namespace sfdi
