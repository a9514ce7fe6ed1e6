#pragma once

// Stealth verification: full measurement function h(x), weighted
// least-squares state estimation, and the residual-based bad-data test
// that a well-formed attack must leave unchanged.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "sfdi/acpf.hpp"
#include "sfdi/attack_vector.hpp"
#include "sfdi/netmodel.hpp"

namespace sfdi {

class UnobservableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Measurement {
  double value = 0.0;
  double weight = 0.0;  // inverse variance
};

// Flows at both ends of every in-service branch, injections and voltage
// magnitude at every bus, plus bus angles when PMU channels are enabled.
// Ordered map: iteration (and thus noise application) is canonical.
struct MeasurementSet {
  std::map<MeasurementId, Measurement> entries;
  bool pmu_channels = true;
};

struct NoiseSigma {
  double flow = 0.01;       // p.u.
  double injection = 0.01;  // p.u.
  double v_mag = 0.004;     // p.u.
  double v_ang = 0.002;     // rad

  double for_kind(MeasurementKind k) const {
    if (is_flow_kind(k)) return flow;
    if (k == MeasurementKind::inj_p || k == MeasurementKind::inj_q) return injection;
    if (k == MeasurementKind::v_mag) return v_mag;
    return v_ang;
  }

  static NoiseSigma zero() { return {0.0, 0.0, 0.0, 0.0}; }
};

namespace detail {

// Deterministic standard-normal draw (Box-Muller on two uniforms); avoids
// the implementation-defined std::normal_distribution stream.
inline double standard_normal(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double u1 = uni(rng);
  double u2 = uni(rng);
  while (u1 <= 1e-300) u1 = uni(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

struct MeasurementOptions {
  bool pmu_channels = true;
  std::uint64_t seed = 0;
  NoiseSigma weight_sigma{};  // defines the weights regardless of added noise
};

// Evaluates h(state) over the full measurement set; optionally perturbs each
// entry with zero-mean Gaussian noise of the per-kind sigma (seeded).
inline MeasurementSet generate_measurements(const Network& net, const VoltageState& state,
                                            const NoiseSigma& noise = NoiseSigma::zero(),
                                            const MeasurementOptions& opt = {}) {
  MeasurementSet set;
  set.pmu_channels = opt.pmu_channels;
  auto weight = [&](MeasurementKind k) {
    const double sigma = opt.weight_sigma.for_kind(k);
    return 1.0 / (sigma * sigma);
  };
  for (std::size_t k = 0; k < net.branches().size(); ++k) {
    const Branch& br = net.branches()[k];
    if (!br.status) continue;
    BranchFlow f = branch_flow(net, br, state);
    set.entries[flow_id(MeasurementKind::flow_p_from, k)] = {f.p_from,
                                                             weight(MeasurementKind::flow_p_from)};
    set.entries[flow_id(MeasurementKind::flow_q_from, k)] = {f.q_from,
                                                             weight(MeasurementKind::flow_q_from)};
    set.entries[flow_id(MeasurementKind::flow_p_to, k)] = {f.p_to,
                                                           weight(MeasurementKind::flow_p_to)};
    set.entries[flow_id(MeasurementKind::flow_q_to, k)] = {f.q_to,
                                                           weight(MeasurementKind::flow_q_to)};
  }
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    const int bus = net.buses()[i].id;
    PowerPair inj = bus_injection(net, state, i);
    const auto ei = static_cast<Eigen::Index>(i);
    set.entries[bus_id_of(MeasurementKind::inj_p, bus)] = {inj.p,
                                                           weight(MeasurementKind::inj_p)};
    set.entries[bus_id_of(MeasurementKind::inj_q, bus)] = {inj.q,
                                                           weight(MeasurementKind::inj_q)};
    set.entries[bus_id_of(MeasurementKind::v_mag, bus)] = {state.v[ei],
                                                           weight(MeasurementKind::v_mag)};
    if (opt.pmu_channels)
      set.entries[bus_id_of(MeasurementKind::v_ang, bus)] = {state.theta[ei],
                                                             weight(MeasurementKind::v_ang)};
  }
  const bool any_noise =
      noise.flow != 0.0 || noise.injection != 0.0 || noise.v_mag != 0.0 || noise.v_ang != 0.0;
  if (any_noise) {
    std::mt19937_64 rng(opt.seed);
    for (auto& [mid, m] : set.entries) {
      const double sigma = noise.for_kind(mid.kind);
      const double draw = detail::standard_normal(rng);  // one draw per entry, always
      if (sigma != 0.0) m.value += sigma * draw;
    }
  }
  return set;
}

// z_attack = z + a. Every attack-vector id must exist in the set.
inline MeasurementSet apply_attack(const MeasurementSet& meas, const AttackVector& attack) {
  MeasurementSet out = meas;
  for (const auto& [mid, d] : attack.entries) {
    auto it = out.entries.find(mid);
    if (it == out.entries.end())
      throw ValidationError(std::string("attack vector entry ") + to_string(mid.kind) + "@" +
                            std::to_string(mid.location) + " has no matching measurement");
    it->second.value += d.delta();
  }
  return out;
}

struct ResidualReport {
  double norm = 0.0;            // weighted 2-norm of z - h(x_hat)
  double max_normalized = 0.0;  // largest normalized residual
  double threshold = 0.0;       // tau
  bool flagged = false;
  int iterations = 0;
};

struct EstimatorOptions {
  double step_tol = 1e-10;
  int max_iter = 50;
  double tau = 0.0;  // 0: chi-square 95th percentile at the set's redundancy
};

namespace detail {

// Chi-square quantile via the Wilson-Hilferty cube approximation.
inline double chi_square_quantile(double p, double dof) {
  // standard normal quantile for the common p values used here
  double z;
  if (p == 0.95) z = 1.6448536269514722;
  else {
    // Acklam-style rational approximation is overkill; bisect the CDF instead.
    auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); };
    double lo = -10, hi = 10;
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (lo + hi);
      (cdf(mid) < p ? lo : hi) = mid;
    }
    z = 0.5 * (lo + hi);
  }
  const double a = 2.0 / (9.0 * dof);
  const double c = 1.0 - a + z * std::sqrt(a);
  return dof * c * c * c;
}

struct WlsModel {
  std::vector<int> theta_var;  // bus index -> column, slack fixed at -1
  std::vector<int> v_var;
  Eigen::Index count = 0;
};

inline WlsModel wls_model(const Network& net) {
  WlsModel m;
  const std::size_t n = net.bus_count();
  m.theta_var.assign(n, -1);
  m.v_var.assign(n, -1);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < n; ++i) m.v_var[i] = static_cast<int>(col++);
  for (std::size_t i = 0; i < n; ++i)
    if (i != net.slack_index()) m.theta_var[i] = static_cast<int>(col++);
  m.count = col;
  return m;
}

inline double measurement_value(const Network& net, const VoltageState& state,
                                const MeasurementId& mid) {
  if (is_flow_kind(mid.kind)) {
    const Branch& br = net.branches()[static_cast<std::size_t>(mid.location)];
    BranchFlow f = branch_flow(net, br, state);
    switch (mid.kind) {
      case MeasurementKind::flow_p_from: return f.p_from;
      case MeasurementKind::flow_q_from: return f.q_from;
      case MeasurementKind::flow_p_to: return f.p_to;
      default: return f.q_to;
    }
  }
  const std::size_t bi = net.bus_index(mid.location);
  const auto ei = static_cast<Eigen::Index>(bi);
  switch (mid.kind) {
    case MeasurementKind::inj_p: return bus_injection(net, state, bi).p;
    case MeasurementKind::inj_q: return bus_injection(net, state, bi).q;
    case MeasurementKind::v_mag: return state.v[ei];
    default: return state.theta[ei];
  }
}

// Scatters one measurement's gradient row into H.
inline void measurement_row(const Network& net, const VoltageState& state,
                            const MeasurementId& mid, const WlsModel& model,
                            Eigen::MatrixXd& H, Eigen::Index row) {
  auto add = [&](std::size_t bus, double dv, double dth) {
    if (model.v_var[bus] >= 0) H(row, model.v_var[bus]) += dv;
    if (model.theta_var[bus] >= 0) H(row, model.theta_var[bus]) += dth;
  };
  if (is_flow_kind(mid.kind)) {
    const Branch& br = net.branches()[static_cast<std::size_t>(mid.location)];
    FlowJacobian J = flow_jacobian(net, br, state);
    int r = mid.kind == MeasurementKind::flow_p_from   ? 0
            : mid.kind == MeasurementKind::flow_q_from ? 1
            : mid.kind == MeasurementKind::flow_p_to   ? 2
                                                       : 3;
    add(net.bus_index(br.from_bus), J(r, 0), J(r, 2));
    add(net.bus_index(br.to_bus), J(r, 1), J(r, 3));
    return;
  }
  const std::size_t bi = net.bus_index(mid.location);
  const auto ei = static_cast<Eigen::Index>(bi);
  switch (mid.kind) {
    case MeasurementKind::inj_p:
    case MeasurementKind::inj_q: {
      const bool is_p = mid.kind == MeasurementKind::inj_p;
      const Bus& bus = net.buses()[bi];
      add(bi, is_p ? 2.0 * bus.g_shunt * state.v[ei] : -2.0 * bus.b_shunt * state.v[ei], 0.0);
      for (const BranchEnd& end : net.incident(bi)) {
        const Branch& br = net.branches()[end.branch];
        FlowJacobian J = flow_jacobian(net, br, state);
        const int r = (end.at_from ? 0 : 2) + (is_p ? 0 : 1);
        add(net.bus_index(br.from_bus), J(r, 0), J(r, 2));
        add(net.bus_index(br.to_bus), J(r, 1), J(r, 3));
      }
      return;
    }
    case MeasurementKind::v_mag: add(bi, 1.0, 0.0); return;
    default: add(bi, 0.0, 1.0); return;
  }
}

}  // namespace detail

struct WlsResult {
  VoltageState state;
  ResidualReport report;
};

// Gauss-Newton weighted least squares over all bus voltages (slack angle
// pinned to zero). Throws UnobservableError on a rank-deficient gain and
// ConvergenceError when the step tolerance is not reached.
inline WlsResult wls_estimate(const Network& net, const MeasurementSet& meas,
                              const EstimatorOptions& opt = {}) {
  const auto m = static_cast<Eigen::Index>(meas.entries.size());
  detail::WlsModel model = detail::wls_model(net);
  if (m < model.count)
    throw UnobservableError("measurement set has " + std::to_string(meas.entries.size()) +
                            " entries for " + std::to_string(model.count) + " states");

  VoltageState x = VoltageState::flat(net);
  Eigen::VectorXd sqrt_w(m), z(m);
  {
    Eigen::Index r = 0;
    for (const auto& [mid, entry] : meas.entries) {
      if (entry.weight <= 0.0) throw ValidationError("non-positive measurement weight");
      sqrt_w[r] = std::sqrt(entry.weight);
      z[r] = entry.value;
      r++;
    }
  }

  int iterations = 0;
  for (;; ++iterations) {
    if (iterations >= opt.max_iter)
      throw ConvergenceError("WLS estimation did not converge in " +
                             std::to_string(opt.max_iter) + " iterations");
    Eigen::VectorXd residual(m);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, model.count);
    Eigen::Index r = 0;
    for (const auto& [mid, entry] : meas.entries) {
      residual[r] = z[r] - detail::measurement_value(net, x, mid);
      detail::measurement_row(net, x, mid, model, H, r);
      r++;
    }
    Eigen::MatrixXd Hw = sqrt_w.asDiagonal() * H;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Hw);
    qr.setThreshold(1e-10);
    if (qr.rank() < model.count)
      throw UnobservableError("gain matrix is rank deficient (rank " +
                              std::to_string(qr.rank()) + " of " +
                              std::to_string(model.count) + ")");
    Eigen::VectorXd step = qr.solve(sqrt_w.asDiagonal() * residual);
    for (std::size_t i = 0; i < net.bus_count(); ++i) {
      const auto ei = static_cast<Eigen::Index>(i);
      if (model.v_var[i] >= 0) x.v[ei] += step[model.v_var[i]];
      if (model.theta_var[i] >= 0) x.theta[ei] += step[model.theta_var[i]];
    }
    if (step.lpNorm<Eigen::Infinity>() < opt.step_tol) break;
  }

  WlsResult result;
  result.state = x;
  ResidualReport& rep = result.report;
  rep.iterations = iterations + 1;

  Eigen::VectorXd residual(m);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, model.count);
  {
    Eigen::Index r = 0;
    for (const auto& [mid, entry] : meas.entries) {
      residual[r] = z[r] - detail::measurement_value(net, x, mid);
      detail::measurement_row(net, x, mid, model, H, r);
      r++;
    }
  }
  rep.norm = (sqrt_w.asDiagonal() * residual).norm();

  // Normalized residuals from the residual covariance diagonal
  // S_ii = sigma_i^2 - [H G^-1 H^T]_ii with G = H^T W H.
  {
    Eigen::MatrixXd G = H.transpose() * (sqrt_w.array().square().matrix()).asDiagonal() * H;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    double max_norm_res = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::VectorXd hi = H.row(i).transpose();
      const double sensitivity = hi.dot(ldlt.solve(hi));
      const double variance = 1.0 / (sqrt_w[i] * sqrt_w[i]);
      const double s = variance - sensitivity;
      if (s > 1e-12 * variance)
        max_norm_res = std::max(max_norm_res, std::abs(residual[i]) / std::sqrt(s));
    }
    rep.max_normalized = max_norm_res;
  }

  const double dof = static_cast<double>(m - model.count);
  rep.threshold =
      opt.tau > 0.0 ? opt.tau : std::sqrt(detail::chi_square_quantile(0.95, std::max(dof, 1.0)));
  rep.flagged = rep.norm > rep.threshold;
  return result;
}

struct StealthVerdict {
  bool pass = false;
  double residual_clean = 0.0;
  double residual_attacked = 0.0;
  double tau = 0.0;
  bool flagged_clean = false;
  bool flagged_attacked = false;
  double norm_gap = 0.0;  // | ||r_attack|| - ||r|| |
};

struct StealthOptions {
  NoiseSigma noise = NoiseSigma::zero();
  double tau = 0.0;  // 0: chi-square default
  bool pmu_channels = true;
  std::uint64_t seed = 0;
};

// Runs the bad-data test on clean and attacked measurements built from the
// same noise realization. Passes when the residual norm is unchanged:
// within 1e-6 absolute for noiseless data, 1e-3 relative otherwise.
inline StealthVerdict stealth_check(const Network& net, const AttackZone& zone,
                                    const VoltageState& baseline,
                                    const VoltageState& attacked,
                                    const StealthOptions& opt = {}) {
  MeasurementOptions mopt;
  mopt.pmu_channels = opt.pmu_channels;
  mopt.seed = opt.seed;
  MeasurementSet clean = generate_measurements(net, baseline, opt.noise, mopt);

  AttackVector attack = assemble(net, zone, baseline, attacked);
  if (!opt.pmu_channels) {
    // angle deltas have no channel to land on in this mode
    for (auto it = attack.entries.begin(); it != attack.entries.end();)
      it = it->first.kind == MeasurementKind::v_ang ? attack.entries.erase(it) : std::next(it);
  }
  MeasurementSet attacked_meas = apply_attack(clean, attack);

  EstimatorOptions eopt;
  eopt.tau = opt.tau;
  WlsResult clean_fit = wls_estimate(net, clean, eopt);
  WlsResult attacked_fit = wls_estimate(net, attacked_meas, eopt);

  StealthVerdict verdict;
  verdict.residual_clean = clean_fit.report.norm;
  verdict.residual_attacked = attacked_fit.report.norm;
  verdict.tau = clean_fit.report.threshold;
  verdict.flagged_clean = clean_fit.report.flagged;
  verdict.flagged_attacked = attacked_fit.report.flagged;
  verdict.norm_gap = std::abs(verdict.residual_attacked - verdict.residual_clean);
  const bool noiseless = opt.noise.flow == 0.0 && opt.noise.injection == 0.0 &&
                         opt.noise.v_mag == 0.0 && opt.noise.v_ang == 0.0;
  verdict.pass = noiseless ? verdict.norm_gap <= 1e-6
                           : verdict.norm_gap <= 1e-3 * std::max(verdict.residual_clean, 1e-12);
  return verdict;
}

}  // namespace sfdi
