#pragma once

// Measurement-space view of a solved attack: recomputed injections at
// non-zero-injection zone buses and the per-measurement delta vector
// a = h(x_attack) - h(x), confined to the attack zone.

#include <compare>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>

#include "sfdi/acpf.hpp"
#include "sfdi/netmodel.hpp"
#include "sfdi/zone.hpp"

namespace sfdi {

enum class MeasurementKind {
  flow_p_from,
  flow_q_from,
  flow_p_to,
  flow_q_to,
  inj_p,
  inj_q,
  v_mag,
  v_ang,
};

inline bool is_flow_kind(MeasurementKind k) {
  return k == MeasurementKind::flow_p_from || k == MeasurementKind::flow_q_from ||
         k == MeasurementKind::flow_p_to || k == MeasurementKind::flow_q_to;
}

inline const char* to_string(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::flow_p_from: return "flow_p_from";
    case MeasurementKind::flow_q_from: return "flow_q_from";
    case MeasurementKind::flow_p_to: return "flow_p_to";
    case MeasurementKind::flow_q_to: return "flow_q_to";
    case MeasurementKind::inj_p: return "inj_p";
    case MeasurementKind::inj_q: return "inj_q";
    case MeasurementKind::v_mag: return "v_mag";
    case MeasurementKind::v_ang: return "v_ang";
  }
  return "?";
}

inline MeasurementKind measurement_kind_from_string(const std::string& s) {
  if (s == "flow_p_from") return MeasurementKind::flow_p_from;
  if (s == "flow_q_from") return MeasurementKind::flow_q_from;
  if (s == "flow_p_to") return MeasurementKind::flow_p_to;
  if (s == "flow_q_to") return MeasurementKind::flow_q_to;
  if (s == "inj_p") return MeasurementKind::inj_p;
  if (s == "inj_q") return MeasurementKind::inj_q;
  if (s == "v_mag") return MeasurementKind::v_mag;
  if (s == "v_ang") return MeasurementKind::v_ang;
  throw ValidationError("unknown measurement kind '" + s + "'");
}

// location is a branch index for flow kinds, a bus id otherwise.
struct MeasurementId {
  MeasurementKind kind = MeasurementKind::v_mag;
  int location = 0;

  auto operator<=>(const MeasurementId&) const = default;
};

inline MeasurementId flow_id(MeasurementKind k, std::size_t branch_index) {
  return {k, static_cast<int>(branch_index)};
}
inline MeasurementId bus_id_of(MeasurementKind k, int bus) { return {k, bus}; }

struct MeasurementDelta {
  double before = 0.0;
  double after = 0.0;
  double delta() const { return after - before; }
};

struct AttackVector {
  std::map<MeasurementId, MeasurementDelta> entries;
  AttackZone zone;
};

// Post-attack injections at non-zero-injection zone buses: the pre-attack
// injection plus the flow changes on incident zone lines, plus the bus's own
// shunt-consumption change when its voltage moved (without the shunt term
// the result would not match the measured injection h at shunted buses).
inline std::map<int, PowerPair> post_injections(const Network& net, const AttackZone& zone,
                                                const VoltageState& baseline,
                                                const VoltageState& attacked) {
  std::map<int, PowerPair> result;
  for (int id : zone.zone_buses) {
    if (zone.interior_zero_injection.count(id)) continue;
    const std::size_t bi = net.bus_index(id);
    PowerPair inj = bus_injection(net, baseline, bi);
    {
      const auto ei = static_cast<Eigen::Index>(bi);
      const double dv2 = attacked.v[ei] * attacked.v[ei] - baseline.v[ei] * baseline.v[ei];
      inj.p += net.buses()[bi].g_shunt * dv2;
      inj.q -= net.buses()[bi].b_shunt * dv2;
    }
    for (std::size_t k : zone.zone_lines) {
      const Branch& br = net.branches()[k];
      const bool at_from = br.from_bus == id;
      if (!at_from && br.to_bus != id) continue;
      BranchFlow before = branch_flow(net, br, baseline);
      BranchFlow after = branch_flow(net, br, attacked);
      inj.p += (at_from ? after.p_from : after.p_to) - (at_from ? before.p_from : before.p_to);
      inj.q += (at_from ? after.q_from : after.q_to) - (at_from ? before.q_from : before.q_to);
    }
    result[id] = inj;
  }
  return result;
}

// Builds the signed measurement-delta vector for a solved attack state.
// Entries smaller than 1e-12 are dropped; measurements outside the zone are
// implicitly zero. Throws if the attacked state moved anything outside the
// zone interior.
inline AttackVector assemble(const Network& net, const AttackZone& zone,
                             const VoltageState& baseline, const VoltageState& attacked) {
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    const int id = net.buses()[i].id;
    if (zone.is_interior(id)) continue;
    const auto ei = static_cast<Eigen::Index>(i);
    if (baseline.v[ei] != attacked.v[ei] || baseline.theta[ei] != attacked.theta[ei])
      throw ValidationError("confinement violation: bus " + std::to_string(id) +
                            " changed outside the zone interior");
  }

  constexpr double kDropTol = 1e-12;
  AttackVector av;
  av.zone = zone;
  auto put = [&](MeasurementId mid, double before, double after) {
    if (std::abs(after - before) < kDropTol) return;
    av.entries[mid] = {before, after};
  };

  for (std::size_t k : zone.zone_lines) {
    const Branch& br = net.branches()[k];
    BranchFlow before = branch_flow(net, br, baseline);
    BranchFlow after = branch_flow(net, br, attacked);
    put(flow_id(MeasurementKind::flow_p_from, k), before.p_from, after.p_from);
    put(flow_id(MeasurementKind::flow_q_from, k), before.q_from, after.q_from);
    put(flow_id(MeasurementKind::flow_p_to, k), before.p_to, after.p_to);
    put(flow_id(MeasurementKind::flow_q_to, k), before.q_to, after.q_to);
  }

  const auto post = post_injections(net, zone, baseline, attacked);
  for (const auto& [bus, after] : post) {
    PowerPair before = bus_injection(net, baseline, net.bus_index(bus));
    put(bus_id_of(MeasurementKind::inj_p, bus), before.p, after.p);
    put(bus_id_of(MeasurementKind::inj_q, bus), before.q, after.q);
  }

  for (int id : zone.zone_buses) {
    const auto ei = static_cast<Eigen::Index>(net.bus_index(id));
    put(bus_id_of(MeasurementKind::v_mag, id), baseline.v[ei], attacked.v[ei]);
    put(bus_id_of(MeasurementKind::v_ang, id), baseline.theta[ei], attacked.theta[ei]);
  }
  return av;
}

}  // namespace sfdi
