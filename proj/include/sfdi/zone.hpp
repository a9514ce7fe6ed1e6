#pragma once

// Attack-zone construction and validation: boundary vs. interior split,
// zone-line closure, and zero-injection classification of interior buses.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "sfdi/netmodel.hpp"

namespace sfdi {

struct AttackZone {
  std::set<int> zone_buses;
  std::set<int> boundary_buses;
  std::vector<int> interior_buses;  // ascending bus id; fixes selection ordering
  std::vector<std::size_t> zone_lines;  // branch indices, both endpoints in zone
  std::set<int> interior_zero_injection;
  std::set<int> interior_nonzero;
  std::size_t target_line = 0;
  double w_coefficient = 1.0;

  bool is_interior(int bus_id) const {
    return zone_buses.count(bus_id) && !boundary_buses.count(bus_id);
  }
};

// Validates the user-supplied zone. The target line is given by its endpoint
// pair; with parallel circuits the first in-service match is taken.
inline AttackZone build_zone(const Network& net, const std::set<int>& zone_buses,
                             const std::set<int>& boundary_buses, int target_from,
                             int target_to, double w) {
  if (!(w > 0.0)) throw ValidationError("overload coefficient W must be positive");
  if (zone_buses.empty()) throw ValidationError("attack zone is empty");
  for (int id : zone_buses)
    if (!net.has_bus(id))
      throw ValidationError("zone bus " + std::to_string(id) + " is not in the network");
  for (int id : boundary_buses)
    if (!zone_buses.count(id))
      throw ValidationError("boundary bus " + std::to_string(id) +
                            " is not part of the zone");

  AttackZone zone;
  zone.zone_buses = zone_buses;
  zone.boundary_buses = boundary_buses;
  zone.w_coefficient = w;
  for (int id : zone_buses)
    if (!boundary_buses.count(id)) zone.interior_buses.push_back(id);
  std::sort(zone.interior_buses.begin(), zone.interior_buses.end());

  // Zone lines and confinement: an interior bus may not touch a non-zone bus.
  bool target_found = false;
  for (std::size_t k = 0; k < net.branches().size(); ++k) {
    const Branch& br = net.branches()[k];
    if (!br.status) continue;
    const bool f_in = zone_buses.count(br.from_bus) != 0;
    const bool t_in = zone_buses.count(br.to_bus) != 0;
    if (f_in && t_in) {
      zone.zone_lines.push_back(k);
      if (!target_found && ((br.from_bus == target_from && br.to_bus == target_to) ||
                            (br.from_bus == target_to && br.to_bus == target_from))) {
        zone.target_line = k;
        target_found = true;
      }
    } else if (f_in || t_in) {
      const int inside = f_in ? br.from_bus : br.to_bus;
      const int outside = f_in ? br.to_bus : br.from_bus;
      if (!boundary_buses.count(inside))
        throw ValidationError("leaky zone: interior bus " + std::to_string(inside) +
                              " is adjacent to non-zone bus " + std::to_string(outside));
    }
  }
  if (!target_found)
    throw ValidationError("target line " + std::to_string(target_from) + "-" +
                          std::to_string(target_to) + " is not a zone line");
  {
    const Branch& t = net.branches()[zone.target_line];
    if (boundary_buses.count(t.from_bus) || boundary_buses.count(t.to_bus))
      throw ValidationError("target line touches a boundary bus; its flow is pinned");
  }

  // Connectivity over zone lines.
  {
    std::set<int> seen;
    std::deque<int> queue{*zone_buses.begin()};
    seen.insert(*zone_buses.begin());
    while (!queue.empty()) {
      int bus = queue.front();
      queue.pop_front();
      for (std::size_t k : zone.zone_lines) {
        const Branch& br = net.branches()[k];
        int other = br.from_bus == bus ? br.to_bus : br.to_bus == bus ? br.from_bus : 0;
        if (other != 0 && !seen.count(other)) {
          seen.insert(other);
          queue.push_back(other);
        }
      }
    }
    if (seen.size() != zone_buses.size())
      throw ValidationError("attack zone is not a connected subgraph");
  }

  const std::set<int> zi = zero_injection_buses(net);
  for (int id : boundary_buses)
    if (zi.count(id))
      throw ValidationError("boundary bus " + std::to_string(id) +
                            " is a zero-injection bus; boundaries need injections");
  for (int id : zone.interior_buses)
    (zi.count(id) ? zone.interior_zero_injection : zone.interior_nonzero).insert(id);

  return zone;
}

struct ZoneReport {
  std::vector<int> boundary;
  std::vector<int> interior_zero_injection;  // carry hard balance constraints
  std::vector<int> interior_nonzero;         // injections recomputed after solve
  std::vector<std::pair<int, int>> zone_lines;
  std::pair<int, int> target_line{0, 0};
  double w = 1.0;
};

inline ZoneReport zone_report(const Network& net, const AttackZone& zone) {
  ZoneReport rep;
  rep.boundary.assign(zone.boundary_buses.begin(), zone.boundary_buses.end());
  rep.interior_zero_injection.assign(zone.interior_zero_injection.begin(),
                                     zone.interior_zero_injection.end());
  rep.interior_nonzero.assign(zone.interior_nonzero.begin(), zone.interior_nonzero.end());
  for (std::size_t k : zone.zone_lines) {
    const Branch& br = net.branches()[k];
    rep.zone_lines.emplace_back(br.from_bus, br.to_bus);
  }
  const Branch& t = net.branches()[zone.target_line];
  rep.target_line = {t.from_bus, t.to_bus};
  rep.w = zone.w_coefficient;
  return rep;
}

// Best-effort zone closure from a focal bus set: grows the zone through
// zero-injection buses (which cannot serve as boundaries) until every bus
// touching the outside carries an injection, then reports those as the
// boundary. May swallow more of the network than intended; validate the
// result before use.
inline std::pair<std::set<int>, std::set<int>> suggest_zone(const Network& net,
                                                            const std::set<int>& focal) {
  std::set<int> zone = focal;
  const std::set<int> zi = zero_injection_buses(net);
  bool grew = true;
  while (grew) {
    grew = false;
    std::set<int> to_add;
    for (const Branch& br : net.branches()) {
      if (!br.status) continue;
      const bool f_in = zone.count(br.from_bus) != 0;
      const bool t_in = zone.count(br.to_bus) != 0;
      if (f_in == t_in) continue;
      const int inside = f_in ? br.from_bus : br.to_bus;
      const int outside = f_in ? br.to_bus : br.from_bus;
      if (zi.count(inside)) to_add.insert(outside);
    }
    for (int id : to_add)
      if (zone.insert(id).second) grew = true;
  }
  std::set<int> boundary;
  for (const Branch& br : net.branches()) {
    if (!br.status) continue;
    const bool f_in = zone.count(br.from_bus) != 0;
    const bool t_in = zone.count(br.to_bus) != 0;
    if (f_in != t_in) boundary.insert(f_in ? br.from_bus : br.to_bus);
  }
  return {zone, boundary};
}

}  // namespace sfdi
