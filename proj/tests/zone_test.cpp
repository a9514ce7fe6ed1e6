#include "sfdi/zone.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sfdi;
namespace st = sfdi::testing;

TEST(BuildZone, ScenarioZoneIsValid) {
  AttackZone zone = st::scenario_zone();
  EXPECT_EQ(zone.zone_buses.size(), 21u);
  EXPECT_EQ(zone.boundary_buses.size(), 4u);
  EXPECT_EQ(zone.interior_buses.size(), 17u);
  const std::set<int> expected_zi = {21, 22, 24, 26, 34, 36, 37, 39, 40};
  EXPECT_EQ(zone.interior_zero_injection, expected_zi);
  EXPECT_EQ(zone.interior_nonzero.size(), 8u);
  const Branch& target = st::case57().branches()[zone.target_line];
  EXPECT_EQ(target.from_bus, 23);
  EXPECT_EQ(target.to_bus, 24);
  EXPECT_DOUBLE_EQ(zone.w_coefficient, 3.0);
}

TEST(BuildZone, PartitionProperty) {
  AttackZone zone = st::scenario_zone();
  std::set<int> rebuilt(zone.interior_buses.begin(), zone.interior_buses.end());
  for (int id : zone.boundary_buses) EXPECT_TRUE(rebuilt.insert(id).second);
  EXPECT_EQ(rebuilt, zone.zone_buses);
}

TEST(BuildZone, ZoneLinesClosedExactlyOnce) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  std::set<std::size_t> lines(zone.zone_lines.begin(), zone.zone_lines.end());
  EXPECT_EQ(lines.size(), zone.zone_lines.size());  // no duplicates
  for (std::size_t k = 0; k < net.branches().size(); ++k) {
    const Branch& br = net.branches()[k];
    const bool both_in =
        zone.zone_buses.count(br.from_bus) && zone.zone_buses.count(br.to_bus);
    EXPECT_EQ(lines.count(k), both_in ? 1u : 0u) << br.from_bus << "-" << br.to_bus;
  }
}

TEST(BuildZone, ConfinementOverFullBranchList) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  for (const Branch& br : net.branches()) {
    const bool f_in = zone.zone_buses.count(br.from_bus) != 0;
    const bool t_in = zone.zone_buses.count(br.to_bus) != 0;
    if (f_in != t_in) {
      const int inside = f_in ? br.from_bus : br.to_bus;
      EXPECT_TRUE(zone.boundary_buses.count(inside))
          << "interior bus " << inside << " touches outside";
    }
  }
}

TEST(BuildZone, LeakyZoneRejected) {
  // without boundary buses, bus 20's outside neighbor 19 leaks
  EXPECT_THROW(build_zone(st::case57(), st::scenario_zone_buses(), {}, 23, 24, 3.0),
               ValidationError);
}

TEST(BuildZone, TargetTouchingBoundaryRejected) {
  Network net = parse_case(st::two_bus_case_text());
  EXPECT_THROW(build_zone(net, {1, 2}, {1}, 1, 2, 2.0), ValidationError);
}

TEST(BuildZone, BoundaryMustCarryInjection) {
  // bus 3 of the toy network is zero-injection and cannot be a boundary
  Network net = st::toy_network();
  EXPECT_THROW(build_zone(net, {3, 4, 5}, {3}, 4, 5, 2.0), ValidationError);
}

TEST(BuildZone, DisconnectedZoneRejected) {
  std::vector<Bus> buses(6);
  for (int i = 0; i < 6; ++i) {
    buses[i].id = i + 1;
    buses[i].kind = i == 0 ? BusKind::slack : BusKind::pq;
    buses[i].p_demand = 0.1;
  }
  // two islands: 1-2-3 and 4-5-6
  std::vector<Branch> branches = {
      {.from_bus = 1, .to_bus = 2, .r = 0.01, .x = 0.1},
      {.from_bus = 2, .to_bus = 3, .r = 0.01, .x = 0.1},
      {.from_bus = 4, .to_bus = 5, .r = 0.01, .x = 0.1},
      {.from_bus = 5, .to_bus = 6, .r = 0.01, .x = 0.1},
  };
  Network net(100.0, buses, branches, {});
  EXPECT_THROW(build_zone(net, {2, 3, 4, 5, 6}, {2, 4}, 5, 6, 2.0), ValidationError);
}

TEST(BuildZone, NonPositiveWRejected) {
  EXPECT_THROW(
      build_zone(st::case57(), st::scenario_zone_buses(), st::scenario_boundary(), 23, 24, 0.0),
      ValidationError);
  EXPECT_THROW(build_zone(st::case57(), st::scenario_zone_buses(), st::scenario_boundary(), 23,
                          24, -1.0),
               ValidationError);
}

TEST(BuildZone, MissingTargetLineRejected) {
  EXPECT_THROW(
      build_zone(st::case57(), st::scenario_zone_buses(), st::scenario_boundary(), 21, 23, 3.0),
      ValidationError);
}

TEST(ZoneReport, ScenarioSummary) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  ZoneReport rep = zone_report(net, zone);
  EXPECT_EQ(rep.boundary, (std::vector<int>{20, 27, 38, 56}));
  EXPECT_EQ(rep.interior_zero_injection.size() + rep.interior_nonzero.size(),
            zone.interior_buses.size());
  EXPECT_EQ(rep.target_line, (std::pair<int, int>{23, 24}));
  EXPECT_EQ(rep.zone_lines.size(), zone.zone_lines.size());
  EXPECT_DOUBLE_EQ(rep.w, 3.0);
}

TEST(ZoneReport, FullyLoadedZoneHasNoZeroInjectionInterior) {
  std::vector<Bus> buses(4);
  for (int i = 0; i < 4; ++i) {
    buses[i].id = i + 1;
    buses[i].kind = i == 0 ? BusKind::slack : BusKind::pq;
    buses[i].p_demand = 0.1;
  }
  std::vector<Branch> branches = {
      {.from_bus = 1, .to_bus = 2, .r = 0.01, .x = 0.1},
      {.from_bus = 2, .to_bus = 3, .r = 0.01, .x = 0.1},
      {.from_bus = 3, .to_bus = 4, .r = 0.01, .x = 0.1},
      {.from_bus = 4, .to_bus = 2, .r = 0.01, .x = 0.1},
  };
  Network net(100.0, buses, branches, {});
  AttackZone zone = build_zone(net, {2, 3, 4}, {2}, 3, 4, 1.5);
  EXPECT_TRUE(zone.interior_zero_injection.empty());
  EXPECT_EQ(zone.interior_nonzero, (std::set<int>{3, 4}));
}

TEST(SuggestZone, GrowsThroughZeroInjectionBuses) {
  const Network& net = st::case57();
  auto [zone_buses, boundary] = suggest_zone(net, {24});
  // 24 and 26 are zero-injection, so the closure pulls in their neighbors
  EXPECT_EQ(zone_buses, (std::set<int>{23, 24, 25, 26, 27}));
  EXPECT_EQ(boundary, (std::set<int>{23, 25, 27}));
  // the suggestion validates as a zone with an interior target line
  AttackZone zone = build_zone(net, zone_buses, boundary, 24, 26, 2.0);
  EXPECT_EQ(zone.interior_buses, (std::vector<int>{24, 26}));
}
