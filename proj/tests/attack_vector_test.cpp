#include "sfdi/attack_vector.hpp"

#include <gtest/gtest.h>

#include "sfdi/sparse_attack.hpp"
#include "sfdi/stealth.hpp"
#include "test_support.hpp"

using namespace sfdi;
namespace st = sfdi::testing;

namespace {

InnerSolution scenario_solution(const std::set<int>& selected) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  InnerSolution sol = inner_feasibility(net, zone, st::case57_baseline(),
                                        SelectionVector::of(zone, selected), {});
  EXPECT_TRUE(sol.feasible);
  return sol;
}

std::set<int> phasor_support(const AttackVector& av) {
  std::set<int> buses;
  for (const auto& [mid, d] : av.entries)
    if (mid.kind == MeasurementKind::v_mag || mid.kind == MeasurementKind::v_ang)
      buses.insert(mid.location);
  return buses;
}

}  // namespace

TEST(PostInjections, IdentityAttackChangesNothing) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  auto post = post_injections(net, zone, baseline, baseline);
  for (const auto& [bus, inj] : post) {
    PowerPair before = bus_injection(net, baseline, net.bus_index(bus));
    EXPECT_DOUBLE_EQ(inj.p, before.p) << "bus " << bus;
    EXPECT_DOUBLE_EQ(inj.q, before.q) << "bus " << bus;
  }
  // zero-injection interior buses are not reported at all
  for (int id : zone.interior_zero_injection) EXPECT_EQ(post.count(id), 0u);
  EXPECT_EQ(post.size(), zone.zone_buses.size() - zone.interior_zero_injection.size());
}

TEST(PostInjections, EqualsMeasurementFunctionDifference) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  InnerSolution sol = scenario_solution({24, 25, 26});
  auto post = post_injections(net, zone, baseline, sol.state);
  for (const auto& [bus, inj] : post) {
    PowerPair direct = bus_injection(net, sol.state, net.bus_index(bus));
    EXPECT_NEAR(inj.p, direct.p, 1e-10) << "bus " << bus;
    EXPECT_NEAR(inj.q, direct.q, 1e-10) << "bus " << bus;
  }
}

TEST(Assemble, IdentityAttackGivesEmptyVector) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  AttackVector av = assemble(net, zone, baseline, baseline);
  EXPECT_TRUE(av.entries.empty());
}

TEST(Assemble, PhasorSupportEqualsSelection) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  {
    InnerSolution sol = scenario_solution({24, 25, 26});
    AttackVector av = assemble(net, zone, baseline, sol.state);
    EXPECT_EQ(phasor_support(av), (std::set<int>{24, 25, 26}));
  }
  {
    InnerSolution sol = scenario_solution({21, 22, 23, 25});
    AttackVector av = assemble(net, zone, baseline, sol.state);
    EXPECT_EQ(phasor_support(av), (std::set<int>{21, 22, 23, 25}));
  }
}

TEST(Assemble, ConsistentWithMeasurementFunction) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  InnerSolution sol = scenario_solution({24, 25, 26});
  AttackVector av = assemble(net, zone, baseline, sol.state);
  ASSERT_FALSE(av.entries.empty());

  MeasurementSet before = generate_measurements(net, baseline);
  MeasurementSet after = generate_measurements(net, sol.state);
  for (const auto& [mid, d] : av.entries) {
    const double want = after.entries.at(mid).value - before.entries.at(mid).value;
    EXPECT_NEAR(d.delta(), want, 1e-10)
        << to_string(mid.kind) << "@" << mid.location;
  }
}

TEST(Assemble, ZeroInjectionSilence) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  InnerSolution sol = scenario_solution({24, 25, 26});
  AttackVector av = assemble(net, zone, st::case57_baseline(), sol.state);
  for (const auto& [mid, d] : av.entries) {
    if (mid.kind != MeasurementKind::inj_p && mid.kind != MeasurementKind::inj_q) continue;
    EXPECT_EQ(zone.interior_zero_injection.count(mid.location), 0u)
        << "injection delta at zero-injection bus " << mid.location;
  }
}

TEST(Assemble, SupportConfinedToZone) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  InnerSolution sol = scenario_solution({24, 25, 26});
  AttackVector av = assemble(net, zone, st::case57_baseline(), sol.state);
  std::set<std::size_t> zone_lines(zone.zone_lines.begin(), zone.zone_lines.end());
  for (const auto& [mid, d] : av.entries) {
    if (is_flow_kind(mid.kind))
      EXPECT_TRUE(zone_lines.count(static_cast<std::size_t>(mid.location)));
    else
      EXPECT_TRUE(zone.zone_buses.count(mid.location));
  }
}

TEST(Assemble, ConfinementViolationDetected) {
  const Network& net = st::case57();
  AttackZone zone = st::scenario_zone();
  const VoltageState& baseline = st::case57_baseline();
  VoltageState tampered = baseline;
  tampered.v[static_cast<Eigen::Index>(net.bus_index(1))] += 0.01;
  EXPECT_THROW(assemble(net, zone, baseline, tampered), ValidationError);
  // a boundary bus is outside the interior too
  VoltageState boundary_moved = baseline;
  boundary_moved.theta[static_cast<Eigen::Index>(net.bus_index(20))] += 0.01;
  EXPECT_THROW(assemble(net, zone, baseline, boundary_moved), ValidationError);
}

TEST(Assemble, ToyNetworkFullMeasurementCrossCheck) {
  Network net = st::toy_network();
  VoltageState baseline = newton_power_flow(net).state;
  AttackZone zone = st::toy_zone(net, 1.5);
  SparseAttackResult res = solve_sparse(net, zone, baseline, {});
  ASSERT_TRUE(res.solution.feasible);
  AttackVector av = assemble(net, zone, baseline, res.solution.state);
  MeasurementSet before = generate_measurements(net, baseline);
  MeasurementSet after = generate_measurements(net, res.solution.state);
  // every differing measurement appears in the vector (down to the drop tolerance)
  for (const auto& [mid, m] : before.entries) {
    const double diff = after.entries.at(mid).value - m.value;
    if (std::abs(diff) > 1e-9) {
      ASSERT_TRUE(av.entries.count(mid)) << to_string(mid.kind) << "@" << mid.location;
      EXPECT_NEAR(av.entries.at(mid).delta(), diff, 1e-10);
    }
  }
}
