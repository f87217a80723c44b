#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ncs/network.hpp"
#include "oracle.hpp"

using namespace ncs;
using namespace ncs::testing;

namespace {

// Line network s -> r -> t carrying `loops` flows.
Topology line(int loops) {
  Topology t;
  const NodeId s = t.add_node("s"), r = t.add_node("r"), d = t.add_node("t");
  const LinkId a = t.add_link(s, r), b = t.add_link(r, d);
  for (int i = 0; i < loops; ++i) t.add_path({a, b});
  return t;
}

}  // namespace

TEST_CASE("Lindley recursion examples") {
  CHECK(lindley_step(3, 2, 4) == 1);
  CHECK(lindley_step(1, 0, 4) == 0);
  CHECK(lindley_step(0.0, 2.5, 1.0) == doctest::Approx(1.5));
}

TEST_CASE("differential backlog") {
  CHECK(differential_backlog(5, 2) == 3);
  CHECK(differential_backlog(2, 5) == 0);
  CHECK(differential_backlog(5, 2, 0.5) == 1.5);
}

TEST_CASE("topology validation") {
  Topology t;
  const NodeId a = t.add_node("a"), b = t.add_node("b"), c = t.add_node("c");
  const LinkId ab = t.add_link(a, b), bc = t.add_link(b, c), ca = t.add_link(c, a);
  CHECK_THROWS_AS(t.add_path({ab, ab}), NetworkError);
  CHECK_THROWS_AS(t.add_path({bc, ab}), NetworkError);
  CHECK_THROWS_AS(t.add_path({ab, bc, ca}), NetworkError);
  const LoopId i = t.add_path({ab, bc});
  CHECK(t.source(i) == a);
  CHECK(t.target(i) == c);
  CHECK(*t.hop_of(i, bc) == 1);
  CHECK_FALSE(t.hop_of(i, ca).has_value());
}

TEST_CASE("flow assignment picks the argmax and splits ties evenly") {
  Rng rng(7);
  const std::vector<std::pair<LoopId, double>> none{{0, 0.0}, {1, 0.0}};
  CHECK_FALSE(assign_flow(none, rng).has_value());
  const std::vector<std::pair<LoopId, double>> clear{{0, 1.0}, {1, 3.0}, {2, 2.0}};
  CHECK(assign_flow(clear, rng) == LoopId{1});

  const std::vector<std::pair<LoopId, double>> tie{{0, 2.0}, {1, 2.0}, {2, 1.0}};
  const int trials = 10000;
  int first = 0;
  for (int t = 0; t < trials; ++t) {
    const auto pick = assign_flow(tie, rng);
    REQUIRE(pick.has_value());
    REQUIRE(*pick != 2);
    first += *pick == 0;
  }
  const double sigma = std::sqrt(trials * 0.25);
  CHECK(std::abs(first - trials / 2.0) <= 3 * sigma);
}

TEST_CASE("scheduler ties are uniform") {
  ActionSet actions;
  actions.groups.push_back({{0, 1, 2}, 1, {}});
  LinkState q{{1, 1, 1}};
  const std::vector<double> w{2, 2, 2};
  Rng rng(11);
  std::vector<int> hits(3, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const auto s = wsr_schedule(q, w, actions, rng);
    REQUIRE(s.active.size() == 1);
    ++hits[s.active[0]];
  }
  const double sigma = std::sqrt(trials * (1.0 / 3) * (2.0 / 3));
  for (int h : hits) CHECK(std::abs(h - trials / 3.0) <= 3 * sigma);
}

TEST_CASE("scheduler matches an exhaustive oracle") {
  Rng gen(2024), rng(99);
  for (int n = 0; n < 1000; ++n) {
    const Instance in = random_instance(gen);
    const auto [best, argmax] = oracle(in);
    const Schedule s = wsr_schedule(in.state, in.weights, in.actions, rng);
    REQUIRE(feasible(s, in.actions));
    CHECK(s.objective == doctest::Approx(best));
    CHECK(in_argmax(s, argmax, in));
  }
}

TEST_CASE("scheduling argmax is invariant under positive scaling") {
  Rng gen(5), rng(6);
  for (int n = 0; n < 300; ++n) {
    Instance in = random_instance(gen);
    const auto [best, argmax] = oracle(in);
    for (double c : {0.01, 3.0, 1e4}) {
      Instance scaled = in;
      for (auto& w : scaled.weights) w *= c;
      const Schedule s = wsr_schedule(scaled.state, scaled.weights, scaled.actions, rng);
      CHECK(s.objective == doctest::Approx(best * c));
      CHECK(in_argmax(s, argmax, in));
    }
  }
}

TEST_CASE("action counts") {
  ActionGroup g{{0, 1, 2, 3}, 2, {}};
  CHECK(g.action_count() == 11);
  CHECK(g.enumerate().size() == 11);
  ActionSet set{{g, ActionGroup{{4, 5, 6, 7}, 2, {}}}};
  CHECK(set.joint_action_count() == 121);
  CHECK_NOTHROW(set.validate(8));
  CHECK_THROWS_AS(set.validate(6), NetworkError);
}

TEST_CASE("transmit moves packets FIFO with next-slot eligibility") {
  const Topology topo = line(1);
  BufferSet buf(topo);
  for (std::uint64_t k = 0; k < 3; ++k) buf.inject(Packet{0, static_cast<std::int64_t>(k), {}, 1.0, k});
  CHECK(buf.cc_backlog(0) == 3);
  CHECK(cc_admit(buf, 0, 0) == 3);
  CHECK(buf.cc_backlog(0) == 0);
  CHECK(buf.source_backlog(0) == 3);

  const LinkState q{{2, 2}};
  // Slot 0: two packets reach the relay; the second hop has nothing ready.
  const std::vector<FlowRate> both{{0, 0, 2}, {1, 0, 2}};
  auto out = transmit(buf, both, q, 0);
  CHECK(out.empty());
  CHECK(buf.tx_backlog(1, 0) == 2);
  CHECK(buf.resident() == 3);

  out = transmit(buf, both, q, 1);
  REQUIRE(out.size() == 2);
  CHECK(out[0].seq == 0);
  CHECK(out[1].seq == 1);
  out = transmit(buf, both, q, 2);
  REQUIRE(out.size() == 1);
  CHECK(out[0].seq == 2);
  CHECK(buf.resident() == 0);
}

TEST_CASE("transmit rejects infeasible allocations") {
  const Topology topo = line(2);
  BufferSet buf(topo);
  const LinkState q{{1, 1}};
  const std::vector<FlowRate> over{{0, 0, 1}, {0, 1, 1}};
  CHECK_THROWS_AS(transmit(buf, over, q, 0), NetworkError);
  const std::vector<FlowRate> stray{{0, 5, 1}};
  CHECK_THROWS(transmit(buf, stray, q, 0));
}

TEST_CASE("prioritisation uses the differential backlog") {
  const Topology topo = line(2);
  BufferSet buf(topo);
  for (std::uint64_t k = 0; k < 4; ++k) buf.inject(Packet{0, 0, {}, 1.0, k});
  buf.inject(Packet{1, 0, {}, 1.0, 0});
  cc_admit(buf, 0, 0);
  cc_admit(buf, 1, 0);
  Rng rng(1);
  const auto pri = prioritize(buf, 0.5, rng);
  CHECK(pri.weight[0] == doctest::Approx(2.0));
  CHECK(pri.loop[0] == LoopId{0});
  CHECK(pri.weight[1] == 0.0);
  CHECK_FALSE(pri.loop[1].has_value());

  const Schedule s = wsr_schedule(LinkState{{1, 1}}, pri.weight, ActionSet{{ActionGroup{{0, 1}, 2, {}}}}, rng);
  const auto flows = assign_rates(s, pri);
  REQUIRE(flows.size() == 1);
  CHECK(flows[0].link == 0);
  CHECK(flows[0].loop == 0);
}

TEST_CASE("stability diagnostic") {
  const std::vector<double> flat(100, 3.0);
  CHECK_FALSE(stability_diagnostic(flat).diverging);
  std::vector<double> ramp;
  for (int k = 0; k < 100; ++k) ramp.push_back(k);
  const auto r = stability_diagnostic(ramp);
  CHECK(r.firstHalfMean == doctest::Approx(24.5));
  CHECK(r.secondHalfMean == doctest::Approx(74.5));
  CHECK(r.diverging);
  CHECK_THROWS_AS(stability_diagnostic(std::vector<double>{}), NetworkError);
}
