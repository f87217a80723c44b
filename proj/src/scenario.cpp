#include <string>

#include "ncs/sim.hpp"

namespace ncs {

void Scenario::validate() const {
  if (slotsPerControlStep < 1) throw NetworkError("slotsPerControlStep must be at least 1");
  if (horizon < 1) throw NetworkError("horizon must be at least one control step");
  if (!(theta > 0)) throw NetworkError("theta must be positive");
  if (loops.size() != topology.loop_count()) {
    throw NetworkError("scenario has " + std::to_string(loops.size()) + " loops but " +
                       std::to_string(topology.loop_count()) + " routes");
  }
  for (const auto& l : loops) l.plant.validate();
  topology.validate();
  actions.validate(topology.link_count());
}

Scenario make_two_hop_scenario(int loops, std::uint64_t seed, std::int64_t horizon, double theta) {
  if (loops < 2 || loops % 2 != 0) {
    throw ConfigError("L", "two-hop scenario needs an even loop count >= 2, got " +
                               std::to_string(loops));
  }
  Scenario s;
  s.seed = seed;
  s.horizon = horizon;
  s.theta = theta;
  s.slotsPerControlStep = 10;

  const auto n = static_cast<std::size_t>(loops);
  std::vector<NodeId> sources(n), sinks(n);
  for (std::size_t i = 0; i < n; ++i) sources[i] = s.topology.add_node("s" + std::to_string(i));
  const NodeId bs = s.topology.add_node("bs");
  for (std::size_t i = 0; i < n; ++i) sinks[i] = s.topology.add_node("t" + std::to_string(i));

  ActionGroup uplink{{}, 2, {}};
  ActionGroup downlink{{}, 2, {}};
  std::vector<LinkId> up(n), down(n);
  for (std::size_t i = 0; i < n; ++i) up[i] = s.topology.add_link(sources[i], bs);
  for (std::size_t i = 0; i < n; ++i) down[i] = s.topology.add_link(bs, sinks[i]);
  for (std::size_t i = 0; i < n; ++i) {
    s.topology.add_path({up[i], down[i]});
    uplink.links.push_back(up[i]);
    downlink.links.push_back(down[i]);

    const bool stable = i % 2 == 0;
    LoopConfig cfg;
    cfg.plant = PlantSpec<double>::scalar(stable ? 0.75 : 1.25, 1.0, 1.0, 1.0, 0.0,
                                          stable ? kStableClass : kUnstableClass);
    cfg.plant.period = 1.0;
    cfg.plant.weight = 1.0;
    cfg.classLabel = stable ? kStableClass : kUnstableClass;
    cfg.streamId = i;
    s.loops.push_back(std::move(cfg));
  }
  s.actions.groups = {std::move(uplink), std::move(downlink)};
  s.linkState = LinkStateProcess::constant(s.topology.link_count(), 1.0);
  return s;
}

}  // namespace ncs
