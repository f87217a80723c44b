#include "ncs/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ncs {

namespace {

bool tied(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

// ---------------------------------------------------------------- Topology

NodeId Topology::add_node(std::string name) {
  nodeNames_.push_back(std::move(name));
  return static_cast<NodeId>(nodeNames_.size() - 1);
}

LinkId Topology::add_link(NodeId from, NodeId to) {
  if (from >= node_count() || to >= node_count()) throw NetworkError("link endpoint is not a node");
  if (from == to) throw NetworkError("self-loop link at node " + node_name(from));
  links_.push_back({from, to});
  loopsOnLink_.emplace_back();
  return static_cast<LinkId>(links_.size() - 1);
}

LoopId Topology::add_path(std::vector<LinkId> route) {
  if (route.empty()) throw NetworkError("route must contain at least one link");
  std::vector<NodeId> visited;
  for (std::size_t h = 0; h < route.size(); ++h) {
    if (route[h] >= link_count()) throw NetworkError("route uses an unknown link");
    const Link& l = links_[route[h]];
    if (h > 0 && links_[route[h - 1]].to != l.from) throw NetworkError("route is not connected");
    if (h == 0) visited.push_back(l.from);
    if (std::find(visited.begin(), visited.end(), l.to) != visited.end()) {
      throw NetworkError("route revisits node " + node_name(l.to));
    }
    visited.push_back(l.to);
  }
  const auto id = static_cast<LoopId>(paths_.size());
  for (LinkId l : route) loopsOnLink_[l].push_back(id);
  paths_.push_back(std::move(route));
  return id;
}

std::optional<std::size_t> Topology::hop_of(LoopId i, LinkId l) const {
  const auto& p = path(i);
  const auto it = std::find(p.begin(), p.end(), l);
  if (it == p.end()) return std::nullopt;
  return static_cast<std::size_t>(it - p.begin());
}

std::vector<LoopId> Topology::sources_at(NodeId n) const {
  std::vector<LoopId> out;
  for (LoopId i = 0; i < loop_count(); ++i) {
    if (source(i) == n) out.push_back(i);
  }
  return out;
}

void Topology::validate() const {
  for (LoopId i = 0; i < loop_count(); ++i) {
    const auto& p = paths_[i];
    for (std::size_t h = 1; h < p.size(); ++h) {
      if (links_[p[h - 1]].to != links_[p[h]].from) {
        throw NetworkError("route of loop " + std::to_string(i) + " is not connected");
      }
    }
  }
}

// ---------------------------------------------------------------- Buffers

BufferSet::BufferSet(const Topology& topology)
    : topology_(&topology), cc_(topology.loop_count()), tx_(topology.loop_count()) {
  for (LoopId i = 0; i < topology.loop_count(); ++i) tx_[i].resize(topology.path(i).size());
}

void BufferSet::inject(Packet p) {
  if (!(p.size > 0)) throw NetworkError("packet size must be positive");
  cc_.at(p.loop).push_back(std::move(p));
}

std::size_t BufferSet::tx_backlog(NodeId n, LoopId i) const {
  const auto& route = topology_->path(i);
  for (std::size_t h = 0; h < route.size(); ++h) {
    if (topology_->link(route[h]).from == n) return tx_[i][h].size();
  }
  return 0;
}

std::size_t BufferSet::resident() const {
  std::size_t total = 0;
  for (const auto& q : cc_) total += q.size();
  for (const auto& hops : tx_) {
    for (const auto& q : hops) total += q.size();
  }
  return total;
}

std::size_t cc_admit(BufferSet& buffers, LoopId i, std::int64_t slot) {
  auto& cc = buffers.cc(i);
  auto& src = buffers.hop_queue(i, 0);
  const std::size_t admitted = cc.size();
  while (!cc.empty()) {
    src.push_back({std::move(cc.front()), slot});
    cc.pop_front();
  }
  return admitted;
}

// ---------------------------------------------------------------- Link state

LinkStateProcess LinkStateProcess::constant(std::size_t links, double rate) {
  LinkState s{std::vector<double>(links, rate)};
  return LinkStateProcess([s](std::int64_t, Rng&) { return s; });
}

// ---------------------------------------------------------------- Actions

std::size_t ActionGroup::action_count() const {
  if (!is_subset_rule()) return explicitActions.size();
  // sum_{j=0}^{k} C(n, j)
  const std::size_t n = links.size();
  std::size_t total = 0;
  std::size_t binom = 1;
  for (std::size_t j = 0; j <= std::min(maxActive, n); ++j) {
    total += binom;
    binom = binom * (n - j) / (j + 1);
  }
  return total;
}

std::vector<std::vector<LinkId>> ActionGroup::enumerate() const {
  if (!is_subset_rule()) return explicitActions;
  std::vector<std::vector<LinkId>> out;
  std::vector<LinkId> current;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    out.push_back(current);
    if (current.size() == maxActive) return;
    for (std::size_t j = start; j < links.size(); ++j) {
      current.push_back(links[j]);
      rec(j + 1);
      current.pop_back();
    }
  };
  rec(0);
  return out;
}

std::size_t ActionSet::joint_action_count() const {
  std::size_t total = 1;
  for (const auto& g : groups) total *= g.action_count();
  return total;
}

void ActionSet::validate(std::size_t linkCount) const {
  if (groups.empty()) throw NetworkError("action set is empty");
  std::vector<int> owner(linkCount, -1);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (g.action_count() == 0) throw NetworkError("action group has no actions");
    for (LinkId l : g.links) {
      if (l >= linkCount) throw NetworkError("action group references an unknown link");
      if (owner[l] != -1) throw NetworkError("link appears in two action groups");
      owner[l] = static_cast<int>(gi);
    }
    for (const auto& a : g.explicitActions) {
      for (LinkId l : a) {
        if (l >= linkCount || owner[l] != static_cast<int>(gi)) {
          throw NetworkError("explicit action activates a link outside its group");
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Scheduling

std::optional<LoopId> assign_flow(std::span<const std::pair<LoopId, double>> weights, Rng& rng) {
  std::optional<LoopId> best;
  double bestW = 0.0;
  std::size_t ties = 0;
  for (const auto& [loop, w] : weights) {
    if (!(w > 0.0)) continue;
    if (!best || (w > bestW && !tied(w, bestW))) {
      best = loop;
      bestW = w;
      ties = 1;
    } else if (tied(w, bestW)) {
      ++ties;
      if (uniform_index(rng, ties) == 0) best = loop;
    }
  }
  return best;
}

LinkPriorities prioritize(const BufferSet& buffers, double theta, Rng& rng) {
  const Topology& topo = buffers.topology();
  LinkPriorities out;
  out.weight.assign(topo.link_count(), 0.0);
  out.loop.assign(topo.link_count(), std::nullopt);
  std::vector<std::pair<LoopId, double>> perLoop;
  for (LinkId l = 0; l < topo.link_count(); ++l) {
    perLoop.clear();
    for (LoopId i : topo.loops_on(l)) {
      const std::size_t hop = *topo.hop_of(i, l);
      const auto up = static_cast<double>(buffers.hop_queue(i, hop).size());
      const bool last = hop + 1 == topo.path(i).size();
      const double down = last ? 0.0 : static_cast<double>(buffers.hop_queue(i, hop + 1).size());
      perLoop.emplace_back(i, differential_backlog(up, down, theta));
    }
    out.loop[l] = assign_flow(perLoop, rng);
    for (const auto& [i, w] : perLoop) out.weight[l] = std::max(out.weight[l], w);
  }
  return out;
}

Schedule wsr_schedule(const LinkState& state, std::span<const double> linkWeights,
                      const ActionSet& actions, Rng& rng) {
  if (actions.groups.empty()) throw NetworkError("wsr_schedule: empty action set");
  const std::size_t links = state.rate.size();
  if (linkWeights.size() != links) throw NetworkError("wsr_schedule: weight/link count mismatch");

  Schedule s;
  s.rates.assign(links, 0.0);
  auto value = [&](LinkId l) { return linkWeights[l] * state.rate[l]; };

  std::vector<std::pair<double, LinkId>> positive;
  std::vector<LinkId> boundary;
  for (const auto& g : actions.groups) {
    if (g.is_subset_rule()) {
      positive.clear();
      for (LinkId l : g.links) {
        const double v = value(l);
        if (v > 0.0) positive.emplace_back(v, l);
      }
      std::stable_sort(positive.begin(), positive.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      if (positive.size() <= g.maxActive) {
        for (const auto& [v, l] : positive) {
          s.active.push_back(l);
          s.objective += v;
        }
        continue;
      }
      const double cut = positive[g.maxActive - 1].first;
      boundary.clear();
      std::size_t taken = 0;
      for (const auto& [v, l] : positive) {
        if (tied(v, cut)) {
          boundary.push_back(l);
        } else if (v > cut) {
          s.active.push_back(l);
          s.objective += v;
          ++taken;
        }
      }
      // Uniform sample of the remaining slots among links tied at the cut.
      const std::size_t need = g.maxActive - taken;
      for (std::size_t j = 0; j < need; ++j) {
        const std::size_t pick = j + uniform_index(rng, boundary.size() - j);
        std::swap(boundary[j], boundary[pick]);
        s.active.push_back(boundary[j]);
        s.objective += value(boundary[j]);
      }
      continue;
    }

    std::size_t choice = 0;
    double best = 0.0;
    std::size_t ties = 0;
    for (std::size_t a = 0; a < g.explicitActions.size(); ++a) {
      double v = 0.0;
      for (LinkId l : g.explicitActions[a]) v += value(l);
      if (ties == 0 || (v > best && !tied(v, best))) {
        best = v;
        choice = a;
        ties = 1;
      } else if (tied(v, best)) {
        ++ties;
        if (uniform_index(rng, ties) == 0) choice = a;
      }
    }
    for (LinkId l : g.explicitActions[choice]) s.active.push_back(l);
    s.objective += best;
  }
  for (LinkId l : s.active) s.rates[l] = state.rate[l];
  return s;
}

std::vector<FlowRate> assign_rates(const Schedule& schedule, const LinkPriorities& priorities) {
  std::vector<FlowRate> flows;
  for (LinkId l : schedule.active) {
    if (schedule.rates[l] > 0.0 && priorities.loop[l]) {
      flows.push_back({l, *priorities.loop[l], schedule.rates[l]});
    }
  }
  return flows;
}

std::vector<Packet> transmit(BufferSet& buffers, std::span<const FlowRate> flows,
                             const LinkState& state, std::int64_t slot) {
  const Topology& topo = buffers.topology();
  std::vector<double> used(topo.link_count(), 0.0);
  for (const auto& f : flows) {
    if (f.link >= topo.link_count()) throw NetworkError("transmit: unknown link");
    if (f.rate < 0.0) throw NetworkError("transmit: negative rate");
    used[f.link] += f.rate;
    if (used[f.link] > state.rate[f.link] + 1e-9) {
      throw NetworkError("transmit: rates assigned to link " + std::to_string(f.link) +
                         " exceed its capacity");
    }
    if (!topo.hop_of(f.loop, f.link)) {
      throw NetworkError("transmit: loop " + std::to_string(f.loop) + " is not routed over link " +
                         std::to_string(f.link));
    }
  }

  std::vector<Packet> delivered;
  for (const auto& f : flows) {
    const std::size_t hop = *topo.hop_of(f.loop, f.link);
    const bool last = hop + 1 == topo.path(f.loop).size();
    auto& from = buffers.hop_queue(f.loop, hop);
    // Whole packets only; a fractional remainder is lost for this slot.
    double budget = std::floor(f.rate + 1e-9);
    while (!from.empty() && from.front().readySlot <= slot && from.front().packet.size <= budget) {
      budget -= from.front().packet.size;
      Packet p = std::move(from.front().packet);
      from.pop_front();
      if (last) {
        delivered.push_back(std::move(p));
      } else {
        buffers.hop_queue(f.loop, hop + 1).push_back({std::move(p), slot + 1});
      }
    }
  }
  return delivered;
}

StabilityReport stability_diagnostic(std::span<const double> trace) {
  if (trace.empty()) throw NetworkError("stability_diagnostic: empty trace");
  StabilityReport r;
  const std::size_t half = trace.size() / 2;
  const double total = std::accumulate(trace.begin(), trace.end(), 0.0);
  r.mean = total / static_cast<double>(trace.size());
  if (half == 0) {
    r.firstHalfMean = r.secondHalfMean = r.mean;
    return r;
  }
  const double first = std::accumulate(trace.begin(), trace.begin() + half, 0.0);
  r.firstHalfMean = first / static_cast<double>(half);
  r.secondHalfMean = (total - first) / static_cast<double>(trace.size() - half);
  r.diverging = r.secondHalfMean > 2.0 * r.firstHalfMean;
  return r;
}

}  // namespace ncs
