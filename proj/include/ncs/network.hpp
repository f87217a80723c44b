#pragma once

// Multi-hop network with fixed per-loop routes: CC and MAC buffers, pass-through
// congestion control, differential-backlog flow prioritisation and the
// weighted-sum-rate scheduler.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ncs/error.hpp"

namespace ncs {

using NodeId = std::uint32_t;
using LinkId = std::uint32_t;
using LoopId = std::uint32_t;
using Rng = std::mt19937_64;

struct Link {
  NodeId from;
  NodeId to;
};

class Topology {
 public:
  NodeId add_node(std::string name);
  LinkId add_link(NodeId from, NodeId to);
  /// Registers the route of the next loop; source and target are its endpoints.
  LoopId add_path(std::vector<LinkId> links);

  std::size_t node_count() const { return nodeNames_.size(); }
  std::size_t link_count() const { return links_.size(); }
  std::size_t loop_count() const { return paths_.size(); }

  const std::string& node_name(NodeId n) const { return nodeNames_.at(n); }
  const Link& link(LinkId l) const { return links_.at(l); }
  const std::vector<LinkId>& path(LoopId i) const { return paths_.at(i); }
  NodeId source(LoopId i) const { return links_[paths_.at(i).front()].from; }
  NodeId target(LoopId i) const { return links_[paths_.at(i).back()].to; }
  /// Loops whose route uses link l.
  const std::vector<LoopId>& loops_on(LinkId l) const { return loopsOnLink_.at(l); }
  /// Position of link l on loop i's route.
  std::optional<std::size_t> hop_of(LoopId i, LinkId l) const;
  /// Loops whose source is node n.
  std::vector<LoopId> sources_at(NodeId n) const;

  void validate() const;

 private:
  std::vector<std::string> nodeNames_;
  std::vector<Link> links_;
  std::vector<std::vector<LinkId>> paths_;
  std::vector<std::vector<LoopId>> loopsOnLink_;
};

struct Packet {
  LoopId loop = 0;
  std::int64_t birthStep = 0;
  Eigen::VectorXd payload;
  double size = 1.0;
  /// Per-loop injection order.
  std::uint64_t seq = 0;
};

/// CC buffers Y^i at the sources and MAC buffers B_n^i along each route.
/// Target nodes hold nothing: arrivals there are delivered immediately.
class BufferSet {
 public:
  struct Entry {
    Packet packet;
    /// First slot in which the packet may leave this buffer.
    std::int64_t readySlot;
  };

  explicit BufferSet(const Topology& topology);

  void inject(Packet p);

  std::size_t cc_backlog(LoopId i) const { return cc_.at(i).size(); }
  /// Packets of loop i queued at node n (0 off-route and at the target).
  std::size_t tx_backlog(NodeId n, LoopId i) const;
  std::size_t source_backlog(LoopId i) const { return tx_.at(i).front().size(); }
  std::size_t resident() const;

  std::deque<Packet>& cc(LoopId i) { return cc_.at(i); }
  std::deque<Entry>& hop_queue(LoopId i, std::size_t hop) { return tx_.at(i).at(hop); }
  const std::deque<Entry>& hop_queue(LoopId i, std::size_t hop) const { return tx_.at(i).at(hop); }

  const Topology& topology() const { return *topology_; }

 private:
  const Topology* topology_;
  std::vector<std::deque<Packet>> cc_;
  std::vector<std::vector<std::deque<Entry>>> tx_;
};

/// Per-link rate available when a link is activated (packets per slot).
struct LinkState {
  std::vector<double> rate;
};

class LinkStateProcess {
 public:
  using Sampler = std::function<LinkState(std::int64_t slot, Rng& rng)>;

  explicit LinkStateProcess(Sampler s) : sampler_(std::move(s)) {}
  static LinkStateProcess constant(std::size_t links, double rate);

  LinkState sample(std::int64_t slot, Rng& rng) const { return sampler_(slot, rng); }

 private:
  Sampler sampler_;
};

/// A pool of links sharing a resource. Either an explicit list of admissible
/// activation sets, or "any subset of at most maxActive links".
struct ActionGroup {
  std::vector<LinkId> links;
  std::size_t maxActive = 1;
  std::vector<std::vector<LinkId>> explicitActions;

  bool is_subset_rule() const { return explicitActions.empty(); }
  std::size_t action_count() const;
  /// Every admissible activation set, in a fixed order.
  std::vector<std::vector<LinkId>> enumerate() const;
};

/// Joint actions are the Cartesian product of the groups' actions.
struct ActionSet {
  std::vector<ActionGroup> groups;

  std::size_t joint_action_count() const;
  void validate(std::size_t linkCount) const;
};

struct Schedule {
  std::vector<LinkId> active;
  /// R_mn for every link under the chosen action.
  std::vector<double> rates;
  double objective = 0.0;
};

struct FlowRate {
  LinkId link;
  LoopId loop;
  double rate;
};

template <typename T>
T lindley_step(T backlog, T arrivals, T service) {
  const T next = backlog + arrivals - service;
  return next > T(0) ? next : T(0);
}

/// Pass-through congestion control: the whole CC backlog of loop i enters the
/// source MAC buffer and may be transmitted in this slot.
std::size_t cc_admit(BufferSet& buffers, LoopId i, std::int64_t slot);

inline double differential_backlog(double upstream, double downstream, double theta = 1.0) {
  return theta * (upstream > downstream ? upstream - downstream : 0.0);
}

/// Loop with the largest positive weight, uniform among ties; nullopt when
/// every weight is zero.
std::optional<LoopId> assign_flow(std::span<const std::pair<LoopId, double>> weights, Rng& rng);

struct LinkPriorities {
  std::vector<double> weight;
  std::vector<std::optional<LoopId>> loop;
};

/// W_mn^i = theta [B_m^i - B_n^i]^+ for every route link, reduced per link.
LinkPriorities prioritize(const BufferSet& buffers, double theta, Rng& rng);

/// Maximises sum_l W_l R_l(Q, A) over the action set. Explicit groups are
/// searched exhaustively; subset groups take the top-k positive terms, which
/// is the same maximum. Ties are broken uniformly at random.
Schedule wsr_schedule(const LinkState& state, std::span<const double> linkWeights,
                      const ActionSet& actions, Rng& rng);

/// Gives each active link's whole rate to its prioritised loop.
std::vector<FlowRate> assign_rates(const Schedule& schedule, const LinkPriorities& priorities);

/// Moves whole packets FIFO along each (link, loop) allocation. Packets
/// forwarded in `slot` become eligible at the next hop in slot + 1; arrivals at
/// a target are returned as deliveries.
std::vector<Packet> transmit(BufferSet& buffers, std::span<const FlowRate> flows,
                             const LinkState& state, std::int64_t slot);

struct StabilityReport {
  double mean = 0.0;
  double firstHalfMean = 0.0;
  double secondHalfMean = 0.0;
  /// Second-half average more than twice the first-half average.
  bool diverging = false;
};

StabilityReport stability_diagnostic(std::span<const double> backlogTrace);

}  // namespace ncs
