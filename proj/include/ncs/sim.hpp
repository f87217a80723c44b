#pragma once

// Slotted co-simulation of control loops sharing a back-pressure scheduled
// network, the two-hop cellular scenario, and replication sweeps.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ncs/control.hpp"
#include "ncs/network.hpp"
#include "ncs/sampler.hpp"

namespace ncs {

struct LoopConfig {
  PlantSpec<double> plant;
  std::string classLabel;
  /// Key of the loop's noise stream; defaults to its index.
  std::uint64_t streamId = 0;
};

struct Scenario {
  std::vector<LoopConfig> loops;
  Topology topology;
  ActionSet actions;
  LinkStateProcess linkState = LinkStateProcess::constant(0, 0.0);
  int slotsPerControlStep = 10;
  std::int64_t horizon = 10'000;
  std::uint64_t seed = 1;
  double theta = 1.0;

  void validate() const;
};

/// Threshold tables keyed by plant class label.
using TableSet = std::map<std::string, ThresholdTable>;

/// Two-hop cellular scenario: source_i -> base station -> sink_i, two channels
/// per hop, 10 slots per control step. Loops alternate A = 0.75 / A = 1.25.
Scenario make_two_hop_scenario(int loops, std::uint64_t seed, std::int64_t horizon = 10'000,
                               double theta = 1.0);

inline constexpr const char* kStableClass = "stable";
inline constexpr const char* kUnstableClass = "unstable";

struct RunOptions {
  double warmupFraction = 0.1;
  /// Verify conservation, Lindley consistency, FIFO order and delay sign at
  /// every slot; throws NetworkError on the first violation.
  bool checkInvariants = false;
  bool recordSlotTrace = false;
  bool recordStepTrace = false;
  /// Replaces the threshold rule when set.
  std::function<bool(LoopId, std::int64_t step)> forcedSampling;
};

struct StepRecord {
  double error = 0.0;      // sampler error norm at the decision
  bool sampled = false;
  Eigen::VectorXd errorVec;
  Eigen::VectorXd noise;   // w drawn on the way into this step (zero at step 0)
  double stageCost = 0.0;  // cost of the previous step, charged here
};

struct LoopMetrics {
  std::string classLabel;
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  double delaySum = 0.0;
  double costSum = 0.0;
  std::uint64_t costSteps = 0;
  double backlogSum = 0.0;
  std::uint64_t rateSteps = 0;
  std::uint64_t backlogSlots = 0;
  std::int64_t maxDelay = 0;
  std::vector<double> sourceBacklog;
  std::vector<StepRecord> steps;

  double rate() const;
  double delay() const;  // NaN without deliveries
  double cost() const;
  double backlog() const;
};

struct ClassSummary {
  double rate = 0.0;
  double backlog = 0.0;
  double delay = 0.0;
  double cost = 0.0;
  std::size_t loops = 0;
};

struct MetricsTrace {
  std::vector<LoopMetrics> loops;
  /// Total resident packets per measured slot.
  std::vector<double> networkBacklog;
  StabilityReport stability;

  /// Mean of per-loop averages over a class ("all" for every loop).
  ClassSummary summarize(const std::string& classLabel) const;
};

MetricsTrace run(const Scenario& scenario, const TableSet& tables, const RunOptions& opts = {});

struct Estimate {
  double mean = 0.0;
  double ci95 = 0.0;
  int samples = 0;
};

struct ClassAggregate {
  Estimate rate, backlog, delay, cost;
};

struct SweepPoint {
  int loops = 0;
  int replications = 0;
  std::map<std::string, ClassAggregate> byClass;
  bool diverging = false;
};

using ScenarioFactory = std::function<Scenario(int loops, std::uint64_t seed)>;

struct SweepOptions {
  int threads = 0;  // 0: hardware concurrency
  RunOptions run;
  std::function<void(const SweepPoint&)> onPoint;
};

/// Seed of replication `rep` at sweep point `loops`.
std::uint64_t replication_seed(std::uint64_t masterSeed, int loops, int rep);

/// Mean and normal-approximation 95% half-width, skipping NaNs.
Estimate estimate(const std::vector<double>& samples);

std::vector<SweepPoint> sweep(const std::vector<int>& loopCounts, int replications,
                              std::uint64_t masterSeed, const ScenarioFactory& make,
                              const TableSet& tables, const SweepOptions& opts = {});

}  // namespace ncs
