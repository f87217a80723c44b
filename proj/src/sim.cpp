#include "ncs/sim.hpp"

#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

namespace ncs {

double LoopMetrics::rate() const {
  return rateSteps ? static_cast<double>(injected) / static_cast<double>(rateSteps) : 0.0;
}

double LoopMetrics::delay() const {
  return delivered ? delaySum / static_cast<double>(delivered)
                   : std::numeric_limits<double>::quiet_NaN();
}

double LoopMetrics::cost() const {
  return costSteps ? costSum / static_cast<double>(costSteps) : 0.0;
}

double LoopMetrics::backlog() const {
  return backlogSlots ? backlogSum / static_cast<double>(backlogSlots) : 0.0;
}

ClassSummary MetricsTrace::summarize(const std::string& classLabel) const {
  ClassSummary s;
  std::size_t withDelay = 0;
  for (const auto& l : loops) {
    if (classLabel != "all" && l.classLabel != classLabel) continue;
    ++s.loops;
    s.rate += l.rate();
    s.backlog += l.backlog();
    s.cost += l.cost();
    if (l.delivered) {
      s.delay += l.delay();
      ++withDelay;
    }
  }
  if (s.loops) {
    const auto n = static_cast<double>(s.loops);
    s.rate /= n;
    s.backlog /= n;
    s.cost /= n;
  }
  s.delay = withDelay ? s.delay / static_cast<double>(withDelay)
                      : std::numeric_limits<double>::quiet_NaN();
  return s;
}

namespace {

Rng make_stream(std::uint64_t seed, std::uint64_t key, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32), tag};
  return Rng(seq);
}

constexpr std::uint32_t kNoiseTag = 0x6e6f6973;
constexpr std::uint32_t kNetworkTag = 0x6e657477;

struct LoopRuntime {
  const LoopConfig* config = nullptr;
  LqgSolution<double> lqg;
  Matrix<double> noiseFactor;
  SamplerState sampler;
  LoopState<double> state;
  Rng noiseRng;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::vector<Packet> arrived;
  /// Births of packets injected but not yet consumed by the estimator.
  std::deque<std::int64_t> outstanding;
  std::uint64_t nextSeq = 0;
  // Invariant bookkeeping.
  std::uint64_t lastDeliveredSeq = 0;
  bool anyDelivered = false;
  std::size_t lindleySource = 0;
};

Eigen::VectorXd draw_noise(LoopRuntime& rt) {
  Eigen::VectorXd xi(rt.noiseFactor.cols());
  for (Eigen::Index j = 0; j < xi.size(); ++j) xi(j) = rt.normal(rt.noiseRng);
  return rt.noiseFactor * xi;
}

std::vector<std::size_t> downstream_backlogs(const BufferSet& buffers) {
  const Topology& topo = buffers.topology();
  std::vector<std::size_t> out(topo.loop_count(), 0);
  for (LoopId i = 0; i < topo.loop_count(); ++i) {
    for (std::size_t h = 1; h < topo.path(i).size(); ++h) out[i] += buffers.hop_queue(i, h).size();
  }
  return out;
}

}  // namespace

MetricsTrace run(const Scenario& scenario, const TableSet& tables, const RunOptions& opts) {
  scenario.validate();
  if (!(opts.warmupFraction >= 0.0 && opts.warmupFraction < 1.0)) {
    throw ConfigError("warmup", "warm-up fraction must lie in [0, 1)");
  }
  const Topology& topo = scenario.topology;
  const std::size_t loopCount = scenario.loops.size();
  const std::int64_t S = scenario.slotsPerControlStep;
  const std::int64_t totalSlots = scenario.horizon * S;
  const auto warmupStep =
      static_cast<std::int64_t>(std::floor(opts.warmupFraction * static_cast<double>(scenario.horizon)));
  const std::int64_t warmupSlot = warmupStep * S;

  std::vector<LoopRuntime> rt(loopCount);
  MetricsTrace trace;
  trace.loops.resize(loopCount);
  for (std::size_t i = 0; i < loopCount; ++i) {
    const LoopConfig& cfg = scenario.loops[i];
    auto& r = rt[i];
    r.config = &cfg;
    r.lqg = lqg_design(cfg.plant);
    r.noiseFactor = noise_factor(cfg.plant.Z);
    r.sampler.theta = scenario.theta;
    if (!opts.forcedSampling) {
      const auto it = tables.find(cfg.classLabel);
      if (it == tables.end()) {
        throw DesignError("no threshold table for plant class '" + cfg.classLabel + "'");
      }
      r.sampler.table = &it->second;
    }
    r.state = LoopState<double>::zero(cfg.plant, 64);
    r.noiseRng = make_stream(scenario.seed, cfg.streamId, kNoiseTag);
    trace.loops[i].classLabel = cfg.classLabel;
  }
  Rng netRng = make_stream(scenario.seed, 0, kNetworkTag);
  BufferSet buffers(topo);

  std::uint64_t injectedTotal = 0;
  std::uint64_t deliveredTotal = 0;
  if (totalSlots > warmupSlot) trace.networkBacklog.reserve(static_cast<std::size_t>(totalSlots - warmupSlot));

  auto control_event = [&](LoopId i, std::int64_t step) {
    auto& r = rt[i];
    auto& st = r.state;
    auto& m = trace.loops[i];
    const auto& spec = r.config->plant;
    StepRecord rec;
    if (step > 0) {
      const std::int64_t k = step - 1;
      // Newest fresh sample wins; older ones carry no extra information.
      const Packet* newest = nullptr;
      for (const auto& p : r.arrived) {
        if (p.birthStep > st.newestAppliedBirth && (!newest || p.birthStep > newest->birthStep)) {
          newest = &p;
        }
      }
      if (newest) {
        st.xhat = estimator_deliver(newest->payload, newest->birthStep, k, st.appliedInputs, spec);
        st.newestAppliedBirth = newest->birthStep;
      }
      for (std::size_t n = r.arrived.size(); n > 0; --n) r.outstanding.pop_front();
      r.arrived.clear();

      const Eigen::VectorXd u = control_input(st.xhat, r.lqg);
      st.appliedInputs.push(k, u);
      const double cost = stage_cost(st.x, u, spec);
      if (k >= warmupStep) {
        m.costSum += cost;
        ++m.costSteps;
      }
      const Eigen::VectorXd w = draw_noise(r);
      st.x = plant_step(st.x, u, w, spec);
      st.e = error_step(st.e, st.lastDecision, w, spec);
      st.xhat = estimator_predict(st.xhat, spec, r.lqg);
      st.k = step;
      if (opts.recordStepTrace) {
        rec.noise = w;
        rec.stageCost = cost;
      }
    } else if (opts.recordStepTrace) {
      rec.noise = Eigen::VectorXd::Zero(spec.state_dim());
    }

    const bool delta = opts.forcedSampling
                           ? opts.forcedSampling(i, step)
                           : sampling_decision(st.e, static_cast<double>(buffers.source_backlog(i)),
                                               r.sampler);
    st.lastDecision = delta;
    if (delta) {
      buffers.inject(Packet{i, step, st.x, 1.0, r.nextSeq++});
      r.outstanding.push_back(step);
      ++injectedTotal;
      if (step >= warmupStep) ++m.injected;
    }
    if (step >= warmupStep) ++m.rateSteps;
    if (r.outstanding.empty()) {
      st.appliedInputs.unpin();
    } else {
      st.appliedInputs.pin(r.outstanding.front());
    }
    if (opts.recordStepTrace) {
      rec.error = st.e.norm();
      rec.errorVec = st.e;
      rec.sampled = delta;
      m.steps.push_back(std::move(rec));
    }
  };

  for (std::int64_t slot = 0; slot < totalSlots; ++slot) {
    if (slot % S == 0) {
      const std::int64_t step = slot / S;
      for (LoopId i = 0; i < loopCount; ++i) control_event(i, step);
    }

    std::vector<std::size_t> admitted(loopCount, 0);
    for (LoopId i = 0; i < loopCount; ++i) admitted[i] = cc_admit(buffers, i, slot);

    const LinkState q = scenario.linkState.sample(slot, netRng);
    if (q.rate.size() != topo.link_count()) throw NetworkError("link state has wrong link count");
    const LinkPriorities pri = prioritize(buffers, scenario.theta, netRng);
    const Schedule sched = wsr_schedule(q, pri.weight, scenario.actions, netRng);
    const std::vector<FlowRate> flows = assign_rates(sched, pri);
    std::vector<std::size_t> downstreamBefore;
    if (opts.checkInvariants) downstreamBefore = downstream_backlogs(buffers);
    std::vector<Packet> delivered = transmit(buffers, flows, q, slot);

    const std::int64_t stepNow = slot / S;
    std::vector<std::size_t> deliveredThisSlot(loopCount, 0);
    for (auto& p : delivered) {
      ++deliveredThisSlot[p.loop];
      auto& r = rt[p.loop];
      auto& m = trace.loops[p.loop];
      const std::int64_t delay = stepNow - p.birthStep;
      if (opts.checkInvariants) {
        if (delay < 0) throw NetworkError("negative delivery delay");
        if (r.anyDelivered && p.seq <= r.lastDeliveredSeq) {
          throw NetworkError("FIFO violated for loop " + std::to_string(p.loop));
        }
      }
      r.anyDelivered = true;
      r.lastDeliveredSeq = p.seq;
      ++deliveredTotal;
      if (p.birthStep >= warmupStep) {
        ++m.delivered;
        m.delaySum += static_cast<double>(delay);
        m.maxDelay = std::max(m.maxDelay, delay);
      }
      r.arrived.push_back(std::move(p));
    }

    if (opts.checkInvariants) {
      if (injectedTotal != deliveredTotal + buffers.resident()) {
        throw NetworkError("packet conservation violated at slot " + std::to_string(slot));
      }
      const std::vector<std::size_t> downstreamAfter = downstream_backlogs(buffers);
      for (LoopId i = 0; i < loopCount; ++i) {
        // Source MAC buffer must follow B+ = max(B + mu - out, 0), with `out`
        // the packets that showed up downstream or at the target.
        const std::size_t before = rt[i].lindleySource;
        const std::size_t after = buffers.source_backlog(i);
        const auto out = static_cast<std::int64_t>(downstreamAfter[i] + deliveredThisSlot[i]) -
                         static_cast<std::int64_t>(downstreamBefore[i]);
        if (lindley_step(static_cast<std::int64_t>(before), static_cast<std::int64_t>(admitted[i]),
                         out) != static_cast<std::int64_t>(after)) {
          throw NetworkError("source backlog departs from the Lindley recursion");
        }
        if (buffers.cc_backlog(i) != 0) throw NetworkError("CC buffer not drained by pass-through");
        rt[i].lindleySource = after;
      }
    }

    if (slot >= warmupSlot) {
      for (LoopId i = 0; i < loopCount; ++i) {
        const auto b = static_cast<double>(buffers.source_backlog(i));
        auto& m = trace.loops[i];
        m.backlogSum += b;
        ++m.backlogSlots;
        if (opts.recordSlotTrace) m.sourceBacklog.push_back(b);
      }
      trace.networkBacklog.push_back(static_cast<double>(buffers.resident()));
    }
  }

  if (!trace.networkBacklog.empty()) trace.stability = stability_diagnostic(trace.networkBacklog);
  return trace;
}

std::uint64_t replication_seed(std::uint64_t masterSeed, int loops, int rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(masterSeed),
                    static_cast<std::uint32_t>(masterSeed >> 32), static_cast<std::uint32_t>(loops),
                    static_cast<std::uint32_t>(rep)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Estimate estimate(const std::vector<double>& samples) {
  Estimate e;
  double sum = 0.0;
  for (double v : samples) {
    if (std::isnan(v)) continue;
    sum += v;
    ++e.samples;
  }
  if (e.samples == 0) {
    e.mean = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  e.mean = sum / e.samples;
  if (e.samples < 2) return e;
  double ss = 0.0;
  for (double v : samples) {
    if (!std::isnan(v)) ss += (v - e.mean) * (v - e.mean);
  }
  e.ci95 = 1.96 * std::sqrt(ss / (e.samples - 1)) / std::sqrt(static_cast<double>(e.samples));
  return e;
}

std::vector<SweepPoint> sweep(const std::vector<int>& loopCounts, int replications,
                              std::uint64_t masterSeed, const ScenarioFactory& make,
                              const TableSet& tables, const SweepOptions& opts) {
  if (replications < 1) throw ConfigError("replications", "must be at least 1");
  const std::size_t reps = static_cast<std::size_t>(replications);
  const std::size_t tasks = loopCounts.size() * reps;

  struct Outcome {
    std::map<std::string, ClassSummary> byClass;
    bool diverging = false;
  };
  std::vector<Outcome> outcomes(tasks);
  std::vector<std::size_t> remaining(loopCounts.size(), reps);
  std::vector<SweepPoint> points(loopCounts.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;

  auto finish_point = [&](std::size_t p) {
    SweepPoint& sp = points[p];
    sp.loops = loopCounts[p];
    sp.replications = replications;
    std::map<std::string, std::vector<ClassSummary>> perClass;
    for (std::size_t r = 0; r < reps; ++r) {
      const Outcome& o = outcomes[p * reps + r];
      sp.diverging = sp.diverging || o.diverging;
      for (const auto& [label, s] : o.byClass) perClass[label].push_back(s);
    }
    for (const auto& [label, list] : perClass) {
      std::vector<double> rate, backlog, delay, cost;
      for (const auto& s : list) {
        rate.push_back(s.rate);
        backlog.push_back(s.backlog);
        delay.push_back(s.delay);
        cost.push_back(s.cost);
      }
      sp.byClass[label] = {estimate(rate), estimate(backlog), estimate(delay), estimate(cost)};
    }
  };

  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      const std::size_t p = t / reps;
      const int rep = static_cast<int>(t % reps);
      try {
        {
          std::lock_guard lock(mu);
          if (failure) return;
        }
        const Scenario sc = make(loopCounts[p], replication_seed(masterSeed, loopCounts[p], rep));
        const MetricsTrace tr = run(sc, tables, opts.run);
        Outcome o;
        o.diverging = tr.stability.diverging;
        o.byClass["all"] = tr.summarize("all");
        for (const auto& l : sc.loops) {
          if (!o.byClass.count(l.classLabel)) o.byClass[l.classLabel] = tr.summarize(l.classLabel);
        }
        std::lock_guard lock(mu);
        outcomes[t] = std::move(o);
        if (--remaining[p] == 0) {
          finish_point(p);
          if (opts.onPoint) opts.onPoint(points[p]);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  unsigned threads = opts.threads > 0 ? static_cast<unsigned>(opts.threads)
                                      : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(tasks, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return points;
}

}  // namespace ncs
