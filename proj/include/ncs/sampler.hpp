#pragma once

// Event-triggered sampler design: threshold maps lambda -> M(lambda) from
// average-cost value iteration on the scalar error chain, plus the online
// threshold decision priced by the source MAC backlog.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ncs/control.hpp"

namespace ncs {

/// Which error the hold cost is charged on. kPropagated charges Qe on A*e,
/// the error as it reaches the plant one step later; kCurrent charges Qe on e.
enum class HoldCost { kPropagated, kCurrent };

const char* to_string(HoldCost c);
HoldCost hold_cost_from_string(const std::string& s);

struct ViConfig {
  double eMax = 25.0;
  double eStep = 0.05;
  int quadraturePoints = 32;
  double spanTol = 1e-6;
  std::int64_t maxIter = 200'000;
  HoldCost holdCost = HoldCost::kPropagated;

  void validate() const;
  std::string key() const;
};

struct ThresholdTable {
  std::vector<double> lambdaGrid;
  std::vector<double> thresholds;
  std::string plantClassId;
};

struct SamplerState {
  double theta = 1.0;
  const ThresholdTable* table = nullptr;
};

/// Probabilists' Gauss-Hermite rule: nodes and weights (summing to 1) for
/// E[f(X)], X ~ N(0, 1). Golub-Welsch on the Jacobi matrix.
std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int points);

struct ViResult {
  double threshold = 0.0;
  double averageCost = 0.0;
  std::int64_t iterations = 0;
};

/// Relative value iteration for one price. Requires a scalar plant.
ViResult solve_sampling_mdp(double lambda, const PlantSpec<double>& spec,
                            const LqgSolution<double>& sol, const ViConfig& cfg);

double design_threshold(double lambda, const PlantSpec<double>& spec,
                        const LqgSolution<double>& sol, const ViConfig& cfg);

ThresholdTable build_table(const std::vector<double>& lambdaGrid, const PlantSpec<double>& spec,
                           const LqgSolution<double>& sol, const ViConfig& cfg,
                           std::string plantClassId = {});

/// 64 knots over [0, 200]: quarter steps below 1, unit steps to 16, then 2s to
/// 40 and 5s to 200.
std::vector<double> default_lambda_grid();

/// Piecewise-linear, clamped to the last threshold above the grid.
double lookup(const ThresholdTable& table, double lambda);

bool sampling_decision(double errorNorm, double backlog, const SamplerState& sampler);

template <typename Derived>
bool sampling_decision(const Eigen::MatrixBase<Derived>& e, double backlog,
                       const SamplerState& sampler) {
  return sampling_decision(static_cast<double>(e.norm()), backlog, sampler);
}

/// Per-step cost the threshold design minimises on average:
/// (1 - delta) * hold(e) + lambda * delta.
double sampling_stage_cost(double e, bool delta, double lambda, const PlantSpec<double>& spec,
                           const LqgSolution<double>& sol, HoldCost holdCost);

/// Two-column text format; see README for the layout.
void write_table(std::ostream& os, const ThresholdTable& table, const std::string& cacheKey = {});
ThresholdTable read_table(std::istream& is, std::string* cacheKey = nullptr);

}  // namespace ncs
