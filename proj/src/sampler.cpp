#include "ncs/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ncs {

const char* to_string(HoldCost c) {
  return c == HoldCost::kPropagated ? "propagated" : "current";
}

HoldCost hold_cost_from_string(const std::string& s) {
  if (s == "propagated") return HoldCost::kPropagated;
  if (s == "current") return HoldCost::kCurrent;
  throw ConfigError("vi.hold_cost", "expected 'propagated' or 'current', got '" + s + "'");
}

void ViConfig::validate() const {
  if (!(eMax > 0)) throw ConfigError("vi.emax", "must be positive");
  if (!(eStep > 0)) throw ConfigError("vi.estep", "must be positive");
  if (eMax / eStep < 100.0 - 1e-9) throw ConfigError("vi.estep", "eMax/eStep must be at least 100");
  const double cells = 2.0 * eMax / eStep;
  if (std::abs(cells - std::round(cells)) > 1e-6) {
    throw ConfigError("vi.estep", "2*eMax must be a whole multiple of eStep");
  }
  if (quadraturePoints < 2 || quadraturePoints > 200) {
    throw ConfigError("vi.quad", "quadrature points must lie in [2, 200]");
  }
  if (!(spanTol > 0)) throw ConfigError("vi.span_tol", "must be positive");
  if (maxIter < 1) throw ConfigError("vi.max_iter", "must be at least 1");
}

std::string ViConfig::key() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "emax=%.17g estep=%.17g quad=%d span=%.17g maxit=%lld hold=%s", eMax,
                eStep, quadraturePoints, spanTol, static_cast<long long>(maxIter),
                to_string(holdCost));
  return buf;
}

std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int points) {
  if (points < 1) throw DesignError("gauss_hermite: need at least one point");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
  for (int k = 1; k < points; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  std::vector<double> nodes(points), weights(points);
  double total = 0.0;
  for (int i = 0; i < points; ++i) {
    nodes[i] = eig.eigenvalues()(i);
    weights[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
    total += weights[i];
  }
  for (double& w : weights) w /= total;
  // Symmetrise: the eigen solver leaves ~1e-15 asymmetry between +/- nodes.
  for (int i = 0; i < points / 2; ++i) {
    const int j = points - 1 - i;
    const double node = 0.5 * (nodes[j] - nodes[i]);
    const double weight = 0.5 * (weights[i] + weights[j]);
    nodes[i] = -node;
    nodes[j] = node;
    weights[i] = weights[j] = weight;
  }
  if (points % 2 == 1) nodes[points / 2] = 0.0;
  return {std::move(nodes), std::move(weights)};
}

namespace {

void require_scalar(const PlantSpec<double>& spec) {
  if (!spec.is_scalar()) {
    throw DesignError(spec.describe() + ": threshold design needs a scalar plant");
  }
}

double hold_weight(const PlantSpec<double>& spec, const LqgSolution<double>& sol, HoldCost c) {
  const double qe = sol.Qe(0, 0);
  const double a = spec.A(0, 0);
  return c == HoldCost::kPropagated ? qe * a * a : qe;
}

}  // namespace

double sampling_stage_cost(double e, bool delta, double lambda, const PlantSpec<double>& spec,
                           const LqgSolution<double>& sol, HoldCost holdCost) {
  if (delta) return lambda;
  return hold_weight(spec, sol, holdCost) * e * e;
}

ViResult solve_sampling_mdp(double lambda, const PlantSpec<double>& spec,
                            const LqgSolution<double>& sol, const ViConfig& cfg) {
  require_scalar(spec);
  cfg.validate();
  if (!(lambda >= 0)) throw DesignError("price lambda must be non-negative");

  const auto cells = static_cast<std::size_t>(std::llround(2.0 * cfg.eMax / cfg.eStep));
  const std::size_t n = cells + 1;
  const std::size_t center = cells / 2;
  const double a = spec.A(0, 0);
  const double sigma = std::sqrt(std::max(spec.Z(0, 0), 0.0));
  const double holdW = hold_weight(spec, sol, cfg.holdCost);
  const auto [nodes, weights] = gauss_hermite(cfg.quadraturePoints);
  const std::size_t nq = nodes.size();

  auto grid = [&](std::size_t i) { return -cfg.eMax + static_cast<double>(i) * cfg.eStep; };

  // Linear interpolation stencil of a point, clamped to the grid.
  struct Stencil {
    std::uint32_t lo;
    double frac;
  };
  auto stencil = [&](double p) {
    p = std::clamp(p, -cfg.eMax, cfg.eMax);
    const double pos = (p + cfg.eMax) / cfg.eStep;
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= n - 1) lo = n - 2;
    return Stencil{static_cast<std::uint32_t>(lo), pos - static_cast<double>(lo)};
  };

  std::vector<Stencil> holdNext(n * nq);
  std::vector<double> holdCost(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = grid(i);
    holdCost[i] = holdW * e * e;
    for (std::size_t q = 0; q < nq; ++q) holdNext[i * nq + q] = stencil(a * e + sigma * nodes[q]);
  }
  std::vector<Stencil> sendNext(nq);
  for (std::size_t q = 0; q < nq; ++q) sendNext[q] = stencil(sigma * nodes[q]);

  std::vector<double> h(n, 0.0), next(n), holdQ(n);
  double sendQ = 0.0;

  auto evaluate = [&]() {
    double ev = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& s = sendNext[q];
      ev += weights[q] * ((1.0 - s.frac) * h[s.lo] + s.frac * h[s.lo + 1]);
    }
    sendQ = lambda + ev;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const Stencil* row = &holdNext[i * nq];
      for (std::size_t q = 0; q < nq; ++q) {
        acc += weights[q] * ((1.0 - row[q].frac) * h[row[q].lo] + row[q].frac * h[row[q].lo + 1]);
      }
      holdQ[i] = holdCost[i] + acc;
    }
  };

  ViResult result;
  bool converged = false;
  for (std::int64_t it = 1; it <= cfg.maxIter; ++it) {
    evaluate();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = std::min(holdQ[i], sendQ);
      const double d = next[i] - h[i];
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    const double ref = next[center];
    for (std::size_t i = 0; i < n; ++i) h[i] = next[i] - ref;
    result.iterations = it;
    result.averageCost = 0.5 * (lo + hi);
    if (hi - lo < cfg.spanTol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw DesignError(spec.describe() + ": value iteration did not converge within " +
                      std::to_string(cfg.maxIter) + " iterations at lambda=" +
                      std::to_string(lambda));
  }

  evaluate();
  int changes = 0;
  bool prev = sendQ <= holdQ[center];
  std::size_t first = prev ? center : n;
  for (std::size_t i = center + 1; i < n; ++i) {
    const bool send = sendQ <= holdQ[i];
    if (send != prev) {
      ++changes;
      if (send && first == n) first = i;
    }
    prev = send;
  }
  if (changes > 1) {
    throw DesignError(spec.describe() + ": optimal policy is not of threshold form at lambda=" +
                      std::to_string(lambda) + " (grid too coarse?)");
  }
  if (first == n) {
    throw DesignError(spec.describe() + ": no transmission region inside eMax at lambda=" +
                      std::to_string(lambda) + "; increase vi.emax");
  }
  result.threshold = std::abs(grid(first));
  if (first == center) result.threshold = 0.0;
  return result;
}

double design_threshold(double lambda, const PlantSpec<double>& spec,
                        const LqgSolution<double>& sol, const ViConfig& cfg) {
  return solve_sampling_mdp(lambda, spec, sol, cfg).threshold;
}

ThresholdTable build_table(const std::vector<double>& lambdaGrid, const PlantSpec<double>& spec,
                           const LqgSolution<double>& sol, const ViConfig& cfg,
                           std::string plantClassId) {
  if (lambdaGrid.empty() || lambdaGrid.front() != 0.0) {
    throw DesignError("lambda grid must start at 0");
  }
  if (!std::is_sorted(lambdaGrid.begin(), lambdaGrid.end()) ||
      std::adjacent_find(lambdaGrid.begin(), lambdaGrid.end()) != lambdaGrid.end()) {
    throw DesignError("lambda grid must be strictly ascending");
  }
  ThresholdTable table;
  table.lambdaGrid = lambdaGrid;
  table.plantClassId = std::move(plantClassId);
  table.thresholds.reserve(lambdaGrid.size());
  double runningMax = 0.0;
  for (double lambda : lambdaGrid) {
    // Isotonic clip: VI jitter of one grid cell must not break monotonicity.
    runningMax = std::max(runningMax, design_threshold(lambda, spec, sol, cfg));
    table.thresholds.push_back(runningMax);
  }
  return table;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g{0.0, 0.25, 0.5, 0.75};
  for (int v = 1; v <= 16; ++v) g.push_back(v);
  for (int v = 18; v <= 40; v += 2) g.push_back(v);
  for (int v = 45; v <= 200; v += 5) g.push_back(v);
  return g;
}

double lookup(const ThresholdTable& table, double lambda) {
  const auto& xs = table.lambdaGrid;
  const auto& ys = table.thresholds;
  if (xs.empty()) throw DesignError("lookup on an empty threshold table");
  if (lambda <= xs.front()) return ys.front();
  if (lambda >= xs.back()) return ys.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), lambda) - xs.begin());
  const std::size_t lo = hi - 1;
  if (lambda == xs[lo]) return ys[lo];
  const double t = (lambda - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

bool sampling_decision(double errorNorm, double backlog, const SamplerState& sampler) {
  if (sampler.table == nullptr) throw DesignError("sampler has no threshold table");
  return errorNorm > lookup(*sampler.table, sampler.theta * backlog);
}

void write_table(std::ostream& os, const ThresholdTable& table, const std::string& cacheKey) {
  os << "# class: " << table.plantClassId << '\n';
  if (!cacheKey.empty()) os << "# key: " << cacheKey << '\n';
  os << "lambda threshold\n";
  char buf[64];
  for (std::size_t i = 0; i < table.lambdaGrid.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", table.lambdaGrid[i], table.thresholds[i]);
    os << buf;
  }
}

ThresholdTable read_table(std::istream& is, std::string* cacheKey) {
  ThresholdTable table;
  std::string line;
  bool sawHeader = false;
  bool sawClass = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# class: ", 0) == 0) {
      table.plantClassId = line.substr(9);
      sawClass = true;
      continue;
    }
    if (line.rfind("# key: ", 0) == 0) {
      if (cacheKey) *cacheKey = line.substr(7);
      continue;
    }
    if (line[0] == '#') continue;
    if (!sawHeader) {
      if (line != "lambda threshold") throw DesignError("threshold table: bad column header");
      sawHeader = true;
      continue;
    }
    std::istringstream row(line);
    double lambda = 0, m = 0;
    if (!(row >> lambda >> m)) throw DesignError("threshold table: malformed row '" + line + "'");
    table.lambdaGrid.push_back(lambda);
    table.thresholds.push_back(m);
  }
  if (!sawClass || !sawHeader || table.lambdaGrid.empty()) {
    throw DesignError("threshold table: missing class line, header or rows");
  }
  return table;
}

}  // namespace ncs
