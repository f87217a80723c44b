#pragma once

// Experiment orchestration behind the ncs_sim command line: configuration,
// threshold-table caching, sweeps and CSV output.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ncs/sampler.hpp"
#include "ncs/sim.hpp"

namespace ncs {

struct RunConfig {
  std::string scenario = "two_hop";
  std::vector<int> loops = default_loop_counts();
  std::int64_t horizon = 10'000;
  int replications = 10;
  std::uint64_t seed = 1;
  double theta = 1.0;
  double warmup = 0.1;
  int threads = 0;
  ViConfig vi;
  std::string outDir = "results";
  /// Empty means <outDir>/tables.
  std::string cacheDir;

  static std::vector<int> default_loop_counts();
  std::string cache_dir() const;
  void validate() const;
};

/// Sets one key; throws ConfigError naming the key on unknown keys or bad values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// key=value lines, '#' comments, blank lines ignored.
RunConfig parse_config_text(std::string_view text, RunConfig base = {});
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

/// "2,4,6" or "start:stop[:step]" (inclusive).
std::vector<int> parse_loop_list(std::string_view text);

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitUnstable = 3 };

/// Builds, or reads from the cache, one table per plant class of the scenario.
TableSet load_or_build_tables(const Scenario& prototype, const RunConfig& cfg, std::ostream& log);

/// One row per (L, class) for each metric file and a combined summary.
void write_csvs(const std::vector<SweepPoint>& points, const std::string& outDir);

/// Runs the sweep described by cfg; returns an ExitCode.
int run_experiment(const RunConfig& cfg, std::ostream& log);

}  // namespace ncs
