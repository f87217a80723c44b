#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ncs/experiment.hpp"

using namespace ncs;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncs_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = parse_config_text("");
  CHECK(c.loops.front() == 2);
  CHECK(c.loops.back() == 44);
  CHECK(c.loops.size() == 22);
  CHECK(c.horizon == 10000);
  CHECK(c.replications == 10);
  CHECK(c.theta == 1.0);
}

TEST_CASE("config keys are applied") {
  const RunConfig c = parse_config_text("# sweep\ntheta = 2\nL=4:8:2\nvi.hold_cost=current\n\n");
  CHECK(c.theta == 2.0);
  CHECK(c.loops == std::vector<int>{4, 6, 8});
  CHECK(c.vi.holdCost == HoldCost::kCurrent);
  CHECK(parse_loop_list("2, 10,12") == std::vector<int>{2, 10, 12});
}

TEST_CASE("config errors name the field") {
  auto field_of = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of("replications=0") == "replications");
  CHECK(field_of("horizon=10") == "horizon");
  CHECK(field_of("L=3") == "L");
  CHECK(field_of("theta=abc") == "theta");
  CHECK(field_of("bogus=1") == "bogus");
  CHECK(field_of("just words") == "line 1");
  CHECK_THROWS_AS(parse_config_file("/nonexistent/ncs.cfg"), ConfigError);
}

TEST_CASE("experiment writes CSVs reproducibly and reuses the table cache") {
  const fs::path dir = scratch("experiment");
  RunConfig cfg = parse_config_text("L=2,22\nhorizon=1000\nreplications=2\nthreads=1\nvi.emax=20\nvi.estep=0.2\n");
  cfg.outDir = (dir / "a").string();
  cfg.cacheDir = (dir / "tables").string();

  std::ostringstream log1, log2;
  CHECK(run_experiment(cfg, log1) == kExitOk);
  CHECK(log1.str().find("table cache miss") != std::string::npos);
  const char* files[] = {"rate.csv", "backlog.csv", "delay.csv", "cost.csv", "summary.csv"};
  for (const char* f : files) REQUIRE(fs::exists(fs::path(cfg.outDir) / f));
  CHECK(slurp(fs::path(cfg.outDir) / "rate.csv").rfind("L,class,mean,ci95_halfwidth,replications\n", 0) == 0);

  RunConfig again = cfg;
  again.outDir = (dir / "b").string();
  CHECK(run_experiment(again, log2) == kExitOk);
  CHECK(log2.str().find("table cache hit") != std::string::npos);
  CHECK(log2.str().find("table cache miss") == std::string::npos);
  for (const char* f : files) {
    CHECK(slurp(fs::path(cfg.outDir) / f) == slurp(fs::path(again.outDir) / f));
  }

  // A cached table equals a freshly designed one.
  const Scenario proto = make_two_hop_scenario(2, 1);
  const TableSet cached = load_or_build_tables(proto, cfg, log2);
  for (const auto& l : proto.loops) {
    const ThresholdTable fresh =
        build_table(default_lambda_grid(), l.plant, lqg_design(l.plant), cfg.vi, l.classLabel);
    CHECK(cached.at(l.classLabel).thresholds == fresh.thresholds);
  }
  fs::remove_all(dir);
}
