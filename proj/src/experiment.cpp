#include "ncs/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace ncs {

namespace fs = std::filesystem;

std::vector<int> RunConfig::default_loop_counts() {
  std::vector<int> out;
  for (int l = 2; l <= 44; l += 2) out.push_back(l);
  return out;
}

std::string RunConfig::cache_dir() const {
  return cacheDir.empty() ? (fs::path(outDir) / "tables").string() : cacheDir;
}

void RunConfig::validate() const {
  if (scenario != "two_hop") throw ConfigError("scenario", "unknown scenario '" + scenario + "'");
  if (loops.empty()) throw ConfigError("L", "loop list is empty");
  for (int l : loops) {
    if (l < 2 || l % 2 != 0) throw ConfigError("L", "loop counts must be even and >= 2");
  }
  if (horizon < 1000) throw ConfigError("horizon", "must be at least 1000 control steps");
  if (replications < 1) throw ConfigError("replications", "must be at least 1");
  if (!(theta > 0)) throw ConfigError("theta", "must be positive");
  if (!(warmup >= 0 && warmup < 1)) throw ConfigError("warmup", "must lie in [0, 1)");
  if (threads < 0) throw ConfigError("threads", "must be non-negative");
  if (outDir.empty()) throw ConfigError("out", "output directory must not be empty");
  vi.validate();
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  text = trim(text);
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(key), "cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::vector<int> parse_loop_list(std::string_view text) {
  text = trim(text);
  std::vector<int> out;
  if (text.find(':') != std::string_view::npos) {
    std::vector<int> parts;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto colon = text.find(':', start);
      const auto piece = text.substr(start, colon == std::string_view::npos ? text.npos : colon - start);
      parts.push_back(parse_number<int>("L", piece));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
    if (parts.size() < 2 || parts.size() > 3) throw ConfigError("L", "range must be start:stop[:step]");
    const int step = parts.size() == 3 ? parts[2] : 1;
    if (step <= 0) throw ConfigError("L", "range step must be positive");
    for (int l = parts[0]; l <= parts[1]; l += step) out.push_back(l);
  } else {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      const auto piece = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
      out.push_back(parse_number<int>("L", piece));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  if (out.empty()) throw ConfigError("L", "loop list is empty");
  return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  const std::string k(key);
  if (k == "scenario") {
    cfg.scenario = std::string(value);
  } else if (k == "L") {
    cfg.loops = parse_loop_list(value);
  } else if (k == "horizon") {
    cfg.horizon = parse_number<std::int64_t>(k, value);
  } else if (k == "replications") {
    cfg.replications = parse_number<int>(k, value);
  } else if (k == "seed") {
    cfg.seed = parse_number<std::uint64_t>(k, value);
  } else if (k == "theta") {
    cfg.theta = parse_number<double>(k, value);
  } else if (k == "warmup") {
    cfg.warmup = parse_number<double>(k, value);
  } else if (k == "threads") {
    cfg.threads = parse_number<int>(k, value);
  } else if (k == "out") {
    cfg.outDir = std::string(value);
  } else if (k == "cache") {
    cfg.cacheDir = std::string(value);
  } else if (k == "vi.emax") {
    cfg.vi.eMax = parse_number<double>(k, value);
  } else if (k == "vi.estep") {
    cfg.vi.eStep = parse_number<double>(k, value);
  } else if (k == "vi.quad") {
    cfg.vi.quadraturePoints = parse_number<int>(k, value);
  } else if (k == "vi.span_tol") {
    cfg.vi.spanTol = parse_number<double>(k, value);
  } else if (k == "vi.max_iter") {
    cfg.vi.maxIter = parse_number<std::int64_t>(k, value);
  } else if (k == "vi.hold_cost") {
    cfg.vi.holdCost = hold_cost_from_string(std::string(value));
  } else {
    throw ConfigError(k, "unknown configuration key");
  }
}

RunConfig parse_config_text(std::string_view text, RunConfig base) {
  std::size_t start = 0;
  int lineNo = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineNo;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineNo), "expected key=value");
    }
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  base.validate();
  return base;
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

TableSet load_or_build_tables(const Scenario& prototype, const RunConfig& cfg, std::ostream& log) {
  const std::vector<double> grid = default_lambda_grid();
  std::map<std::string, const PlantSpec<double>*> classes;
  for (const auto& l : prototype.loops) classes.emplace(l.classLabel, &l.plant);

  const fs::path dir = cfg.cache_dir();
  fs::create_directories(dir);
  TableSet tables;
  for (const auto& [label, plant] : classes) {
    std::ostringstream key;
    key.precision(17);
    key << "class=" << label << " A=" << plant->A(0, 0) << " B=" << plant->B(0, 0)
        << " Z=" << plant->Z(0, 0) << " Qx=" << plant->Qx(0, 0) << " Qu=" << plant->Qu(0, 0) << ' '
        << cfg.vi.key() << " grid=";
    for (double g : grid) key << g << ';';
    const std::string keyText = key.str();
    char name[64];
    std::snprintf(name, sizeof name, "%s-%016llx.txt", label.c_str(),
                  static_cast<unsigned long long>(fnv1a(keyText)));
    const fs::path file = dir / name;

    if (std::ifstream in(file); in) {
      try {
        std::string storedKey;
        ThresholdTable t = read_table(in, &storedKey);
        if (storedKey == keyText && t.plantClassId == label) {
          log << "table cache hit: " << file.string() << '\n';
          tables.emplace(label, std::move(t));
          continue;
        }
      } catch (const DesignError&) {
        // Corrupt cache entry: rebuild below.
      }
    }
    log << "table cache miss: designing thresholds for class '" << label << "'\n";
    ThresholdTable t = build_table(grid, *plant, lqg_design(*plant), cfg.vi, label);
    {
      std::ofstream out(file, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write threshold cache '" + file.string() + "'");
      write_table(out, t, keyText);
    }
    tables.emplace(label, std::move(t));
  }
  return tables;
}

void write_csvs(const std::vector<SweepPoint>& points, const std::string& outDir) {
  fs::create_directories(outDir);
  const char* classes[] = {"all", kStableClass, kUnstableClass};
  struct Metric {
    const char* file;
    Estimate ClassAggregate::*field;
  };
  const Metric metrics[] = {{"rate.csv", &ClassAggregate::rate},
                            {"backlog.csv", &ClassAggregate::backlog},
                            {"delay.csv", &ClassAggregate::delay},
                            {"cost.csv", &ClassAggregate::cost}};
  auto open = [&](const char* name) {
    std::ofstream out(fs::path(outDir) / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(std::string("cannot write ") + name);
    return out;
  };
  for (const auto& m : metrics) {
    auto out = open(m.file);
    out << "L,class,mean,ci95_halfwidth,replications\n";
    for (const auto& p : points) {
      for (const char* c : classes) {
        const auto it = p.byClass.find(c);
        if (it == p.byClass.end()) continue;
        const Estimate& e = it->second.*m.field;
        out << p.loops << ',' << c << ',' << format_number(e.mean) << ',' << format_number(e.ci95)
            << ',' << e.samples << '\n';
      }
    }
  }
  auto out = open("summary.csv");
  out << "L,class,rate,rate_ci95,backlog,backlog_ci95,delay,delay_ci95,cost,cost_ci95,"
         "replications,diverging\n";
  for (const auto& p : points) {
    for (const char* c : classes) {
      const auto it = p.byClass.find(c);
      if (it == p.byClass.end()) continue;
      const ClassAggregate& a = it->second;
      out << p.loops << ',' << c;
      for (const Estimate* e : {&a.rate, &a.backlog, &a.delay, &a.cost}) {
        out << ',' << format_number(e->mean) << ',' << format_number(e->ci95);
      }
      out << ',' << p.replications << ',' << (p.diverging ? 1 : 0) << '\n';
    }
  }
}

int run_experiment(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Scenario prototype = make_two_hop_scenario(2, cfg.seed, cfg.horizon, cfg.theta);
  const TableSet tables = load_or_build_tables(prototype, cfg, log);

  SweepOptions opts;
  opts.threads = cfg.threads;
  opts.run.warmupFraction = cfg.warmup;
  std::vector<SweepPoint> points = sweep(
      cfg.loops, cfg.replications, cfg.seed,
      [&](int loops, std::uint64_t seed) {
        return make_two_hop_scenario(loops, seed, cfg.horizon, cfg.theta);
      },
      tables, opts);

  bool unstable = false;
  for (const auto& p : points) {
    const ClassAggregate& a = p.byClass.at("all");
    char line[256];
    std::snprintf(line, sizeof line, "L=%d rate=%.4f backlog=%.3f delay=%.3f cost=%.3f%s\n", p.loops,
                  a.rate.mean, a.backlog.mean, a.delay.mean, a.cost.mean,
                  p.diverging ? " [diverging]" : "");
    log << line;
    unstable = unstable || p.diverging;
  }
  write_csvs(points, cfg.outDir);
  log << "wrote rate.csv backlog.csv delay.csv cost.csv summary.csv to " << cfg.outDir << '\n';
  return unstable ? kExitUnstable : kExitOk;
}

}  // namespace ncs
