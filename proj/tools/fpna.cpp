// fpna: runs one experiment from a JSON config and writes its artifacts.
//
//   fpna <subcommand> [--config file.json] [--seed N] [--out dir] [--precision fp16|fp32|fp64]
//
// Exit codes: 0 success, 1 config error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fpna/lab.hpp"

namespace {

using namespace fpna;
using namespace fpna::lab;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> precision;
};

std::string read_config(const std::string& path) {
  if (path.empty()) return "{}";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

Precision precision_flag(const std::string& name) {
  try {
    return parse_precision(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// Flags override the config document; the result is validated again.
template <class Config>
Config load(const Common& c, Config (*parse)(std::string_view)) {
  Config cfg = parse(read_config(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if constexpr (requires { cfg.precision; }) {
    if (c.precision) cfg.precision = precision_flag(*c.precision);
  } else {
    if (c.precision) throw ConfigError("--precision does not apply to this experiment");
  }
  cfg.validate();
  return cfg;
}

void report(const std::vector<std::filesystem::path>& written) {
  for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
}

int boundary_spread(const Common& c) {
  const auto cfg = load(c, boundary_spread_from_json);
  const auto r = run_boundary_spread(cfg);
  std::printf("boundary-spread: %zu points, max |outcome| %s, mean %s, stddev %s\n", r.points.size(),
              format_double(r.max_abs).c_str(), format_double(r.mean).c_str(), format_double(r.stddev).c_str());
  report(write_artifacts(cfg, r, c.out));
  return 0;
}

int perturb_sweep(const Common& c) {
  const auto cfg = load(c, perturb_sweep_from_json);
  const auto r = run_perturb_sweep(cfg);
  std::printf("perturb-sweep: %zu rows, zero crossing %s\n", r.rows.size(),
              r.zero_crossing ? std::to_string(*r.zero_crossing).c_str() : "none");
  report(write_artifacts(cfg, r, c.out));
  return 0;
}

int accuracy_table(const Common& c) {
  const auto cfg = load(c, accuracy_table_from_json);
  const auto t = run_accuracy_table(cfg);
  for (const auto& row : t.rows) {
    std::printf("%-9s eps %-5s D %.4f  ND %.4f", row.attack.c_str(), format_double(row.epsilon).c_str(),
                row.acc_deterministic, row.acc_nondet);
    if (row.acc_lp) std::printf("  LP %.4f (misses %zu)", *row.acc_lp, row.lp_misses);
    if (row.acc_ewa) std::printf("  EWA %.4f", *row.acc_ewa);
    std::printf("\n");
  }
  report(write_artifacts(cfg, t, c.out));
  return 0;
}

int tau_study(const Common& c) {
  const auto cfg = load(c, tau_study_from_json);
  const auto cells = run_tau_study(cfg);
  for (const auto& cell : cells) {
    std::printf("k %-6llu sm %-3d power %-4s mean tau %.4f var %.2e modes %d\n",
                static_cast<unsigned long long>(cell.workload), cell.sm_count,
                format_double(cell.power_scale).c_str(), cell.dist.mean, cell.dist.variance, cell.dist.modes);
  }
  report(write_artifacts(cfg, cells, c.out));
  return 0;
}

int lp_attack(const Common& c) {
  const auto cfg = load(c, lp_study_from_json);
  const auto r = run_lp_study(cfg);
  std::printf("lp-attack: %zu of %zu flippable instances found (%zu draws, %zu false positives)\n", r.found,
              r.instances.size(), r.draws, r.false_positives);
  report(write_artifacts(cfg, r, c.out));
  return 0;
}

int ewa(const Common& c) {
  const auto cfg = load(c, ewa_study_from_json);
  const auto r = run_ewa_study(cfg);
  std::printf("ewa: best O %.4f at k=%llu, grid max %.4f, O(0) %.4f, optimizer wins %zu of %zu (%zu ties)\n",
              r.attack.flip_rate, static_cast<unsigned long long>(r.attack.matrix_size.value_or(0)), r.grid_max,
              r.idle, r.optimizer_wins, r.comparison.size(), r.ties);
  report(write_artifacts(cfg, r, c.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Floating-point non-associativity experiments"};
  app.require_subcommand(1);
  Common common;
  int (*run)(const Common&) = nullptr;

  const auto add = [&](const char* name, const char* help, int (*fn)(const Common&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "JSON config; omitted keys keep their defaults")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "overrides the config seed");
    sub->add_option("--out", common.out, "artifact directory")->default_val(std::string("out/") + name);
    sub->add_option("--precision", common.precision, "fp16, fp32 or fp64");
    sub->callback([&run, fn] { run = fn; });
  };
  add("boundary-spread", "dot-product outcomes on the linear decision boundary", boundary_spread);
  add("perturb-sweep", "flip fraction as points move off the boundary", perturb_sweep);
  add("accuracy-table", "D/ND/LP/EWA accuracies of trained GNNs under input attacks", accuracy_table);
  add("tau-study", "Kendall tau distributions of simulated reduction orders", tau_study);
  add("lp-attack", "learnable-permutation attack on exhaustively checked linear instances", lp_attack);
  add("ewa", "external workload attack on the designed occupancy-peak instance", ewa);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return run(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
