#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "acceptance_checks.hpp"
#include "unimpc/harness.hpp"

using namespace unimpc;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void print_summary(const RunReport& r) {
  std::printf("%-16s steps %4zu  n_it %7.3f  r_avg %9.3e  delta_r_avg %7.4f  max_violation %9.3e%s%s\n",
              r.config.name.c_str(), r.samples.size(), r.agg.n_it_mean, r.agg.r_avg, r.agg.delta_r_avg,
              r.agg.max_violation, r.config.benchmark == Benchmark::Mpcc ? (r.lap_completed ? "  lap" : "  no-lap") : "",
              r.failed ? fmt::format("  ABORTED at k={}: {}", r.fail_step, r.diagnostic).c_str() : "");
}

RunConfig with_overrides(RunConfig c, const Options& o) {
  if (o.seed) c.seed = *o.seed;
  c.validate();
  return c;
}

int finish(const std::vector<const RunReport*>& reports, const fs::path& out, const Options& o) {
  bool failed = false;
  for (const auto* r : reports) {
    if (!o.quiet) print_summary(*r);
    failed = failed || r->failed;
  }
  if (!o.quiet) std::printf("output written to %s\n", out.string().c_str());
  return failed ? 1 : 0;
}

int cmd_run(const std::string& path, const Options& o) {
  const RunConfig cfg = with_overrides(load_config(path), o);
  const RunReport rep = run_closed_loop(cfg);
  const fs::path out = o.out.empty() ? fs::path(cfg.output_dir) / cfg.name : fs::path(o.out);
  write_report(rep, out);
  return finish({&rep}, out, o);
}

int run_comparison(const std::vector<RunConfig>& cfgs, const fs::path& out, const Options& o) {
  const Comparison cmp = compare_policies(cfgs);
  write_comparison(cmp, out);
  std::vector<const RunReport*> reps;
  for (const auto& r : cmp.reports) reps.push_back(&r);
  return finish(reps, out, o);
}

int cmd_compare(const std::vector<std::string>& paths, const Options& o) {
  std::vector<RunConfig> cfgs;
  for (const auto& p : paths) cfgs.push_back(with_overrides(load_config(p), o));
  return run_comparison(cfgs, o.out.empty() ? fs::path("out/compare") : fs::path(o.out), o);
}

int cmd_reproduce(const std::string& what, const Options& o) {
  std::vector<RunConfig> cfgs = what == "fig1" ? presets::fig1() : presets::table2();
  for (auto& c : cfgs) c = with_overrides(c, o);
  return run_comparison(cfgs, o.out.empty() ? fs::path("out") / what : fs::path(o.out), o);
}

int cmd_selftest(const Options& o) {
  const acceptance::CheckResult oracles = acceptance::run_timed(acceptance::check_oracles, 7);
  const acceptance::RolloutAgreement a = acceptance::rollout_agreement();
  const bool rollout_ok = a.bitwise && a.max_dz > 0.0;
  if (!o.quiet) {
    std::printf("%s\n", acceptance::format_line(oracles).c_str());
    std::printf("[%s] zero-order rollouts: linear and nonlinear propagation %s over %d stages\n",
                rollout_ok ? "PASS" : "FAIL", a.bitwise ? "agree bitwise" : "differ", a.stages);
  }
  return oracles.pass && rollout_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified SQP / iterative LPV model predictive control runner"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_flag("--quiet", opt.quiet, "Suppress the summary");
  };

  std::string config;
  auto* run = app.add_subcommand("run", "Closed-loop run of one configuration");
  run->add_option("config", config, "Config file (INI)")->required();
  add_common(run);

  std::vector<std::string> configs;
  auto* compare = app.add_subcommand("compare", "Run several configurations and tabulate them");
  compare->add_option("configs", configs, "Config files sharing benchmark and horizon")->required();
  add_common(compare);

  std::string target;
  auto* reproduce = app.add_subcommand("reproduce", "Regenerate a figure or table from the built-in presets");
  reproduce->add_option("target", target, "fig1, fig2 or table2")
      ->required()
      ->check(CLI::IsMember({"fig1", "fig2", "table2"}));
  add_common(reproduce);

  auto* selftest = app.add_subcommand("selftest", "Run the derived-oracle checks");
  add_common(selftest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto* sub : {run, compare, reproduce, selftest})
    if (sub->count("--seed")) opt.seed = seed;

  try {
    if (*run) return cmd_run(config, opt);
    if (*compare) return cmd_compare(configs, opt);
    if (*reproduce) return cmd_reproduce(target, opt);
    if (*selftest) return cmd_selftest(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
