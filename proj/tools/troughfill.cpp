#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "troughfill/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"trough filling: speed scaling + load shifting for "
               "delay-tolerant jobs across datacenters"};
  app.set_version_flag("--version", tf::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  std::uint64_t seed = 0;
  long horizon = 0;
  std::string out;
  int jobs = 0;
  std::vector<long> windows;

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "JSON experiment config")
        ->required();
    sub->add_option("--seed", seed, "override the scenario seed");
    sub->add_option("--horizon", horizon, "override the horizon (slots)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--jobs", jobs, "sweep parallelism; 0 = all cores")
        ->check(CLI::NonNegativeNumber);
  };

  CLI::App* run = app.add_subcommand(
      "run", "run every (sweep point, controller) pair and write metrics");
  add_overrides(run);
  CLI::App* cmp = app.add_subcommand(
      "compare", "run everything and print a comparison table");
  add_overrides(cmp);
  CLI::App* rates = app.add_subcommand(
      "rates", "windowed normalized service rates of a finished run");
  rates->add_option("run_dir", run_dir, "a <out>/<point>__<controller> dir")
      ->required();
  rates->add_option("--window", windows,
                    "window length in slots (repeatable; default 1 and 1000)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed() || cmp->parsed()) {
      CLI::App* sub = run->parsed() ? run : cmp;
      tf::RunConfig config = tf::load_config(config_path);
      if (sub->count("--seed") > 0) config.seed = seed;
      if (sub->count("--horizon") > 0) config.horizon = horizon;
      if (sub->count("--out") > 0) config.out = out;
      if (sub->count("--jobs") > 0) config.jobs = jobs;
      return run->parsed() ? tf::cmd_run(config) : tf::cmd_compare(config);
    }
    if (windows.empty()) windows = {1, 1000};
    return tf::cmd_rates(run_dir, windows);
  } catch (const tf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
