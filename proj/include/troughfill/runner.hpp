#pragma once

#include <string>
#include <vector>

#include "troughfill/config.hpp"
#include "troughfill/sim.hpp"

// Batch driver behind the command-line tool.  Expands the sweep grid, runs
// every (sweep point, controller) pair, and writes one directory per run:
//
//   <out>/<point>__<controller>/metrics.csv   one row per slot
//   <out>/<point>__<controller>/summary.json  aggregates + config echo
//
// plus <out>/comparison.csv for the compare command.  Files are written to a
// temporary name and renamed, so readers never see partial output.  Sweep
// points execute in a worker pool; results merge in sweep order.

namespace tf {

inline constexpr const char* kVersion = "troughfill 0.1.0";

struct RunRecord {
  int sweep_index = 0;
  std::string sweep_label;   // "v=1000", "baseline", ...
  std::string controller;    // ControllerSpec::label()
  std::string dir;           // output directory of this run
  CompareRow row;
  std::optional<BoundReport> bounds;
};

// Core driver shared by run and compare.  Throws ConfigError for bad
// configs, SolverError and FeasibilityError for runtime failures.
std::vector<RunRecord> run_experiments(const RunConfig& config);

void write_comparison_csv(const std::string& path,
                          const std::vector<RunRecord>& records);

// Windowed normalized service rates of a finished run: for each window
// length, non-overlapping window means of served_j / lambda_j, written to
// <run_dir>/rates_w<N>.csv.  Window must divide into the horizon at least
// once.  lambda_j is read back from summary.json.
void windowed_rates(const std::string& run_dir,
                    const std::vector<long>& windows);

// CLI entry points: exit code 0 on success, 1 for config errors, 2 for
// runtime/solver errors.
int cmd_run(const RunConfig& config);
int cmd_compare(const RunConfig& config);
int cmd_rates(const std::string& run_dir, const std::vector<long>& windows);

}  // namespace tf
