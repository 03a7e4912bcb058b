#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "troughfill/traces.hpp"

// Experiment configuration: JSON on disk, plain structs in memory.
// serialize_config(parse_config(text)) is canonical: parsing its own output
// reproduces the config exactly, and config_hash is taken over that
// canonical form.

namespace tf {

struct ControllerSpec {
  std::string policy;  // "qtf" | "sstf" | "bes" | "ossi"
  double v = 1.0;      // qtf
  double beta0 = 0.0;  // sstf; 0 = calibrate from the scenario
  std::optional<std::vector<double>> lambda;  // sstf override; default: the
                                              // scenario's mean rates
  double tol = 1e-4;   // ossi duality-gap tolerance

  std::string label() const;  // "qtf_v1000", "sstf", ...
  bool operator==(const ControllerSpec&) const = default;
};

struct SweepAxis {
  std::string param;  // see kSweepParams
  std::vector<double> values;

  bool operator==(const SweepAxis&) const = default;
};

// Parameters a sweep axis may reference.
inline constexpr const char* kSweepParams[] = {
    "qtf.v", "sstf.beta0", "load_ratio", "threshold", "seed", "horizon"};

struct TraceFiles {
  std::string packet_log;
  std::string price_file;
  std::vector<std::string> regions;  // one per IDC

  bool operator==(const TraceFiles&) const = default;
};

struct RunConfig {
  std::string scenario_type = "synthetic";  // or "trace"
  SyntheticConfig synthetic;
  TraceFiles trace_files;
  TraceScenarioConfig trace;

  std::vector<ControllerSpec> controllers;
  std::vector<SweepAxis> sweep;

  std::optional<long> horizon;          // scenario override
  std::optional<std::uint64_t> seed;    // scenario override
  std::string out = "out";
  int jobs = 0;                         // sweep parallelism; 0 = all cores
  double bounds_epsilon_frac = 0.0;     // > 0: report drift bounds, with
                                        // epsilon = frac * min lambda

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

// The config with one sweep value applied (axis "seed" replaces the seed,
// "qtf.v" rewrites every QTF controller, and so on).
RunConfig apply_sweep_value(const RunConfig& config, const std::string& param,
                            double value);

// Build the scenario this config describes, applying horizon/seed overrides.
Scenario build_scenario(const RunConfig& config);

}  // namespace tf
