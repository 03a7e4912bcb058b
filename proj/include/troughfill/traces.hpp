#pragma once

#include <string>
#include <vector>

#include "troughfill/sim.hpp"

// Scenario construction: the synthetic ergodic generator, packet-log
// ingestion with size-threshold DSJ/DTJ classification, and hourly
// electricity-price loading.

namespace tf {

// Ergodic setting: `n_states` states drawn uniformly from the ranges below,
// sampled i.i.d. with equal probability each slot.
struct SyntheticConfig {
  int n_idcs = 5;
  int n_jobs = 10;
  int n_states = 100;
  double capacity_lo = 10000.0;  // active servers per IDC per state
  double capacity_hi = 15000.0;
  double bandwidth_lo = 3000.0;  // per ordered link per state
  double bandwidth_hi = 4000.0;
  double price_lo = 1.0;
  double price_hi = 10.0;
  double dsj_lo = 0.0;  // DSJ demand as a fraction of active servers
  double dsj_hi = 0.4;
  double rate_lo = 5.0;  // service rates r_ij, mean 7.5
  double rate_hi = 10.0;
  double load_ratio = 1.0;  // expected DTJ capacity demand / DSJ demand
  double rho = 0.5;         // idle power 1 - rho
  double nu = 2.0;
  // Serving sets include each IDC independently with p = 0.5 (redrawn if
  // empty); the origin is drawn uniformly and need not be included unless
  // this flag is set (best-effort service requires it).
  bool force_origin_serving = false;
  long horizon = 100000;
  std::uint64_t seed = 1;

  bool operator==(const SyntheticConfig&) const = default;
};

// Mean rates are split evenly in capacity terms: each job's expected demand
// is load_ratio * E[DSJ capacity] / n_jobs, converted to traffic units by
// its mean service rate over the serving set.
Scenario gen_synthetic(const SyntheticConfig& config);

// Packet log: CSV rows `timestamp_s,size_bytes`.  Packets are bucketed into
// slots of `slot_length` seconds from the earliest timestamp; per slot,
// sizes <= the threshold become DSJ demand (capacity units) and sizes above
// it become DTJ arrivals (Mbit).
struct PacketLogConfig {
  double slot_length = 20.0;        // seconds
  double size_threshold = 100.0;    // Mbit; at most this size counts as DSJ
  double dsj_capacity_per_mbit = 1.0;

  bool operator==(const PacketLogConfig&) const = default;
};

struct PacketSeries {
  std::vector<double> dsj_demand;    // per slot, capacity units
  std::vector<double> dtj_arrivals;  // per slot, Mbit
  long slots() const { return static_cast<long>(dsj_demand.size()); }
};

PacketSeries ingest_packet_log(const std::string& path,
                               const PacketLogConfig& config);

// Price file: CSV rows `region,hour,price`.  Each IDC maps to a region;
// hourly prices are held constant across the slots of that hour.  Every hour
// of [0, hours) must be present for every mapped region.
struct PriceSeries {
  std::vector<std::vector<double>> alpha;  // [idc][slot]
  long slots() const {
    return alpha.empty() ? 0 : static_cast<long>(alpha.front().size());
  }
};

PriceSeries load_prices(const std::string& path,
                        const std::vector<std::string>& region_by_idc,
                        long n_slots, double slot_length = 20.0);

// Trace-mode scenario: one packet stream is cut into contiguous equal-length
// blocks; the large-packet series of the first n_jobs blocks become the DTJ
// arrival traces and the small-packet series of the next n_idcs blocks
// become the DSJ demand traces.  Horizon = one block.  Capacity and
// bandwidth are drawn once (uniform, seeded) and held constant; prices vary
// per slot from the price series.  Job origins are round-robin and serving
// sets always include the origin; job mean rates are the measured series
// means and arrival bounds the series maxima.
struct TraceScenarioConfig {
  PacketLogConfig log;
  int n_idcs = 5;
  int n_jobs = 10;
  double capacity_lo = 1000.0;
  double capacity_hi = 1200.0;
  double bandwidth_lo = 1000.0;
  double bandwidth_hi = 1500.0;
  double rate_lo = 5.0;  // r_ij, mean 7.5
  double rate_hi = 10.0;
  double rho = 0.5;
  double nu = 2.0;
  double serving_p = 0.5;  // inclusion probability for non-origin IDCs
  std::uint64_t seed = 1;
  long block_slots = 0;         // slots per block; 0 = split the stream evenly
                                // into n_jobs + n_idcs blocks
  std::vector<int> dtj_blocks;  // block index per job; default 0..n_jobs-1
  std::vector<int> dsj_blocks;  // block index per IDC; default next n_idcs

  bool operator==(const TraceScenarioConfig&) const = default;
};

Scenario build_trace_scenario(const PacketSeries& packets,
                              const PriceSeries& prices,
                              const TraceScenarioConfig& config);

}  // namespace tf
