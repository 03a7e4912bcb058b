#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "troughfill/controllers.hpp"
#include "troughfill/model.hpp"

// Discrete-time engine.  Each slot: observe the exogenous state and the
// queues, ask the controller for an allocation, validate it, record the slot
// cost, then advance the queues (arrivals land after service).  All
// randomness is counter-based off the scenario seed, so every controller run
// on a scenario sees the same state and arrival realizations.

namespace tf {

// Exogenous world of one run.  Exactly one state source is active: `dist`
// (i.i.d. sampling per slot, ergodic mode) or `state_series` (one state per
// slot, trace mode).  Arrivals likewise: recorded `arrival_series`
// ([slot][job]), or i.i.d. uniform on [0, 2*lambda_j] so the per-slot bound
// is D_j^m = 2*lambda_j.
struct Scenario {
  Topology topo;
  PowerModel power;

  std::optional<StateDistribution> dist;
  std::vector<SystemState> state_series;

  std::vector<std::vector<double>> arrival_series;

  long horizon = 0;
  std::uint64_t seed = 1;

  bool ergodic() const { return dist.has_value(); }
  void validate() const;

  // Slot t's draws, identical for every controller on this scenario.
  int state_index_at(long t) const;  // index into dist or state_series
  const SystemState& state_at(long t) const;
  std::vector<double> arrivals_at(long t) const;
};

// A policy driven by the engine.  `state_key` is the sampled state's index
// in ergodic mode (usable as a solver cache key and for table policies) and
// -1 in trace mode.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual Allocation step(const SystemState& state, const QueueVector& q,
                          int state_key) = 0;
};

class QtfController : public Controller {
 public:
  QtfController(const Topology& topo, const PowerModel& power, QtfConfig cfg,
                SolverOptions solver = {});
  std::string name() const override;
  Allocation step(const SystemState& state, const QueueVector& q,
                  int state_key) override;

 private:
  const Topology* topo_;
  PowerModel power_;
  QtfConfig cfg_;
  SlotSolverEngine engine_;
};

class SstfController : public Controller {
 public:
  SstfController(const Topology& topo, const PowerModel& power, SstfState init,
                 SolverOptions solver = {});
  std::string name() const override;
  Allocation step(const SystemState& state, const QueueVector& q,
                  int state_key) override;
  const SstfState& state() const { return sstf_; }

 private:
  const Topology* topo_;
  PowerModel power_;
  SstfState sstf_;
  SlotSolverEngine engine_;
};

class BesController : public Controller {
 public:
  BesController(const Topology& topo, const PowerModel& power);
  std::string name() const override;
  Allocation step(const SystemState& state, const QueueVector& q,
                  int state_key) override;

 private:
  const Topology* topo_;
};

// Plays a precomputed per-state policy; requires ergodic mode.
class OssiController : public Controller {
 public:
  explicit OssiController(OssiPolicy policy);
  std::string name() const override;
  Allocation step(const SystemState& state, const QueueVector& q,
                  int state_key) override;
  const OssiPolicy& policy() const { return policy_; }

 private:
  OssiPolicy policy_;
};

// Everything recorded over one run.  Per-slot series are index-aligned;
// aggregates are recomputed from the series on finalize, so they agree with
// the rows exactly.
struct MetricsSeries {
  std::vector<double> cost_total;  // per slot
  std::vector<double> energy;
  std::vector<double> shift;
  std::vector<double> shifted_volume;          // total traffic moved per slot
  std::vector<std::vector<double>> queue;      // [slot][job], Q at slot start
  std::vector<std::vector<double>> served;     // [slot][job], r * S granted
  std::vector<std::vector<double>> arrivals;   // [slot][job]

  double avg_cost = 0.0;
  double avg_energy = 0.0;
  double avg_shift = 0.0;
  std::vector<double> avg_queue;    // per job
  std::vector<double> avg_served;   // per job
  std::vector<double> avg_arrival;  // per job
  double avg_queue_total = 0.0;

  // Little's-law delay in slots: time-avg queue over time-avg arrivals.
  std::vector<double> delay;  // per job (0 arrivals -> 0)
  double overall_delay = 0.0;

  // Best-fit slope of total queue over the last half of the run, flagged
  // against a threshold of 1% of mean arrivals per slot.
  double drift_slope = 0.0;
  bool unstable = false;

  // Exact bookkeeping checks, kept with the run:
  //   conservation_gap = |cum arrivals - cum drained - (Q_end - Q_start)|
  // where drained_j = min(Q_j, served_j) per slot.  replay_ok confirms each
  // recorded queue row equals queue_step of the previous row.
  double conservation_gap = 0.0;
  bool replay_ok = true;

  long slots() const { return static_cast<long>(cost_total.size()); }
};

// Draw a state index from the distribution with one uniform [0,1) variate.
int sample_state_index(const StateDistribution& dist, double u01);
const SystemState& sample_state(const StateDistribution& dist, Rng& rng);

MetricsSeries run(const Scenario& scenario, Controller& controller);

struct CompareRow {
  std::string name;
  double avg_cost = 0.0;
  double overall_delay = 0.0;
  double avg_queue_total = 0.0;
  bool unstable = false;
  std::string error;  // non-empty if this controller's run failed
};

// Run each controller on the scenario (identical realizations) and tabulate.
std::vector<CompareRow> compare(
    const Scenario& scenario,
    const std::vector<std::unique_ptr<Controller>>& controllers,
    std::vector<MetricsSeries>* series_out = nullptr);

}  // namespace tf
