#pragma once

#include <vector>

#include "troughfill/model.hpp"
#include "troughfill/solver.hpp"

// The four per-slot policies and the drift-bound constants.
//
//  - SSTF: price-driven.  Keeps dual multipliers mu_j on the average-rate
//    constraints, solves the per-state problem with w = mu, V' = 1, and
//    updates mu by a diminishing-step subgradient of the dual.
//  - QTF: queue-driven.  Solves the per-slot problem with w_j = Q_j, V' = V,
//    and service capped at the backlog; no statistics needed.
//  - BES: best effort.  Serves each job only at its origin, clearing backlog
//    when capacity suffices and equal-sharing with surplus redistribution
//    when it does not.  Never shifts.
//  - OSSI: offline optimum of the ergodic program given the true state
//    distribution; the yardstick the online policies are measured against.

namespace tf {

// --------------------------------------------------------------------------
// SSTF
// --------------------------------------------------------------------------

struct SstfState {
  std::vector<double> mu;      // dual prices, >= 0 elementwise
  std::vector<double> lambda;  // mean arrival rates the policy provisions for
  double beta0 = 1.0;          // step n uses beta0 / n
  long n = 1;                  // next step index

  static SstfState initial(std::vector<double> lambda, double beta0 = 1.0);
};

// Rough magnitude of the optimal multipliers divided by the subgradient
// scale.  beta0 = 1 (the canonical 1/n schedule) moves mu by at most
// sum(lambda)/n per step, which cannot reach price-scale multipliers in any
// reasonable horizon when lambda is large; this calibration fixes the units.
double calibrate_beta0(const Topology& topo, const PowerModel& power,
                       double max_price);

/// One SSTF slot: solve for the allocation under the current prices, then
//   mu_j <- max(mu_j + (beta0/n) * (lambda_j - served_j), 0),  n <- n + 1.
// `cache_key` identifies a recurring state for the engine (-1 = one-off).
Allocation sstf_step(const SystemState& state, const Topology& topo,
                     const PowerModel& power, SstfState& sstf,
                     SlotSolverEngine& engine, int cache_key = -1);

// --------------------------------------------------------------------------
// QTF
// --------------------------------------------------------------------------

struct QtfConfig {
  double v = 1.0;  // cost weight V > 0: larger V, lower cost, longer queues
};

// One QTF slot: w_j = Q_j, V' = V, service capped at Q_j.
Allocation qtf_step(const SystemState& state, const Topology& topo,
                    const PowerModel& power, const QueueVector& q,
                    const QtfConfig& cfg, SlotSolverEngine& engine,
                    int cache_key = -1);

// --------------------------------------------------------------------------
// BES
// --------------------------------------------------------------------------

// Serve every job at its origin only (jobs whose origin cannot serve them
// are left unserved).  Per IDC, each job wants capacity Q_j / r_j; if the
// total fits the residual capacity everyone gets exactly that, otherwise
// capacity is split equally with any job needing less than its share
// returning the surplus to the pool (iterated to fixpoint).
Allocation bes_step(const SystemState& state, const Topology& topo,
                    const QueueVector& q);

// --------------------------------------------------------------------------
// OSSI
// --------------------------------------------------------------------------

struct StateDistribution {
  std::vector<SystemState> states;
  std::vector<double> probs;  // >= 0, sums to 1

  void validate(const Topology& topo) const;
};

struct OssiPolicy {
  std::vector<Allocation> per_state;     // one allocation per state
  double optimal_cost = 0.0;             // expected slot cost of the policy
  std::vector<double> mu_star;           // converged multipliers
  double dual_value = 0.0;               // certified lower bound on the optimum
  std::vector<double> expected_service;  // per job, under per_state
  double service_slack = 0.0;            // max_j (lambda_j - E[served_j])
  int iterations = 0;
};

struct OssiOptions {
  double tol = 1e-4;    // relative: duality gap and rate slack, scaled to cost
  int max_iter = 4000;  // dual ascent iterations
  double beta0 = 0.0;   // subgradient step scale; 0 = calibrate from the data
};

// The requested mean rates cannot be met by any policy.  `max_scale` is an
// estimate of the largest c such that c * lambda is stabilizable.
class ErgodicInfeasibleError : public SolverError {
 public:
  ErgodicInfeasibleError(const std::string& what, double max_scale)
      : SolverError(what), max_scale_(max_scale) {}
  double max_scale() const { return max_scale_; }

 private:
  double max_scale_;
};

// Minimize expected slot cost subject to expected service >= lambda, by dual
// ascent on the rate constraints: each iteration solves one per-state problem
// per state with w = mu (exact expectation, since probs are known), then
// steps mu along lambda - E[served].  The returned per-state allocations are
// the step-weighted running average of the iterates, which converges to the
// primal optimum; optimal_cost is the expected slot cost of that policy and
// dual_value the best dual lower bound seen.
OssiPolicy ossi_solve(const StateDistribution& dist, const Topology& topo,
                      const PowerModel& power,
                      const std::vector<double>& lambda,
                      const OssiOptions& opts = {});

// Largest uniform scaling c of `lambda` for which expected service c*lambda
// is achievable, estimated by minimizing the supported service over rate
// weights (upper bound, accurate to a few percent).  Used for infeasibility
// diagnostics.
double max_stabilizable_scale(const StateDistribution& dist,
                              const Topology& topo, const PowerModel& power,
                              const std::vector<double>& lambda);

// --------------------------------------------------------------------------
// Queue and cost bounds
// --------------------------------------------------------------------------

struct BoundReport {
  double b_const = 0.0;      // sum_i r_i^2 (K_i^max)^2 + sum_j (D_j^m)^2
  double epsilon = 0.0;      // rate slack the queue bound is taken at
  double v = 0.0;
  double g_eps = 0.0;        // optimal ergodic cost at lambda + epsilon
  double queue_bound = 0.0;  // (B + V * g_eps) / epsilon
  double cost_bound = 0.0;   // g_eps + B / V
};

// Constants of the drift argument.  r_i is max_{j servable at i} r_ij and
// the first sum runs over IDCs that can serve at least one job.  The caller
// supplies g_e*(epsilon) from ossi_solve at rates lambda + epsilon; the cost
// bound uses the same value (an upper bound on the limit as epsilon -> 0).
BoundReport drift_bound_constants(const Topology& topo, double v,
                                  double epsilon, double g_e_star_eps);

}  // namespace tf
