#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "troughfill/model.hpp"

// Convex per-slot subproblem shared by the queue-driven and price-driven
// controllers: choose DTJ capacity shares S_ij that trade quadratic energy
// cost plus piecewise-linear shifting cost against a linear service reward.
//
//   minimize   V' * [ sum_i alpha_i rho (S_i0 + X_i)^2 / K_i
//                     + sum_links psi(shifted / bandwidth) ]
//              - sum_j w_j * sum_i r_ij S_ij
//   subject to X_i = sum_j S_ij <= K_i - S_i0,   S_ij >= 0,
//              shifted traffic per link <= bandwidth,
//              optionally sum_i r_ij S_ij <= cap_j.
//
// psi is the link cost shifted so psi(0) = 0; the dropped constants (idle
// energy alpha_i (1-rho) K_i and the link intercepts at zero) are reported
// alongside the objective so callers can reconcile against slot_cost.
// The max of affine link segments enters the program through one epigraph
// variable per link, which keeps the problem a quadratic program with linear
// constraints.

namespace tf {

struct SlotProblem {
  const SystemState* state = nullptr;
  const Topology* topo = nullptr;
  const PowerModel* power = nullptr;
  std::vector<double> reward_weights;  // w_j >= 0, reward per unit service
  double cost_scale = 1.0;             // V' > 0
  std::optional<std::vector<double>> service_caps;  // per-job traffic cap

  void validate() const;
  std::string dump() const;  // coefficient listing for debugging
};

struct KktReport {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;

  double worst() const;
  bool within(double tol) const { return worst() <= tol; }
};

struct SolveDuals {
  std::vector<double> capacity;    // per IDC, >= 0
  std::vector<double> bandwidth;   // n*n row-major, >= 0
  std::vector<double> job_cap;     // per job, >= 0 (empty without caps)
  std::vector<double> link_slope;  // n*n, effective shift-cost subgradient
};

struct SolveReport {
  Allocation allocation;
  // Optimization objective as defined above (quadratic energy including the
  // DSJ base load, zero-anchored link costs, minus the service reward).
  double objective = 0.0;
  // Constants excluded from `objective`: total idle energy and the sum of
  // link intercepts at zero utilization.  For the default link cost model the
  // intercept term is 0 and
  //   cost_scale * slot_cost(...).grand_total - sum_j w_j * serve_rate_j
  //     == objective + cost_scale * idle_cost.
  double idle_cost = 0.0;
  double intercept_offset = 0.0;
  int iterations = 0;
  KktReport kkt;
  SolveDuals duals;
};

struct SolverOptions {
  double rel_obj_tol = 1e-6;  // relative objective tolerance
  double feas_tol = 1e-8;     // absolute constraint feasibility
  int max_iter = 50000;
  bool polish = true;
};

// Thrown when the iteration budget runs out before the tolerances are met.
class SolverConvergenceError : public SolverError {
 public:
  SolverConvergenceError(const std::string& what, SolveReport best)
      : SolverError(what), best_(std::move(best)) {}
  const SolveReport& best_iterate() const { return best_; }

 private:
  SolveReport best_;
};

// One-shot solve.  Requires nu = 2 in the power model (the program is
// quadratic only for that exponent).  An empty problem (no residual capacity
// anywhere) returns the zero allocation with objective 0 plus constants.
SolveReport solve_slot(const SlotProblem& problem, const SolverOptions& opts);
SolveReport solve_slot(const SlotProblem& problem, double rel_obj_tol = 1e-6);

// KKT residual check for a candidate allocation, normalized to be
// dimensionless.  The two-argument form derives certifying multipliers
// internally; the three-argument form checks the given ones.  An allocation
// is tol-optimal iff every residual is <= tol.
KktReport check_kkt(const SlotProblem& problem, const Allocation& alloc);
KktReport check_kkt(const SlotProblem& problem, const Allocation& alloc,
                    const SolveDuals& duals);

// Closed form for a single IDC with queue weights and no service caps: serve
// only the job with the largest Q_j r_j (ties to the lowest index) at
//   S = K - S_0                          if Q r >= 2 V rho alpha
//   S = Q r K / (2 V rho alpha) - S_0    if Q r >= 2 V rho alpha S_0 / K
//   S = 0                                otherwise.
// Throws std::domain_error on a multi-IDC state or nu != 2.
Allocation sqtf_closed_form(const SystemState& state, const QueueVector& queues,
                            const std::vector<double>& rates, double v,
                            const PowerModel& power);

// Reusable solver that caches problem structure (matrix factorizations and
// warm starts) across repeated solves.  `cache_key >= 0` identifies a
// recurring system state (e.g. its index in a state distribution); pass -1
// for one-off states.  Results match solve_slot to within the configured
// tolerances but are not guaranteed bit-identical to a cold solve.
class SlotSolverEngine {
 public:
  explicit SlotSolverEngine(SolverOptions opts = {});
  ~SlotSolverEngine();
  SlotSolverEngine(SlotSolverEngine&&) noexcept;
  SlotSolverEngine& operator=(SlotSolverEngine&&) noexcept;

  SolveReport solve(const SlotProblem& problem, int cache_key = -1);
  const SolverOptions& options() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tf
