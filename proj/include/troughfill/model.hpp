#pragma once

#include <optional>
#include <string>
#include <vector>

#include "troughfill/common.hpp"

// Data model for a federation of geographically distributed datacenters
// (IDCs) that serve two workload classes: delay-sensitive jobs (DSJs), which
// are admitted unconditionally and consume capacity S_i0 per slot, and
// delay-tolerant jobs (DTJs), which wait in per-class queues and are served
// from the leftover capacity, either locally or shifted to a remote IDC over
// a priced link.

namespace tf {

// Feasibility slack accepted on every capacity / bandwidth / sign check.
inline constexpr double kFeasTol = 1e-8;

// Per-server power curve P(s) = rho * s^nu + (1 - rho), s in [0, 1].
// `rho` is the load-dependent share of peak power, so idle power is 1 - rho.
struct PowerModel {
  double rho = 0.5;
  double nu = 2.0;

  void validate() const;
};

struct IdcSpec {
  int id = 0;
  double k_max = 0.0;  // largest server count this IDC can activate
};

// One DTJ class: arrives at `origin`, may be served by any IDC in
// `serving_set` (the origin itself need not be a member).
struct JobClass {
  int id = 0;
  int origin = 0;
  std::vector<int> serving_set;
  double mean_rate = 0.0;      // lambda_j, traffic units per slot
  double arrival_bound = 0.0;  // D_j^m, hard per-slot arrival cap
};

// Piecewise-linear convex link cost: value(u) = max_k (slope_k*u +
// intercept_k) over utilization u >= 0.  Slopes must be strictly increasing
// and the value at u = 0 must equal intercept_0, i.e. intercept_0 is the
// largest intercept.
struct ShiftCostSegment {
  double slope = 0.0;
  double intercept = 0.0;
};

class ShiftCostModel {
 public:
  ShiftCostModel() = default;
  explicit ShiftCostModel(std::vector<ShiftCostSegment> segments);

  // Six segments with slopes {1,3,10,70,500,5000}, kinks at utilization
  // {1/3, 2/3, 9/10, 1, 11/10}, intercepts chosen so the curve is continuous
  // and starts at 0.
  static ShiftCostModel default_model();

  double value(double utilization) const;
  // Smallest and largest maximizing slope at `utilization` (they differ only
  // exactly at a kink).  Used for subgradient checks.
  double min_active_slope(double utilization) const;
  double max_active_slope(double utilization) const;

  double intercept_at_zero() const { return segments_.front().intercept; }
  const std::vector<ShiftCostSegment>& segments() const { return segments_; }

 private:
  std::vector<ShiftCostSegment> segments_;
};

// Static description of the federation: IDCs, job classes, service rates
// r_ij (capacity -> traffic conversion, defined only for i in the serving
// set), and one shift-cost model per ordered IDC pair.
class Topology {
 public:
  Topology() = default;  // empty; lets Scenario and tests fill in later
  Topology(std::vector<IdcSpec> idcs, std::vector<JobClass> jobs,
           std::vector<double> service_rates,  // n*m row-major, 0 if unservable
           ShiftCostModel link_cost = ShiftCostModel::default_model());

  int idc_count() const { return n_; }
  int job_count() const { return m_; }

  const IdcSpec& idc(int i) const { return idcs_[i]; }
  const JobClass& job(int j) const { return jobs_[j]; }

  bool can_serve(int i, int j) const { return service_rates_[i * m_ + j] > 0.0; }
  double service_rate(int i, int j) const { return service_rates_[i * m_ + j]; }

  // Pi_i: jobs servable at IDC i (ascending ids).
  const std::vector<int>& jobs_at(int i) const { return jobs_at_[i]; }
  // Upsilon_{od}: jobs with origin o servable at d != o (ascending ids).
  const std::vector<int>& shifted_jobs(int o, int d) const {
    return shifted_jobs_[o * n_ + d];
  }

  const ShiftCostModel& link_cost(int, int) const { return link_cost_; }

  std::vector<double> mean_rates() const;

 private:
  int n_ = 0;
  int m_ = 0;
  std::vector<IdcSpec> idcs_;
  std::vector<JobClass> jobs_;
  std::vector<double> service_rates_;
  std::vector<std::vector<int>> jobs_at_;
  std::vector<std::vector<int>> shifted_jobs_;
  ShiftCostModel link_cost_;
};

// Exogenous per-slot conditions: active servers K_i^t, electricity price
// alpha_i^t, DSJ capacity usage S_i0^t, and link bandwidth B_{od}^t (traffic
// units per slot, diagonal unused).
struct SystemState {
  std::vector<double> active_servers;
  std::vector<double> price;
  std::vector<double> dsj_capacity;
  std::vector<double> bandwidth;  // n*n row-major

  double bw(int o, int d, int n) const { return bandwidth[o * n + d]; }
  double residual(int i) const { return active_servers[i] - dsj_capacity[i]; }

  void validate(const Topology& topo) const;
};

// DTJ capacity shares S_ij >= 0; entries outside the serving set stay 0.
struct Allocation {
  int n = 0;
  int m = 0;
  std::vector<double> s;

  Allocation() = default;
  Allocation(int n_idcs, int n_jobs)
      : n(n_idcs), m(n_jobs), s(static_cast<std::size_t>(n_idcs) * n_jobs, 0.0) {}

  double& at(int i, int j) { return s[static_cast<std::size_t>(i) * m + j]; }
  double at(int i, int j) const { return s[static_cast<std::size_t>(i) * m + j]; }

  // Traffic shifted over link o->d: sum over Upsilon_{od} of r_dj * S_dj.
  double shifted_volume(const Topology& topo, const SystemState& state, int o,
                        int d) const;

  // Throws FeasibilityError listing every violated constraint.
  void validate(const Topology& topo, const SystemState& state,
                double tol = kFeasTol) const;
};

struct QueueVector {
  std::vector<double> q;

  explicit QueueVector(int m = 0) : q(m, 0.0) {}
  double& operator[](int j) { return q[j]; }
  double operator[](int j) const { return q[j]; }
  int size() const { return static_cast<int>(q.size()); }
};

struct CostBreakdown {
  std::vector<double> energy_per_idc;
  std::vector<double> shift_per_link;  // n*n row-major
  double energy_total = 0.0;
  double shift_total = 0.0;
  double grand_total = 0.0;
};

// --------------------------------------------------------------------------
// Per-slot physics.
// --------------------------------------------------------------------------

// P(s) = rho*s^nu + 1 - rho.  Throws std::domain_error for s outside [0,1].
double server_power(double speed, const PowerModel& model);

// Aggregate IDC power when total demand S is spread evenly over K active
// servers: (1-rho)*K + rho*S^nu/K^(nu-1); with the default nu = 2 this is
// (1-rho)*K + rho*S^2/K.  K = 0 requires S = 0 and costs 0.
double idc_power(double active_servers, double total_demand,
                 const PowerModel& model);

// Piecewise-linear link cost at `utilization`.
double shift_cost(double utilization, const ShiftCostModel& model);

// Full cost of one slot: per-IDC energy priced at alpha_i plus per-link shift
// cost.  A link with zero shifted traffic contributes nothing, so a model
// with a positive intercept at zero is only charged when traffic flows.
CostBreakdown slot_cost(const SystemState& state, const Topology& topo,
                        const Allocation& alloc, const PowerModel& model);

// Total service rate of job j: sum over serving IDCs of r_ij * S_ij.
double serve_rate(const Topology& topo, const Allocation& alloc, int j);

std::vector<double> serve_rates(const Topology& topo, const Allocation& alloc);

// One queue update: Q' = max(Q - service, 0) + arrivals.  Arrivals land after
// service, so a slot's service can never consume that same slot's arrivals.
QueueVector queue_step(const QueueVector& q, const std::vector<double>& service,
                       const std::vector<double>& arrivals);

}  // namespace tf
