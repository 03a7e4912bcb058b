#pragma once

// Internal: explicit quadratic-program form of a SlotProblem.
//
// Variables: one share S_ij per (IDC, job) pair that can actually carry load
// this slot, then one epigraph variable per active link with a multi-segment
// cost model.  Rows: nonnegativity per share, residual capacity per IDC,
// bandwidth per link, optional per-job service cap, and one epigraph
// halfspace per (link, segment).

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "troughfill/solver.hpp"

namespace tf::detail {

enum class RowKind { kNonNeg, kCapacity, kBandwidth, kJobCap, kEpigraph };

struct RowInfo {
  RowKind kind;
  int a = 0;        // var index / idc / origin / job
  int b = 0;        // destination idc for links
  int seg = 0;      // segment index for epigraph rows
  double slope = 0.0;  // segment slope for epigraph rows
};

struct SlotQp {
  int n = 0;   // IDCs
  int m = 0;   // jobs
  int ns = 0;  // share variables
  int nt = 0;  // epigraph variables

  std::vector<std::pair<int, int>> svars;  // var -> (i, j)
  std::vector<int> svar_of;                // n*m -> var index or -1
  std::vector<std::pair<int, int>> links;  // charged links (o, d); single-
                                           // segment ones are folded into q
  std::vector<int> epivar_of;              // n*n -> variable index or -1
  std::vector<double> link_b1;             // intercept at zero per link
  std::vector<double> link_a1;             // first-segment slope per link

  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd lo, up;
  std::vector<RowInfo> rows;

  double obj_const = 0.0;       // c_i * S_i0^2 terms, part of the objective
  double idle_cost = 0.0;       // sum_i alpha_i (1 - rho) K_i
  double intercept_offset = 0.0;
  double vprime = 1.0;
  double rho = 0.5;

  int nvars() const { return ns + nt; }
  int nrows() const { return static_cast<int>(rows.size()); }
};

SlotQp build_slot_qp(const SlotProblem& problem);

// Recompute q and the cap-row bounds for a new problem over the same state
// (same variable and row structure); everything else is left untouched.
void refresh_slot_qp(SlotQp& qp, const SlotProblem& problem);

// Objective evaluated directly from the model formula (quadratic energy plus
// zero-anchored link cost minus reward); exact for any feasible x, not only
// QP-feasible points with tight epigraph variables.
double objective_value(const SlotQp& qp, const SlotProblem& problem,
                       const Eigen::VectorXd& x);

Allocation extract_allocation(const SlotQp& qp, const Eigen::VectorXd& x);

// Pack an allocation into the variable vector, completing each epigraph
// variable with the exact link cost at the implied utilization.
Eigen::VectorXd pack_allocation(const SlotQp& qp, const SlotProblem& problem,
                                const Allocation& alloc);

// Normalized KKT residuals for (x, y) with the OSQP sign convention
// (y >= 0 active at upper bounds, y <= 0 at lower bounds).
KktReport evaluate_kkt(const SlotQp& qp, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& y);

SolveDuals structure_duals(const SlotQp& qp, const Eigen::VectorXd& y);

}  // namespace tf::detail
