#include "troughfill/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "internal_util.hpp"
#include "qp_admm.hpp"
#include "slot_qp.hpp"

namespace tf {

using detail::fmt;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void SlotProblem::validate() const {
  if (state == nullptr || topo == nullptr || power == nullptr) {
    throw std::invalid_argument("slot problem is missing state/topo/power");
  }
  power->validate();
  state->validate(*topo);
  int m = topo->job_count();
  if (static_cast<int>(reward_weights.size()) != m) {
    throw std::invalid_argument("reward weight vector has the wrong size");
  }
  for (int j = 0; j < m; ++j) {
    if (!std::isfinite(reward_weights[j]) || reward_weights[j] < 0.0) {
      throw std::domain_error(fmt("reward weight w[%d] = %g must be finite "
                                  "and nonnegative", j, reward_weights[j]));
    }
  }
  if (!(cost_scale > 0.0) || !std::isfinite(cost_scale)) {
    throw std::domain_error(fmt("cost scale %g must be positive", cost_scale));
  }
  if (service_caps) {
    if (static_cast<int>(service_caps->size()) != m) {
      throw std::invalid_argument("service cap vector has the wrong size");
    }
    for (int j = 0; j < m; ++j) {
      if (!std::isfinite((*service_caps)[j]) || (*service_caps)[j] < 0.0) {
        throw std::domain_error(fmt("service cap[%d] = %g must be finite and "
                                    "nonnegative", j, (*service_caps)[j]));
      }
    }
  }
}

double KktReport::worst() const {
  return std::max({stationarity, primal, complementarity});
}

namespace detail {

SlotQp build_slot_qp(const SlotProblem& problem) {
  problem.validate();
  const SystemState& st = *problem.state;
  const Topology& topo = *problem.topo;
  const PowerModel& pm = *problem.power;
  if (std::abs(pm.nu - 2.0) > 1e-12) {
    throw std::domain_error(
        "the per-slot program is quadratic only for nu = 2");
  }

  SlotQp qp;
  qp.n = topo.idc_count();
  qp.m = topo.job_count();
  qp.vprime = problem.cost_scale;
  qp.rho = pm.rho;

  const int n = qp.n;
  const int m = qp.m;
  std::vector<bool> active(n, false);
  for (int i = 0; i < n; ++i) {
    active[i] = st.active_servers[i] > 0.0 && st.residual(i) > 0.0;
  }

  qp.svar_of.assign(static_cast<std::size_t>(n) * m, -1);
  for (int j = 0; j < m; ++j) {
    int o = topo.job(j).origin;
    for (int i : topo.job(j).serving_set) {
      if (!active[i]) continue;
      if (i != o && st.bw(o, i, n) <= 0.0) continue;
      qp.svar_of[i * m + j] = static_cast<int>(qp.svars.size());
      qp.svars.emplace_back(i, j);
    }
  }
  qp.ns = static_cast<int>(qp.svars.size());

  qp.epivar_of.assign(static_cast<std::size_t>(n) * n, -1);
  for (int o = 0; o < n; ++o) {
    for (int d = 0; d < n; ++d) {
      if (o == d) continue;
      bool used = false;
      for (int j : topo.shifted_jobs(o, d)) {
        if (qp.svar_of[d * m + j] >= 0) {
          used = true;
          break;
        }
      }
      if (!used) continue;
      const ShiftCostModel& model = topo.link_cost(o, d);
      qp.link_b1.push_back(model.intercept_at_zero());
      qp.link_a1.push_back(model.segments().front().slope);
      if (model.segments().size() > 1) {
        qp.epivar_of[o * n + d] = qp.ns + qp.nt;
        ++qp.nt;
      }
      qp.links.emplace_back(o, d);
    }
  }

  const int nv = qp.ns + qp.nt;
  qp.P = Eigen::MatrixXd::Zero(nv, nv);
  qp.q = Eigen::VectorXd::Zero(nv);

  for (int i = 0; i < n; ++i) {
    if (!(st.active_servers[i] > 0.0)) continue;
    double ci = qp.vprime * st.price[i] * qp.rho / st.active_servers[i];
    qp.obj_const += ci * st.dsj_capacity[i] * st.dsj_capacity[i];
    qp.idle_cost += st.price[i] * (1.0 - qp.rho) * st.active_servers[i];
    if (!active[i]) continue;
    const auto& jobs = topo.jobs_at(i);
    for (int j1 : jobs) {
      int v1 = qp.svar_of[i * m + j1];
      if (v1 < 0) continue;
      qp.q[v1] += 2.0 * ci * st.dsj_capacity[i];
      for (int j2 : jobs) {
        int v2 = qp.svar_of[i * m + j2];
        if (v2 < 0) continue;
        qp.P(v1, v2) += 2.0 * ci;
      }
    }
  }
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    qp.q[v] -= problem.reward_weights[j] * topo.service_rate(i, j);
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    qp.intercept_offset += qp.link_b1[l];
    const ShiftCostModel& model = topo.link_cost(o, d);
    int tvar = qp.epivar_of[o * n + d];
    if (tvar >= 0) {
      qp.q[tvar] = qp.vprime;
    } else {
      // Single segment: the link cost is affine, fold it into the gradient.
      double a = model.segments().front().slope;
      double bw = st.bw(o, d, n);
      for (int j : topo.shifted_jobs(o, d)) {
        int v = qp.svar_of[d * m + j];
        if (v >= 0) qp.q[v] += qp.vprime * a * topo.service_rate(d, j) / bw;
      }
    }
  }

  // Rows: nonnegativity, residual capacity, bandwidth, caps, epigraph.
  std::vector<Eigen::VectorXd> arows;
  std::vector<double> alo, aup;
  auto add_row = [&](Eigen::VectorXd row, double lo, double up, RowInfo info) {
    arows.push_back(std::move(row));
    alo.push_back(lo);
    aup.push_back(up);
    qp.rows.push_back(info);
  };

  for (int v = 0; v < qp.ns; ++v) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(nv);
    row[v] = 1.0;
    add_row(std::move(row), 0.0, kInf, {RowKind::kNonNeg, v, 0, 0});
  }
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    Eigen::VectorXd row = Eigen::VectorXd::Zero(nv);
    bool any = false;
    for (int j : topo.jobs_at(i)) {
      int v = qp.svar_of[i * m + j];
      if (v >= 0) {
        row[v] = 1.0;
        any = true;
      }
    }
    if (any) add_row(std::move(row), -kInf, st.residual(i),
                     {RowKind::kCapacity, i, 0, 0});
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    Eigen::VectorXd row = Eigen::VectorXd::Zero(nv);
    for (int j : topo.shifted_jobs(o, d)) {
      int v = qp.svar_of[d * m + j];
      if (v >= 0) row[v] = topo.service_rate(d, j);
    }
    add_row(std::move(row), -kInf, st.bw(o, d, n),
            {RowKind::kBandwidth, o, d, 0});
  }
  if (problem.service_caps) {
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(nv);
      bool any = false;
      for (int i : topo.job(j).serving_set) {
        int v = qp.svar_of[i * m + j];
        if (v >= 0) {
          row[v] = topo.service_rate(i, j);
          any = true;
        }
      }
      if (any) add_row(std::move(row), -kInf, (*problem.service_caps)[j],
                       {RowKind::kJobCap, j, 0, 0});
    }
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    int tvar = qp.epivar_of[o * n + d];
    if (tvar < 0) continue;
    const ShiftCostModel& model = topo.link_cost(o, d);
    double bw = st.bw(o, d, n);
    double b1 = qp.link_b1[l];
    for (std::size_t k = 0; k < model.segments().size(); ++k) {
      const auto& seg = model.segments()[k];
      Eigen::VectorXd row = Eigen::VectorXd::Zero(nv);
      for (int j : topo.shifted_jobs(o, d)) {
        int v = qp.svar_of[d * m + j];
        if (v >= 0) row[v] = seg.slope * topo.service_rate(d, j) / bw;
      }
      row[tvar] = -1.0;
      add_row(std::move(row), -kInf, b1 - seg.intercept,
              {RowKind::kEpigraph, o, d, static_cast<int>(k), seg.slope});
    }
  }

  qp.A.resize(static_cast<int>(arows.size()), nv);
  qp.lo.resize(static_cast<int>(arows.size()));
  qp.up.resize(static_cast<int>(arows.size()));
  for (std::size_t r = 0; r < arows.size(); ++r) {
    qp.A.row(static_cast<int>(r)) = arows[r];
    qp.lo[static_cast<int>(r)] = alo[r];
    qp.up[static_cast<int>(r)] = aup[r];
  }
  return qp;
}

// Recompute the pieces that may change between solves over the same state:
// the reward part of q and the cap-row bounds.
void refresh_slot_qp(SlotQp& qp, const SlotProblem& problem) {
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    double ci = qp.vprime * st.price[i] * qp.rho / st.active_servers[i];
    qp.q[v] = 2.0 * ci * st.dsj_capacity[i] -
              problem.reward_weights[j] * topo.service_rate(i, j);
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    if (qp.epivar_of[o * qp.n + d] >= 0) continue;
    double a = topo.link_cost(o, d).segments().front().slope;
    double bw = st.bw(o, d, qp.n);
    for (int j : topo.shifted_jobs(o, d)) {
      int v = qp.svar_of[d * qp.m + j];
      if (v >= 0) qp.q[v] += qp.vprime * a * topo.service_rate(d, j) / bw;
    }
  }
  if (problem.service_caps) {
    for (int r = 0; r < qp.nrows(); ++r) {
      if (qp.rows[r].kind == RowKind::kJobCap) {
        qp.up[r] = (*problem.service_caps)[qp.rows[r].a];
      }
    }
  }
}

Allocation extract_allocation(const SlotQp& qp, const Eigen::VectorXd& x) {
  Allocation alloc(qp.n, qp.m);
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    alloc.at(i, j) = std::max(0.0, x[v]);
  }
  return alloc;
}

Eigen::VectorXd pack_allocation(const SlotQp& qp, const SlotProblem& problem,
                                const Allocation& alloc) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(qp.nvars());
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    x[v] = alloc.at(i, j);
  }
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    int tvar = qp.epivar_of[o * qp.n + d];
    if (tvar < 0) continue;
    double vol = alloc.shifted_volume(topo, st, o, d);
    double bw = st.bw(o, d, qp.n);
    x[tvar] = topo.link_cost(o, d).value(vol / bw) - qp.link_b1[l];
  }
  return x;
}

double objective_value(const SlotQp& qp, const SlotProblem& problem,
                       const Eigen::VectorXd& x) {
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  Allocation alloc = extract_allocation(qp, x);
  double obj = 0.0;
  for (int i = 0; i < qp.n; ++i) {
    if (!(st.active_servers[i] > 0.0)) continue;
    double ci = qp.vprime * st.price[i] * qp.rho / st.active_servers[i];
    double total = st.dsj_capacity[i];
    for (int j : topo.jobs_at(i)) total += alloc.at(i, j);
    obj += ci * total * total;
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    double vol = alloc.shifted_volume(topo, st, o, d);
    double bw = st.bw(o, d, qp.n);
    obj += qp.vprime * (topo.link_cost(o, d).value(vol / bw) - qp.link_b1[l]);
  }
  for (int j = 0; j < qp.m; ++j) {
    obj -= problem.reward_weights[j] * serve_rate(topo, alloc, j);
  }
  return obj;
}

}  // namespace detail

std::string SlotProblem::dump() const {
  detail::SlotQp qp = detail::build_slot_qp(*this);
  std::ostringstream os;
  os << "slot problem: " << qp.ns << " shares, " << qp.nt
     << " epigraph vars, " << qp.nrows() << " rows\n";
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    os << fmt("  x%-3d S(%d,%d)  q=%- .12g\n", v, i, j, qp.q[v]);
  }
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    int tvar = qp.epivar_of[o * qp.n + d];
    os << fmt("  link %d->%d  epivar=%d  b1=%g\n", o, d, tvar, qp.link_b1[l]);
  }
  os << "  P nonzeros:\n";
  for (int a = 0; a < qp.nvars(); ++a) {
    for (int b = a; b < qp.nvars(); ++b) {
      if (qp.P(a, b) != 0.0) os << fmt("    P(%d,%d)=%.12g\n", a, b, qp.P(a, b));
    }
  }
  static const char* kind_names[] = {"nonneg", "capacity", "bandwidth",
                                     "jobcap", "epigraph"};
  for (int r = 0; r < qp.nrows(); ++r) {
    os << fmt("  row %-3d %-9s lo=%- .6g up=%- .6g  [", r,
              kind_names[static_cast<int>(qp.rows[r].kind)], qp.lo[r],
              qp.up[r]);
    bool first = true;
    for (int v = 0; v < qp.nvars(); ++v) {
      if (qp.A(r, v) != 0.0) {
        if (!first) os << ", ";
        os << fmt("x%d:%g", v, qp.A(r, v));
        first = false;
      }
    }
    os << "]\n";
  }
  os << fmt("  const=%.12g idle=%.12g intercepts=%.12g\n", qp.obj_const,
            qp.idle_cost, qp.intercept_offset);
  return os.str();
}

namespace {

using detail::RowKind;
using detail::SlotQp;

// S = 0 is optimal iff the reduced gradient at the origin is nonnegative for
// every share (link shares see the first-segment slope of their link cost).
bool zero_is_optimal(const SlotQp& qp, const SlotProblem& problem) {
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  for (int v = 0; v < qp.ns; ++v) {
    auto [i, j] = qp.svars[v];
    double g = qp.q[v];
    int o = topo.job(j).origin;
    if (i != o && qp.epivar_of[o * qp.n + i] >= 0) {
      double a1 = topo.link_cost(o, i).segments().front().slope;
      g += qp.vprime * a1 * topo.service_rate(i, j) / st.bw(o, i, qp.n);
    }
    if (g < 0.0) return false;
  }
  return true;
}

SolveReport make_zero_report(const SlotQp& qp, const SlotProblem& problem) {
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  SolveReport report;
  report.allocation = Allocation(qp.n, qp.m);
  report.objective = qp.obj_const;
  report.idle_cost = qp.idle_cost;
  report.intercept_offset = qp.intercept_offset;
  report.iterations = 0;

  // Certify: first-segment epigraph rows carry the full cost-scale dual,
  // nonnegativity rows absorb what remains.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(qp.nvars());
  Eigen::VectorXd y = Eigen::VectorXd::Zero(qp.nrows());
  for (int r = 0; r < qp.nrows(); ++r) {
    if (qp.rows[r].kind == RowKind::kEpigraph && qp.rows[r].seg == 0) {
      y[r] = qp.vprime;
    }
  }
  for (int r = 0; r < qp.nrows(); ++r) {
    if (qp.rows[r].kind != RowKind::kNonNeg) continue;
    int v = qp.rows[r].a;
    auto [i, j] = qp.svars[v];
    double g = qp.q[v];
    int o = topo.job(j).origin;
    if (i != o && qp.epivar_of[o * qp.n + i] >= 0) {
      double a1 = topo.link_cost(o, i).segments().front().slope;
      g += qp.vprime * a1 * topo.service_rate(i, j) / st.bw(o, i, qp.n);
    }
    y[r] = -g;
  }
  report.kkt = detail::evaluate_kkt(qp, x, y);
  report.duals = detail::structure_duals(qp, y);
  return report;
}

SolveReport finish_report(const SlotQp& qp, const SlotProblem& problem,
                          const detail::QpSolution& sol,
                          const SolverOptions& opts, bool validate = true) {
  SolveReport report;
  report.allocation = detail::extract_allocation(qp, sol.x);
  if (validate) {
    report.allocation.validate(*problem.topo, *problem.state, opts.feas_tol);
  }
  report.objective = detail::objective_value(qp, problem, sol.x);
  report.idle_cost = qp.idle_cost;
  report.intercept_offset = qp.intercept_offset;
  report.iterations = sol.iterations;
  report.kkt = detail::evaluate_kkt(qp, sol.x, sol.y);
  report.duals = detail::structure_duals(qp, sol.y);
  return report;
}

detail::QpOptions loose_phase(const SolverOptions& opts) {
  detail::QpOptions q;
  q.eps_abs = 1e-7;
  q.eps_rel = std::min(1e-7, opts.rel_obj_tol);
  q.max_iter = std::min(4000, opts.max_iter);
  q.polish = opts.polish;
  return q;
}

}  // namespace

struct SlotSolverEngine::Impl {
  SolverOptions opts;
  struct Entry {
    SlotQp qp;
    std::unique_ptr<detail::AdmmQp> admm;
    Eigen::VectorXd x, y;
    bool has_warm = false;
  };
  std::unordered_map<int, Entry> cache;

  SolveReport solve(const SlotProblem& problem, int key) {
    if (key < 0) return solve_slot(problem, opts);

    auto it = cache.find(key);
    if (it == cache.end()) {
      Entry entry;
      entry.qp = detail::build_slot_qp(problem);
      it = cache.emplace(key, std::move(entry)).first;
    } else {
      detail::refresh_slot_qp(it->second.qp, problem);
    }
    Entry& entry = it->second;
    SlotQp& qp = entry.qp;
    if (qp.nvars() == 0 || zero_is_optimal(qp, problem)) {
      return make_zero_report(qp, problem);
    }
    if (entry.admm == nullptr) {
      entry.admm = std::make_unique<detail::AdmmQp>(
          qp.P, qp.q, qp.A, qp.lo, qp.up, loose_phase(opts));
    } else {
      entry.admm->set_q(qp.q);
      entry.admm->set_bounds(qp.lo, qp.up);
    }
    detail::QpSolution sol =
        entry.admm->solve(entry.has_warm ? &entry.x : nullptr,
                          entry.has_warm ? &entry.y : nullptr);
    if (!sol.converged || (!sol.polished && sol.primal_res > opts.feas_tol)) {
      // Slow path: a fresh tightly-tuned solve.
      return solve_slot(problem, opts);
    }
    entry.x = sol.x;
    entry.y = sol.y;
    entry.has_warm = true;
    return finish_report(qp, problem, sol, opts);
  }
};

SlotSolverEngine::SlotSolverEngine(SolverOptions opts)
    : impl_(std::make_unique<Impl>()) {
  impl_->opts = opts;
}
SlotSolverEngine::~SlotSolverEngine() = default;
SlotSolverEngine::SlotSolverEngine(SlotSolverEngine&&) noexcept = default;
SlotSolverEngine& SlotSolverEngine::operator=(SlotSolverEngine&&) noexcept =
    default;

SolveReport SlotSolverEngine::solve(const SlotProblem& problem, int cache_key) {
  return impl_->solve(problem, cache_key);
}

const SolverOptions& SlotSolverEngine::options() const { return impl_->opts; }

SolveReport solve_slot(const SlotProblem& problem, const SolverOptions& opts) {
  SlotQp qp = detail::build_slot_qp(problem);
  if (qp.nvars() == 0 || zero_is_optimal(qp, problem)) {
    return make_zero_report(qp, problem);
  }
  detail::AdmmQp admm(qp.P, qp.q, qp.A, qp.lo, qp.up, loose_phase(opts));
  detail::QpSolution sol = admm.solve();
  if (!sol.polished &&
      (!sol.converged || sol.primal_res > opts.feas_tol)) {
    detail::QpOptions tight;
    tight.eps_abs = 1e-10;
    tight.eps_rel = 1e-10;
    tight.max_iter = opts.max_iter;
    tight.polish = opts.polish;
    detail::AdmmQp admm2(qp.P, qp.q, qp.A, qp.lo, qp.up, tight);
    detail::QpSolution sol2 = admm2.solve(&sol.x, &sol.y);
    if (sol2.polished || sol2.primal_res <= sol.primal_res) sol = sol2;
  }
  if (!sol.converged && sol.primal_res > opts.feas_tol) {
    // The best iterate is infeasible by definition here; skip validation so
    // the convergence error is what callers actually see.
    SolveReport best = finish_report(qp, problem, sol, opts, false);
    throw SolverConvergenceError(
        fmt("slot solve did not converge in %d iterations (primal %.3g, "
            "dual %.3g)", sol.iterations, sol.primal_res, sol.dual_res),
        std::move(best));
  }
  return finish_report(qp, problem, sol, opts);
}

SolveReport solve_slot(const SlotProblem& problem, double rel_obj_tol) {
  SolverOptions opts;
  opts.rel_obj_tol = rel_obj_tol;
  return solve_slot(problem, opts);
}

Allocation sqtf_closed_form(const SystemState& state, const QueueVector& queues,
                            const std::vector<double>& rates, double v,
                            const PowerModel& power) {
  power.validate();
  if (std::abs(power.nu - 2.0) > 1e-12) {
    throw std::domain_error("the closed form assumes nu = 2");
  }
  if (state.active_servers.size() != 1) {
    throw std::domain_error("the closed form covers exactly one IDC");
  }
  if (queues.q.size() != rates.size()) {
    throw std::invalid_argument("queue and rate vectors disagree in size");
  }
  if (!(v > 0.0)) throw std::domain_error("v must be positive");
  const int m = static_cast<int>(rates.size());
  const double k = state.active_servers[0];
  const double s0 = state.dsj_capacity[0];
  const double alpha = state.price[0];
  Allocation alloc(1, m);
  if (!(k > 0.0)) return alloc;

  int best = -1;
  double best_qr = 0.0;
  for (int j = 0; j < m; ++j) {
    if (!(rates[j] > 0.0)) continue;
    double qr = queues[j] * rates[j];
    if (qr > best_qr) {
      best_qr = qr;
      best = j;
    }
  }
  if (best < 0) return alloc;

  double scale = 2.0 * v * power.rho * alpha;
  double share = 0.0;
  if (best_qr >= scale) {
    share = k - s0;
  } else if (best_qr >= scale * s0 / k) {
    share = best_qr * k / scale - s0;
  }
  alloc.at(0, best) = std::max(0.0, std::min(share, k - s0));
  return alloc;
}

}  // namespace tf
