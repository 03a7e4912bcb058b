#include <algorithm>
#include <cmath>
#include <limits>

#include "internal_util.hpp"
#include "qp_admm.hpp"
#include "slot_qp.hpp"
#include "troughfill/solver.hpp"

namespace tf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

namespace detail {

KktReport evaluate_kkt(const SlotQp& qp, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& y) {
  KktReport rep;
  if (qp.nvars() == 0) return rep;

  Eigen::VectorXd px = qp.P * x;
  Eigen::VectorXd aty = qp.A.transpose() * y;
  Eigen::VectorXd rd = px + qp.q + aty;
  double dscale = std::max({1.0, px.lpNorm<Eigen::Infinity>(),
                            qp.q.lpNorm<Eigen::Infinity>(),
                            aty.lpNorm<Eigen::Infinity>()});
  rep.stationarity = rd.lpNorm<Eigen::Infinity>() / dscale;

  Eigen::VectorXd z = qp.A * x;
  double pscale = std::max(1.0, z.lpNorm<Eigen::Infinity>());
  double yscale = std::max(1.0, y.lpNorm<Eigen::Infinity>());
  double pworst = 0.0;
  double cworst = 0.0;
  for (int r = 0; r < qp.nrows(); ++r) {
    double viol =
        std::max({0.0, qp.lo[r] - z[r], z[r] - qp.up[r]});
    pworst = std::max(pworst, viol);
    if (y[r] > 0.0) {
      if (std::isfinite(qp.up[r])) {
        double slack = std::max(0.0, qp.up[r] - z[r]);
        cworst = std::max(cworst, y[r] * slack / (yscale * pscale));
      } else {
        cworst = std::max(cworst, y[r] / yscale);
      }
    } else if (y[r] < 0.0) {
      if (std::isfinite(qp.lo[r])) {
        double slack = std::max(0.0, z[r] - qp.lo[r]);
        cworst = std::max(cworst, -y[r] * slack / (yscale * pscale));
      } else {
        cworst = std::max(cworst, -y[r] / yscale);
      }
    }
  }
  rep.primal = pworst / pscale;
  rep.complementarity = cworst;
  return rep;
}

SolveDuals structure_duals(const SlotQp& qp, const Eigen::VectorXd& y) {
  SolveDuals d;
  d.capacity.assign(qp.n, 0.0);
  d.bandwidth.assign(static_cast<std::size_t>(qp.n) * qp.n, 0.0);
  d.link_slope.assign(static_cast<std::size_t>(qp.n) * qp.n, 0.0);
  bool any_cap = false;
  for (int r = 0; r < qp.nrows(); ++r) {
    const RowInfo& info = qp.rows[r];
    switch (info.kind) {
      case RowKind::kCapacity:
        d.capacity[info.a] = std::max(0.0, y[r]);
        break;
      case RowKind::kBandwidth:
        d.bandwidth[info.a * qp.n + info.b] = std::max(0.0, y[r]);
        break;
      case RowKind::kJobCap:
        if (!any_cap) {
          d.job_cap.assign(qp.m, 0.0);
          any_cap = true;
        }
        d.job_cap[info.a] = std::max(0.0, y[r]);
        break;
      case RowKind::kEpigraph:
        d.link_slope[info.a * qp.n + info.b] +=
            std::max(0.0, y[r]) * info.slope / qp.vprime;
        break;
      case RowKind::kNonNeg:
        break;
    }
  }
  // Single-segment links have a constant subgradient.
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, dd] = qp.links[l];
    if (qp.epivar_of[o * qp.n + dd] < 0) {
      d.link_slope[o * qp.n + dd] = qp.link_a1[l];
    }
  }
  return d;
}

}  // namespace detail

namespace {

using detail::RowKind;
using detail::SlotQp;

void require_shape(const SlotQp& qp, const Allocation& alloc) {
  if (alloc.n != qp.n || alloc.m != qp.m) {
    throw std::invalid_argument(detail::fmt(
        "allocation shape (%d, %d) does not match the problem (%d, %d)",
        alloc.n, alloc.m, qp.n, qp.m));
  }
  for (double v : alloc.s) {
    if (!std::isfinite(v)) {
      throw std::domain_error("allocation contains a non-finite entry");
    }
  }
}

// Shares at positions the program has no variable for (no residual capacity,
// or no bandwidth into the IDC) cannot be carried feasibly; report them as
// a primal violation.
double off_variable_mass(const SlotQp& qp, const Allocation& alloc) {
  double extra = 0.0;
  for (int i = 0; i < qp.n; ++i) {
    for (int j = 0; j < qp.m; ++j) {
      if (qp.svar_of[i * qp.m + j] < 0) {
        extra = std::max(extra, alloc.at(i, j));
      }
    }
  }
  return extra;
}

// Fill the nonnegativity-row duals so that any positive reduced gradient at a
// zero share is absorbed (stationarity at a lower bound is one-sided).
void absorb_nonneg(const SlotQp& qp, const Eigen::VectorXd& x,
                   Eigen::VectorXd& y) {
  Eigen::VectorXd g = qp.P * x + qp.q + qp.A.transpose() * y;
  for (int r = 0; r < qp.nrows(); ++r) {
    if (qp.rows[r].kind != RowKind::kNonNeg) continue;
    int v = qp.rows[r].a;
    if (x[v] <= 1e-9 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      y[r] = std::min(0.0, -g[v]);
    }
  }
}

}  // namespace

KktReport check_kkt(const SlotProblem& problem, const Allocation& alloc) {
  SlotQp qp = detail::build_slot_qp(problem);
  if (qp.nvars() == 0) return KktReport{};
  require_shape(qp, alloc);
  Eigen::VectorXd x = detail::pack_allocation(qp, problem, alloc);
  Eigen::VectorXd z = qp.A * x;

  // Candidate rows: those close enough to a bound to carry a multiplier.
  // The multipliers minimizing the stationarity residual under the
  // complementarity sign pattern solve a least-squares problem with
  // one-sided bounds, which is itself a small QP.
  std::vector<int> cand;
  std::vector<double> ylo, yup;
  for (int r = 0; r < qp.nrows(); ++r) {
    double tol_lo = 1e-6 * (1.0 + std::abs(qp.lo[r]) + std::abs(z[r]));
    double tol_up = 1e-6 * (1.0 + std::abs(qp.up[r]) + std::abs(z[r]));
    bool near_lo = std::isfinite(qp.lo[r]) && z[r] - qp.lo[r] <= tol_lo;
    bool near_up = std::isfinite(qp.up[r]) && qp.up[r] - z[r] <= tol_up;
    if (!near_lo && !near_up) continue;
    cand.push_back(r);
    ylo.push_back(near_lo ? -kInf : 0.0);
    yup.push_back(near_up ? kInf : 0.0);
  }

  Eigen::VectorXd y = Eigen::VectorXd::Zero(qp.nrows());
  if (!cand.empty()) {
    const int k = static_cast<int>(cand.size());
    Eigen::MatrixXd ac(k, qp.nvars());
    for (int c = 0; c < k; ++c) ac.row(c) = qp.A.row(cand[c]);
    Eigen::VectorXd g0 = qp.P * x + qp.q;
    Eigen::MatrixXd py = ac * ac.transpose();
    Eigen::VectorXd qy = ac * g0;
    Eigen::MatrixXd ay = Eigen::MatrixXd::Identity(k, k);
    Eigen::VectorXd blo = Eigen::Map<Eigen::VectorXd>(ylo.data(), k);
    Eigen::VectorXd bup = Eigen::Map<Eigen::VectorXd>(yup.data(), k);
    detail::QpOptions opts;
    opts.eps_abs = 1e-11;
    opts.eps_rel = 1e-11;
    opts.max_iter = 20000;
    detail::AdmmQp nnls(py, qy, ay, blo, bup, opts);
    detail::QpSolution sol = nnls.solve();
    for (int c = 0; c < k; ++c) y[cand[c]] = sol.x[c];
  }
  KktReport rep = detail::evaluate_kkt(qp, x, y);
  double extra = off_variable_mass(qp, alloc);
  rep.primal = std::max(rep.primal, extra / std::max(1.0, extra));
  return rep;
}

KktReport check_kkt(const SlotProblem& problem, const Allocation& alloc,
                    const SolveDuals& duals) {
  SlotQp qp = detail::build_slot_qp(problem);
  if (qp.nvars() == 0) return KktReport{};
  require_shape(qp, alloc);
  const int n = qp.n;
  if (static_cast<int>(duals.capacity.size()) != n ||
      static_cast<int>(duals.bandwidth.size()) != n * n ||
      static_cast<int>(duals.link_slope.size()) != n * n ||
      (!duals.job_cap.empty() &&
       static_cast<int>(duals.job_cap.size()) != qp.m)) {
    throw std::invalid_argument("dual vector sizes do not match the problem");
  }
  Eigen::VectorXd x = detail::pack_allocation(qp, problem, alloc);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(qp.nrows());
  for (int r = 0; r < qp.nrows(); ++r) {
    const detail::RowInfo& info = qp.rows[r];
    switch (info.kind) {
      case RowKind::kCapacity:
        y[r] = duals.capacity[info.a];
        break;
      case RowKind::kBandwidth:
        y[r] = duals.bandwidth[info.a * n + info.b];
        break;
      case RowKind::kJobCap:
        y[r] = duals.job_cap.empty() ? 0.0 : duals.job_cap[info.a];
        break;
      default:
        break;
    }
  }
  // Split each link's effective slope across the segments active at the
  // current utilization; the split must total the full cost scale.
  const Topology& topo = *problem.topo;
  const SystemState& st = *problem.state;
  for (std::size_t l = 0; l < qp.links.size(); ++l) {
    auto [o, d] = qp.links[l];
    if (qp.epivar_of[o * n + d] < 0) continue;
    const auto& segs = topo.link_cost(o, d).segments();
    double u = alloc.shifted_volume(topo, st, o, d) / st.bw(o, d, n);
    double best = -kInf;
    for (const auto& seg : segs) {
      best = std::max(best, seg.slope * u + seg.intercept);
    }
    int first = -1, last = -1;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      double val = segs[s].slope * u + segs[s].intercept;
      if (val >= best - 1e-9 * (1.0 + std::abs(best))) {
        if (first < 0) first = static_cast<int>(s);
        last = static_cast<int>(s);
      }
    }
    double alo = segs[first].slope;
    double ahi = segs[last].slope;
    double target = std::clamp(duals.link_slope[o * n + d], alo, ahi);
    double w = (ahi > alo) ? (target - alo) / (ahi - alo) : 0.0;
    for (int r = 0; r < qp.nrows(); ++r) {
      const detail::RowInfo& info = qp.rows[r];
      if (info.kind != RowKind::kEpigraph || info.a != o || info.b != d) {
        continue;
      }
      if (info.seg == first) y[r] += qp.vprime * (1.0 - w);
      if (info.seg == last) y[r] += qp.vprime * w;
    }
  }
  absorb_nonneg(qp, x, y);
  KktReport rep = detail::evaluate_kkt(qp, x, y);
  double extra = off_variable_mass(qp, alloc);
  rep.primal = std::max(rep.primal, extra / std::max(1.0, extra));
  return rep;
}

}  // namespace tf
