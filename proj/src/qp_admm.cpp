#include "qp_admm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "troughfill/common.hpp"

namespace tf::detail {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp_mag(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

}  // namespace

AdmmQp::AdmmQp(Eigen::MatrixXd P, Eigen::VectorXd q, Eigen::MatrixXd A,
               Eigen::VectorXd lo, Eigen::VectorXd up, QpOptions opts)
    : P_(std::move(P)),
      q_(std::move(q)),
      A_(std::move(A)),
      lo_(std::move(lo)),
      up_(std::move(up)),
      opts_(opts) {
  equilibrate();
  rho_ = Eigen::VectorXd::Constant(A_.rows(), opts_.rho0);
  factorize();
}

void AdmmQp::set_q(const Eigen::VectorXd& q) {
  q_ = q;
  qs_ = cost_scale_ * d_.cwiseProduct(q_);
}

void AdmmQp::set_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& up) {
  lo_ = lo;
  up_ = up;
  for (int r = 0; r < A_.rows(); ++r) {
    los_[r] = std::isfinite(lo_[r]) ? lo_[r] * e_[r] : lo_[r];
    ups_[r] = std::isfinite(up_[r]) ? up_[r] * e_[r] : up_[r];
  }
}

void AdmmQp::equilibrate() {
  const int n = static_cast<int>(P_.rows());
  const int mr = static_cast<int>(A_.rows());
  d_ = Eigen::VectorXd::Ones(n);
  e_ = Eigen::VectorXd::Ones(mr);
  Ps_ = P_;
  As_ = A_;
  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd dv(n), ev(mr);
    for (int j = 0; j < n; ++j) {
      double norm = 0.0;
      for (int i = 0; i < n; ++i) norm = std::max(norm, std::abs(Ps_(i, j)));
      for (int r = 0; r < mr; ++r) norm = std::max(norm, std::abs(As_(r, j)));
      dv[j] = 1.0 / std::sqrt(clamp_mag(norm, 1e-8, 1e8));
    }
    for (int r = 0; r < mr; ++r) {
      double norm = 0.0;
      for (int j = 0; j < n; ++j) norm = std::max(norm, std::abs(As_(r, j)));
      ev[r] = 1.0 / std::sqrt(clamp_mag(norm, 1e-8, 1e8));
    }
    Ps_ = dv.asDiagonal() * Ps_ * dv.asDiagonal();
    As_ = ev.asDiagonal() * As_ * dv.asDiagonal();
    d_ = d_.cwiseProduct(dv);
    e_ = e_.cwiseProduct(ev);
  }
  // Cost normalization: without it the duals live on the scale of |q| and
  // the step-size heuristics chase them across orders of magnitude.
  double gnorm = d_.cwiseProduct(q_).cwiseAbs().maxCoeff();
  cost_scale_ = 1.0 / clamp_mag(std::max(gnorm, Ps_.cwiseAbs().maxCoeff()),
                                1e-6, 1e12);
  Ps_ *= cost_scale_;
  qs_ = cost_scale_ * d_.cwiseProduct(q_);
  los_.resize(mr);
  ups_.resize(mr);
  for (int r = 0; r < mr; ++r) {
    los_[r] = std::isfinite(lo_[r]) ? lo_[r] * e_[r] : lo_[r];
    ups_[r] = std::isfinite(up_[r]) ? up_[r] * e_[r] : up_[r];
  }
}

void AdmmQp::factorize() {
  Eigen::MatrixXd K = Ps_;
  K.diagonal().array() += opts_.sigma;
  K.noalias() += As_.transpose() * rho_.asDiagonal() * As_;
  llt_.compute(K);
  double sigma = opts_.sigma;
  while (llt_.info() != Eigen::Success && sigma < 1.0) {
    sigma *= 100.0;
    K = Ps_;
    K.diagonal().array() += sigma;
    K.noalias() += As_.transpose() * rho_.asDiagonal() * As_;
    llt_.compute(K);
  }
  if (llt_.info() != Eigen::Success) {
    throw SolverError("ADMM normal-equation factorization failed");
  }
}

AdmmQp::Residuals AdmmQp::compute_residuals(const Eigen::VectorXd& xs,
                                            const Eigen::VectorXd& ys,
                                            const Eigen::VectorXd& zs) const {
  // Everything reported in unscaled units.
  Eigen::VectorXd ax = (As_ * xs).cwiseQuotient(e_);
  Eigen::VectorXd z = zs.cwiseQuotient(e_);
  Eigen::VectorXd px = (Ps_ * xs).cwiseQuotient(d_) / cost_scale_;
  Eigen::VectorXd aty =
      (As_.transpose() * ys).cwiseQuotient(d_) / cost_scale_;
  Eigen::VectorXd qv = qs_.cwiseQuotient(d_) / cost_scale_;
  Residuals res;
  res.rp = (ax - z).cwiseAbs().maxCoeff();
  res.rd = (px + qv + aty).cwiseAbs().maxCoeff();
  res.sp = std::max(ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
  res.sd = std::max({px.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(),
                     qv.cwiseAbs().maxCoeff()});
  res.eps_p = opts_.eps_abs + opts_.eps_rel * res.sp;
  res.eps_d = opts_.eps_abs + opts_.eps_rel * res.sd;
  return res;
}

QpSolution AdmmQp::solve(const Eigen::VectorXd* x_warm,
                         const Eigen::VectorXd* y_warm) {
  const int n = nvars();
  const int mr = nrows();
  Eigen::VectorXd xs = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd ys = Eigen::VectorXd::Zero(mr);
  if (x_warm != nullptr && x_warm->size() == n) xs = x_warm->cwiseQuotient(d_);
  if (y_warm != nullptr && y_warm->size() == mr) {
    ys = cost_scale_ * y_warm->cwiseQuotient(e_);
  }
  Eigen::VectorXd zs = (As_ * xs).cwiseMax(los_).cwiseMin(ups_);

  QpSolution sol;
  Eigen::VectorXd rhs(n), xt(n), zt(mr), w(mr);
  // A verified polish is a complete KKT certificate, so trying it along the
  // way lets degenerate instances (active sets ADMM chatters on) finish as
  // soon as the iterate identifies the right set.
  int next_polish = opts_.polish ? 100 : opts_.max_iter + 1;
  int it = 0;
  for (it = 1; it <= opts_.max_iter; ++it) {
    rhs = opts_.sigma * xs - qs_;
    rhs.noalias() += As_.transpose() * (rho_.cwiseProduct(zs) - ys);
    xt = llt_.solve(rhs);
    zt.noalias() = As_ * xt;

    xs = opts_.alpha * xt + (1.0 - opts_.alpha) * xs;
    w = opts_.alpha * zt + (1.0 - opts_.alpha) * zs + ys.cwiseQuotient(rho_);
    Eigen::VectorXd z_next = w.cwiseMax(los_).cwiseMin(ups_);
    ys += rho_.cwiseProduct(opts_.alpha * zt + (1.0 - opts_.alpha) * zs -
                            z_next);
    zs = z_next;

    if (it % opts_.check_every == 0 || it == opts_.max_iter) {
      Residuals res = compute_residuals(xs, ys, zs);
      sol.primal_res = res.rp;
      sol.dual_res = res.rd;
      if (opts_.trace && it % (opts_.check_every * 10) == 0) {
        std::fprintf(stderr,
                     "admm it=%6d rp=%.3e rd=%.3e ep=%.3e ed=%.3e rho=%.3e\n",
                     it, res.rp, res.rd, res.eps_p, res.eps_d, rho_[0]);
      }
      if (res.rp <= res.eps_p && res.rd <= res.eps_d) {
        sol.converged = true;
        break;
      }
      // Rebalance the step when the residuals, relative to the iterate
      // norms, drift apart.  Skip the initial transient (duals still
      // developing) and clamp gently to avoid oscillation.
      if (it >= opts_.check_every * 10 && it % (opts_.check_every * 4) == 0 &&
          refactor_count_ < opts_.max_refactor) {
        double rp_rel = res.rp / std::max(res.sp, 1e-12);
        double rd_rel = res.rd / std::max(res.sd, 1e-12);
        double scale = std::sqrt(std::max(rp_rel, 1e-14) /
                                 std::max(rd_rel, 1e-14));
        if (scale > 5.0 || scale < 0.2) {
          rho_ *= clamp_mag(scale, 0.2, 5.0);
          for (int r = 0; r < mr; ++r) rho_[r] = clamp_mag(rho_[r], 1e-3, 1e3);
          ++refactor_count_;
          factorize();
        }
      }
    }
    if (it >= next_polish) {
      QpSolution cand;
      cand.iterations = it;
      cand.x = xs.cwiseProduct(d_);
      cand.y = ys.cwiseProduct(e_) / cost_scale_;
      cand.z = zs.cwiseQuotient(e_);
      cand.primal_res = sol.primal_res;
      cand.dual_res = sol.dual_res;
      if (polish(&cand)) return cand;
      next_polish *= 2;
    }
  }
  sol.iterations = std::min(it, opts_.max_iter);
  sol.x = xs.cwiseProduct(d_);
  sol.y = ys.cwiseProduct(e_) / cost_scale_;
  sol.z = zs.cwiseQuotient(e_);
  if (opts_.polish) {
    QpSolution polished = sol;
    if (polish(&polished)) sol = polished;
  }
  return sol;
}

namespace {

// min ||M u - b|| over u >= 0 (Lawson-Hanson active set).  Deterministic;
// returns the final iterate even if the outer cap is hit.
Eigen::VectorXd nnls(const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
  const int k = static_cast<int>(M.cols());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(k);
  if (k == 0) return u;
  std::vector<char> passive(k, 0);
  const double wtol = 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff());
  auto ls_passive = [&](const std::vector<int>& cols) {
    Eigen::MatrixXd mp(M.rows(), cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) mp.col(c) = M.col(cols[c]);
    return Eigen::VectorXd(mp.colPivHouseholderQr().solve(b));
  };
  for (int outer = 0; outer < 3 * k + 10; ++outer) {
    Eigen::VectorXd w = M.transpose() * (b - M * u);
    int best = -1;
    double bw = wtol;
    for (int j = 0; j < k; ++j) {
      if (!passive[j] && w[j] > bw) {
        bw = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[best] = 1;
    for (int inner = 0; inner < 3 * k + 10; ++inner) {
      std::vector<int> cols;
      for (int j = 0; j < k; ++j) {
        if (passive[j]) cols.push_back(j);
      }
      if (cols.empty()) break;
      Eigen::VectorXd zp = ls_passive(cols);
      bool all_pos = true;
      for (int c = 0; c < zp.size(); ++c) all_pos = all_pos && zp[c] > 0.0;
      if (all_pos) {
        u.setZero();
        for (std::size_t c = 0; c < cols.size(); ++c) u[cols[c]] = zp[c];
        break;
      }
      double alpha = 1.0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (zp[c] <= 0.0) {
          double uc = u[cols[c]];
          if (uc - zp[c] > 0.0) alpha = std::min(alpha, uc / (uc - zp[c]));
        }
      }
      for (std::size_t c = 0; c < cols.size(); ++c) {
        u[cols[c]] += alpha * (zp[c] - u[cols[c]]);
        if (u[cols[c]] <= 1e-14) {
          u[cols[c]] = 0.0;
          passive[cols[c]] = 0;
        }
      }
    }
  }
  return u;
}

}  // namespace

// Polish: pin every row the iterate ended clamped on (the projection writes
// bounds exactly, so scaled-z comparison detects activity reliably), solve
// the delta-regularized KKT system with all of them (quasi-definite, so
// redundant rows are harmless), then recover signed multipliers by NNLS;
// per-row signs mean nothing at a degenerate vertex.  Verification against
// the full unscaled problem decides acceptance; a failed polish falls back
// to the ADMM iterate.
bool AdmmQp::polish(QpSolution* sol) const {
  const int n = nvars();
  const int mr = nrows();
  const double delta = opts_.polish_delta;

  std::vector<int> act;      // active row indices
  std::vector<int> act_side; // -1 lower, +1 upper
  std::vector<char> in_act(mr, 0);
  act.reserve(mr);
  for (int r = 0; r < mr; ++r) {
    double zr = sol->z[r] * e_[r];
    int side = 0;
    if (std::isfinite(lo_[r]) &&
        zr - los_[r] <= 1e-12 * (1.0 + std::abs(los_[r]))) {
      side = -1;
    } else if (std::isfinite(up_[r]) &&
               ups_[r] - zr <= 1e-12 * (1.0 + std::abs(ups_[r]))) {
      side = +1;
    }
    if (side != 0) {
      act.push_back(r);
      act_side.push_back(side);
      in_act[r] = 1;
    }
  }

  Eigen::VectorXd x, ax, xhat;
  for (int round = 0; round < 40; ++round) {
    const int na = static_cast<int>(act.size());
    if (opts_.trace) {
      std::fprintf(stderr, "polish round %d: %d active of %d rows\n", round,
                   na, mr);
    }
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + na, n + na);
    K.topLeftCorner(n, n) = Ps_;
    K.topLeftCorner(n, n).diagonal().array() += delta;
    Eigen::VectorXd rhs(n + na);
    rhs.head(n) = -qs_;
    for (int k = 0; k < na; ++k) {
      int r = act[k];
      K.block(n + k, 0, 1, n) = As_.row(r);
      K.block(0, n + k, n, 1) = As_.row(r).transpose();
      K(n + k, n + k) = -delta;
      rhs[n + k] = act_side[k] < 0 ? los_[r] : ups_[r];
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd t = lu.solve(rhs);
    // Refine against the unregularized KKT system.
    for (int ref = 0; ref < 3; ++ref) {
      Eigen::VectorXd resid(n + na);
      resid.head(n) = -qs_ - Ps_ * t.head(n);
      for (int k = 0; k < na; ++k) {
        int r = act[k];
        resid.head(n) -= As_.row(r).transpose() * t[n + k];
        resid[n + k] = rhs[n + k] - As_.row(r).dot(t.head(n));
      }
      t += lu.solve(resid);
    }
    if (!t.allFinite()) return false;

    xhat = t.head(n);
    x = xhat.cwiseProduct(d_);
    ax = A_ * x;
    std::vector<int> add_rows, add_sides;
    for (int r = 0; r < mr; ++r) {
      if (in_act[r]) continue;
      double lo_viol = std::isfinite(lo_[r]) ? lo_[r] - ax[r] : 0.0;
      double up_viol = std::isfinite(up_[r]) ? ax[r] - up_[r] : 0.0;
      double vtol =
          1e-10 *
          (1.0 + std::max(std::isfinite(lo_[r]) ? std::abs(lo_[r]) : 0.0,
                          std::isfinite(up_[r]) ? std::abs(up_[r]) : 0.0));
      if (std::max(lo_viol, up_viol) > vtol) {
        add_rows.push_back(r);
        add_sides.push_back(up_viol > lo_viol ? +1 : -1);
      }
    }
    if (add_rows.empty()) break;
    if (opts_.trace) {
      std::fprintf(stderr, "polish: adding %d violated rows\n",
                   (int)add_rows.size());
    }
    for (std::size_t k = 0; k < add_rows.size(); ++k) {
      act.push_back(add_rows[k]);
      act_side.push_back(add_sides[k]);
      in_act[add_rows[k]] = 1;
    }
    if (round == 39) return false;
  }
  if (x.size() == 0) return false;

  // Signed multipliers via NNLS in the scaled space: columns sigma_k A_k,
  // target -(P xhat + q).
  const int na = static_cast<int>(act.size());
  Eigen::MatrixXd cols(n, na);
  for (int k = 0; k < na; ++k) {
    double sigma = act_side[k] < 0 ? -1.0 : 1.0;
    cols.col(k) = sigma * As_.row(act[k]).transpose();
  }
  Eigen::VectorXd target = -(Ps_ * xhat + qs_);
  Eigen::VectorXd u = nnls(cols, target);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(mr);
  for (int k = 0; k < na; ++k) {
    double sigma = act_side[k] < 0 ? -1.0 : 1.0;
    y[act[k]] = sigma * u[k] * e_[act[k]] / cost_scale_;
  }

  // Accept only near-exact polishes; a failed polish falls back to the
  // ADMM iterate rather than degrading it.
  double rp = 0.0, rd = 0.0;
  for (int r = 0; r < mr; ++r) {
    double viol = std::max(std::isfinite(lo_[r]) ? lo_[r] - ax[r] : 0.0,
                           std::isfinite(up_[r]) ? ax[r] - up_[r] : 0.0);
    rp = std::max(rp, viol);
  }
  Eigen::VectorXd px = P_ * x;
  Eigen::VectorXd aty = A_.transpose() * y;
  rd = (px + q_ + aty).cwiseAbs().maxCoeff();
  double dscale = std::max({1.0, px.cwiseAbs().maxCoeff(),
                            q_.cwiseAbs().maxCoeff(),
                            aty.cwiseAbs().maxCoeff()});
  double pscale = std::max(1.0, ax.cwiseAbs().maxCoeff());
  if (opts_.trace) {
    std::fprintf(stderr,
                 "polish verify: rp=%.3e (tol %.3e) rd=%.3e (tol %.3e)\n",
                 rp, 1e-9 * pscale, rd, 1e-8 * dscale);
  }
  if (rp <= 1e-9 * pscale && rd <= 1e-8 * dscale) {
    sol->x = x;
    sol->y = y;
    sol->z = ax.cwiseMax(lo_).cwiseMin(up_);
    sol->primal_res = rp;
    sol->dual_res = rd;
    sol->polished = true;
    sol->converged = true;
    return true;
  }
  return false;
}

}  // namespace tf::detail
