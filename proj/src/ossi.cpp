#include <algorithm>
#include <cmath>
#include <limits>

#include "internal_util.hpp"
#include "troughfill/controllers.hpp"

// Offline optimum of the ergodic program
//
//   min  E_pi[ cost_omega(S^omega) ]   s.t.  E_pi[ R_j(S^omega) ] >= lambda_j
//
// by dual ascent on the rate constraints.  The dual function decomposes into
// one per-state slot problem with w = mu, so each ascent iteration is |Omega|
// warm-started solves; the expectation over states is exact because pi is
// known.  Per-state minimizers are unique in the aggregate-load directions
// but not in how load splits across jobs and links, so the returned policy is
// the step-weighted running average of the iterates, which converges to the
// primal optimum.

namespace tf {

namespace {

// Cost the convex program actually optimizes: slot_cost, except that a
// link's intercept at zero is charged whenever the link exists.  Identical
// to slot_cost for models with zero intercept (the default); keeps primal
// and dual values comparable otherwise.
double convex_cost(const SystemState& state, const Topology& topo,
                   const Allocation& alloc, const PowerModel& power) {
  double total = slot_cost(state, topo, alloc, power).grand_total;
  const int n = topo.idc_count();
  for (int o = 0; o < n; ++o) {
    for (int d = 0; d < n; ++d) {
      if (o == d || topo.shifted_jobs(o, d).empty()) continue;
      if (state.bw(o, d, n) <= 0.0) continue;
      if (alloc.shifted_volume(topo, state, o, d) > 0.0) continue;
      double b1 = topo.link_cost(o, d).intercept_at_zero();
      if (b1 > 0.0) total += b1;
    }
  }
  return total;
}

// Most service job j could get in state omega with everything to itself.
double solo_service_cap(const SystemState& state, const Topology& topo, int j) {
  const int n = topo.idc_count();
  const JobClass& job = topo.job(j);
  double cap = 0.0;
  for (int i : job.serving_set) {
    double r = topo.service_rate(i, j);
    if (r <= 0.0) continue;
    double s = std::max(state.residual(i), 0.0);
    if (i != job.origin) {
      double bw = state.bw(job.origin, i, n);
      s = std::min(s, bw / r);
    }
    cap += r * s;
  }
  return cap;
}

std::vector<double> serve_all(const Topology& topo, const Allocation& alloc) {
  std::vector<double> out(topo.job_count());
  for (int j = 0; j < topo.job_count(); ++j) {
    out[j] = serve_rate(topo, alloc, j);
  }
  return out;
}

}  // namespace

double max_stabilizable_scale(const StateDistribution& dist,
                              const Topology& topo, const PowerModel& power,
                              const std::vector<double>& lambda) {
  const int m = topo.job_count();
  const auto n_states = static_cast<int>(dist.states.size());
  std::vector<int> active;
  double lam_sq = 0.0;
  for (int j = 0; j < m; ++j) {
    if (lambda[j] > 0.0) {
      active.push_back(j);
      lam_sq += lambda[j] * lambda[j];
    }
  }
  if (active.empty()) return std::numeric_limits<double>::infinity();

  // c* = min over mu >= 0 with sum_j mu_j lambda_j = 1 of
  //      E_pi[ max feasible sum_j mu_j R_j ],
  // a convex piecewise-linear function minimized by projected subgradient.
  // The inner maximization runs through the slot solver with a vanishing
  // energy weight, so each evaluation is an LP up to a controlled error.
  double energy_scale = 1.0;
  for (int w = 0; w < n_states; ++w) {
    double e = 0.0;
    for (int i = 0; i < topo.idc_count(); ++i) {
      e += dist.states[w].price[i] * dist.states[w].active_servers[i];
    }
    energy_scale = std::max(energy_scale, e);
  }
  double delta = 1e-6 / energy_scale;

  auto project = [&](std::vector<double> z) {
    double lz = 0.0;
    double hi = -std::numeric_limits<double>::infinity();
    for (int j : active) {
      lz += lambda[j] * z[j];
      hi = std::max(hi, z[j] / lambda[j]);
    }
    double lo = (lz - 1.0) / lam_sq;
    for (int it = 0; it < 80; ++it) {
      double tau = 0.5 * (lo + hi);
      double f = 0.0;
      for (int j : active) {
        f += lambda[j] * std::max(z[j] - tau * lambda[j], 0.0);
      }
      (f >= 1.0 ? lo : hi) = tau;
    }
    std::vector<double> mu(m, 0.0);
    for (int j : active) mu[j] = std::max(z[j] - lo * lambda[j], 0.0);
    return mu;
  };

  std::vector<double> mu(m, 0.0);
  for (int j : active) mu[j] = lambda[j] / lam_sq;
  SlotSolverEngine engine;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 80; ++k) {
    double h = 0.0;
    std::vector<double> grad(m, 0.0);
    for (int w = 0; w < n_states; ++w) {
      SlotProblem problem;
      problem.state = &dist.states[w];
      problem.topo = &topo;
      problem.power = &power;
      problem.reward_weights = mu;
      problem.cost_scale = delta;
      Allocation a;
      try {
        a = engine.solve(problem, w).allocation;
      } catch (const SolverConvergenceError& e) {
        a = e.best_iterate().allocation;
      }
      auto served = serve_all(topo, a);
      for (int j = 0; j < m; ++j) {
        h += dist.probs[w] * mu[j] * served[j];
        grad[j] += dist.probs[w] * served[j];
      }
    }
    best = std::min(best, h);
    double gnorm = 0.0;
    for (double g : grad) gnorm += g * g;
    gnorm = std::sqrt(std::max(gnorm, 1e-30));
    double mu_mag = 0.0;
    for (int j : active) mu_mag = std::max(mu_mag, 1.0 / lambda[j]);
    double step = 0.3 * mu_mag / (gnorm * std::sqrt(static_cast<double>(k)));
    std::vector<double> z = mu;
    for (int j = 0; j < m; ++j) z[j] -= step * grad[j];
    mu = project(std::move(z));
  }
  return best;
}

OssiPolicy ossi_solve(const StateDistribution& dist, const Topology& topo,
                      const PowerModel& power,
                      const std::vector<double>& lambda,
                      const OssiOptions& opts) {
  dist.validate(topo);
  const int m = topo.job_count();
  const auto n_states = static_cast<int>(dist.states.size());
  if (static_cast<int>(lambda.size()) != m) {
    throw ConfigError("ossi lambda has wrong dimension");
  }
  for (double l : lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw ConfigError("ossi lambda must be finite and >= 0");
    }
  }

  // Necessary condition first: even alone, job j cannot beat its solo cap.
  double lambda_max = 0.0;
  for (int j = 0; j < m; ++j) {
    lambda_max = std::max(lambda_max, lambda[j]);
    double cap = 0.0;
    for (int w = 0; w < n_states; ++w) {
      cap += dist.probs[w] * solo_service_cap(dist.states[w], topo, j);
    }
    if (lambda[j] > cap * (1.0 + 1e-9)) {
      double scale = max_stabilizable_scale(dist, topo, power, lambda);
      throw ErgodicInfeasibleError(
          detail::fmt("ergodic program infeasible: job %d needs rate %g but "
                      "can be served at most %g on average; largest "
                      "stabilizable scaling of lambda is about %g",
                      j, lambda[j], cap, scale),
          scale);
    }
  }

  double beta0 = opts.beta0;
  if (beta0 <= 0.0) {
    double max_price = 0.0;
    for (const SystemState& s : dist.states) {
      for (double a : s.price) max_price = std::max(max_price, a);
    }
    double r_min = 0.0;
    for (int j = 0; j < m; ++j) {
      for (int i : topo.job(j).serving_set) {
        double r = topo.service_rate(i, j);
        if (r > 0.0 && (r_min == 0.0 || r < r_min)) r_min = r;
      }
    }
    double mu_scale =
        r_min > 0.0 ? 2.0 * power.rho * max_price / r_min : 1.0;
    beta0 = mu_scale / std::max(lambda_max, 1e-12);
  }

  const double rate_tol = opts.tol * std::max(lambda_max, 1e-9);

  SlotSolverEngine engine;
  std::vector<double> mu(m, 0.0);
  std::vector<Allocation> sbar(n_states);
  std::vector<Allocation> cur(n_states);
  double wsum = 0.0;
  long next_restart = 16;
  double d_best = -std::numeric_limits<double>::infinity();
  double last_window_best = d_best;
  bool probed = false;
  int k = 0;

  auto evaluate_sbar = [&](double* primal, std::vector<double>* e_served,
                           double* slack) {
    *primal = 0.0;
    e_served->assign(m, 0.0);
    for (int w = 0; w < n_states; ++w) {
      *primal += dist.probs[w] *
                 convex_cost(dist.states[w], topo, sbar[w], power);
      auto served = serve_all(topo, sbar[w]);
      for (int j = 0; j < m; ++j) (*e_served)[j] += dist.probs[w] * served[j];
    }
    *slack = 0.0;
    for (int j = 0; j < m; ++j) {
      *slack = std::max(*slack, lambda[j] - (*e_served)[j]);
    }
  };

  double primal = 0.0;
  double slack = 0.0;
  std::vector<double> e_served(m, 0.0);

  while (k < opts.max_iter) {
    k += 1;
    double dual = 0.0;
    std::vector<double> e_now(m, 0.0);
    for (int w = 0; w < n_states; ++w) {
      SlotProblem problem;
      problem.state = &dist.states[w];
      problem.topo = &topo;
      problem.power = &power;
      problem.reward_weights = mu;
      problem.cost_scale = 1.0;
      SolveReport rep = engine.solve(problem, w);
      dual += dist.probs[w] *
              (rep.objective + rep.idle_cost + rep.intercept_offset);
      cur[w] = std::move(rep.allocation);
      auto served = serve_all(topo, cur[w]);
      for (int j = 0; j < m; ++j) e_now[j] += dist.probs[w] * served[j];
    }
    for (int j = 0; j < m; ++j) dual += mu[j] * lambda[j];
    d_best = std::max(d_best, dual);

    double beta = beta0 / static_cast<double>(k);
    // 1/k weights alone never wash out the first iterates; restarting the
    // average on a doubling schedule keeps it over the latest half of the run.
    if (k >= next_restart) {
      wsum = 0.0;
      next_restart *= 2;
    }
    for (int w = 0; w < n_states; ++w) {
      if (wsum == 0.0) {
        sbar[w] = cur[w];
      } else {
        double a = wsum / (wsum + beta);
        double b = beta / (wsum + beta);
        for (std::size_t p = 0; p < sbar[w].s.size(); ++p) {
          sbar[w].s[p] = a * sbar[w].s[p] + b * cur[w].s[p];
        }
      }
    }
    wsum += beta;
    for (int j = 0; j < m; ++j) {
      mu[j] = std::max(mu[j] + beta * (lambda[j] - e_now[j]), 0.0);
    }

    evaluate_sbar(&primal, &e_served, &slack);
    double cost_tol = opts.tol * std::max(std::abs(primal), 1.0);
    if (slack <= rate_tol && std::abs(primal - d_best) <= cost_tol) break;

    if (k % 50 == 0) {
      bool stalled = d_best - last_window_best <= cost_tol;
      last_window_best = d_best;
      if (stalled && slack > rate_tol && !probed) {
        probed = true;
        double scale = max_stabilizable_scale(dist, topo, power, lambda);
        if (scale < 1.0 + 1e-2) {
          throw ErgodicInfeasibleError(
              detail::fmt("ergodic program infeasible: dual ascent stalled "
                          "with rate slack %g; largest stabilizable scaling "
                          "of lambda is about %g",
                          slack, scale),
              scale);
        }
      }
    }
  }

  OssiPolicy policy;
  policy.per_state = std::move(sbar);
  for (Allocation& a : policy.per_state) {
    for (double& v : a.s) v = std::max(v, 0.0);
  }
  policy.optimal_cost = primal;
  policy.mu_star = std::move(mu);
  policy.dual_value = d_best;
  policy.expected_service = std::move(e_served);
  policy.service_slack = slack;
  policy.iterations = k;

  double cost_tol = opts.tol * std::max(std::abs(primal), 1.0);
  if (slack > rate_tol || std::abs(primal - d_best) > cost_tol) {
    throw SolverConvergenceError(
        detail::fmt("ossi dual ascent: %d iterations, rate slack %g "
                    "(tol %g), duality gap %g (tol %g)",
                    k, slack, rate_tol, primal - d_best, cost_tol),
        SolveReport{});
  }
  return policy;
}

}  // namespace tf
