#include "troughfill/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "internal_util.hpp"

namespace tf {

SstfState SstfState::initial(std::vector<double> lambda, double beta0) {
  SstfState s;
  s.mu.assign(lambda.size(), 0.0);
  s.lambda = std::move(lambda);
  s.beta0 = beta0;
  s.n = 1;
  return s;
}

double calibrate_beta0(const Topology& topo, const PowerModel& power,
                       double max_price) {
  // Target multiplier scale: marginal energy cost of one extra traffic unit
  // at full load, at the priciest IDC over the slowest service rate.
  double r_min = 0.0;
  double lambda_max = 0.0;
  for (int j = 0; j < topo.job_count(); ++j) {
    const JobClass& job = topo.job(j);
    lambda_max = std::max(lambda_max, job.mean_rate);
    for (int i : job.serving_set) {
      double r = topo.service_rate(i, j);
      if (r > 0.0 && (r_min == 0.0 || r < r_min)) r_min = r;
    }
  }
  if (r_min <= 0.0 || max_price <= 0.0) return 1.0;
  double mu_scale = 2.0 * power.rho * max_price / r_min;
  // One full step (n = 1) covers the multiplier scale when the subgradient
  // sits at its typical magnitude, the mean rate.
  double grad_scale = std::max(lambda_max, 1e-12);
  return mu_scale / grad_scale;
}

Allocation sstf_step(const SystemState& state, const Topology& topo,
                     const PowerModel& power, SstfState& sstf,
                     SlotSolverEngine& engine, int cache_key) {
  const int m = topo.job_count();
  if (static_cast<int>(sstf.mu.size()) != m ||
      static_cast<int>(sstf.lambda.size()) != m) {
    throw ConfigError("sstf state has wrong dimension");
  }
  SlotProblem problem;
  problem.state = &state;
  problem.topo = &topo;
  problem.power = &power;
  problem.reward_weights = sstf.mu;
  problem.cost_scale = 1.0;
  SolveReport rep = engine.solve(problem, cache_key);

  double beta = sstf.beta0 / static_cast<double>(sstf.n);
  for (int j = 0; j < m; ++j) {
    double served = serve_rate(topo, rep.allocation, j);
    sstf.mu[j] = std::max(sstf.mu[j] + beta * (sstf.lambda[j] - served), 0.0);
  }
  sstf.n += 1;
  return std::move(rep.allocation);
}

Allocation qtf_step(const SystemState& state, const Topology& topo,
                    const PowerModel& power, const QueueVector& q,
                    const QtfConfig& cfg, SlotSolverEngine& engine,
                    int cache_key) {
  if (cfg.v <= 0.0) throw ConfigError("qtf needs v > 0");
  if (q.size() != topo.job_count()) {
    throw ConfigError("queue vector has wrong dimension");
  }
  SlotProblem problem;
  problem.state = &state;
  problem.topo = &topo;
  problem.power = &power;
  problem.reward_weights = q.q;
  problem.cost_scale = cfg.v;
  problem.service_caps = q.q;
  return std::move(engine.solve(problem, cache_key).allocation);
}

Allocation bes_step(const SystemState& state, const Topology& topo,
                    const QueueVector& q) {
  const int n = topo.idc_count();
  const int m = topo.job_count();
  Allocation alloc(n, m);
  std::vector<int> local;
  std::vector<double> demand(m, 0.0);
  for (int i = 0; i < n; ++i) {
    local.clear();
    for (int j = 0; j < m; ++j) {
      if (topo.job(j).origin != i || !topo.can_serve(i, j)) continue;
      demand[j] = q[j] / topo.service_rate(i, j);
      if (demand[j] > 0.0) local.push_back(j);
    }
    double avail = std::max(state.residual(i), 0.0);
    // Clear everyone if possible, otherwise split equally, handing surplus
    // from jobs that need less than their share back to the pool.
    while (!local.empty()) {
      double total = 0.0;
      for (int j : local) total += demand[j];
      if (total <= avail) {
        for (int j : local) alloc.at(i, j) = demand[j];
        break;
      }
      double share = avail / static_cast<double>(local.size());
      bool shrunk = false;
      for (auto it = local.begin(); it != local.end();) {
        if (demand[*it] <= share) {
          alloc.at(i, *it) = demand[*it];
          avail -= demand[*it];
          it = local.erase(it);
          shrunk = true;
        } else {
          ++it;
        }
      }
      if (!shrunk) {
        for (int j : local) alloc.at(i, j) = share;
        break;
      }
    }
  }
  return alloc;
}

void StateDistribution::validate(const Topology& topo) const {
  if (states.empty() || states.size() != probs.size()) {
    throw ConfigError("state distribution needs matching states and probs");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("state probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ConfigError(detail::fmt("state probabilities sum to %.17g", sum));
  }
  for (const SystemState& s : states) s.validate(topo);
}

BoundReport drift_bound_constants(const Topology& topo, double v,
                                  double epsilon, double g_e_star_eps) {
  if (v <= 0.0) throw ConfigError("drift bound needs v > 0");
  if (epsilon <= 0.0) throw ConfigError("drift bound needs epsilon > 0");
  BoundReport rep;
  for (int i = 0; i < topo.idc_count(); ++i) {
    double r_i = 0.0;
    for (int j : topo.jobs_at(i)) {
      r_i = std::max(r_i, topo.service_rate(i, j));
    }
    if (r_i <= 0.0) continue;  // serves nothing, drains no queue
    double k = topo.idc(i).k_max;
    rep.b_const += r_i * r_i * k * k;
  }
  for (int j = 0; j < topo.job_count(); ++j) {
    double d = topo.job(j).arrival_bound;
    rep.b_const += d * d;
  }
  rep.epsilon = epsilon;
  rep.v = v;
  rep.g_eps = g_e_star_eps;
  rep.queue_bound = (rep.b_const + v * g_e_star_eps) / epsilon;
  rep.cost_bound = g_e_star_eps + rep.b_const / v;
  return rep;
}

}  // namespace tf
