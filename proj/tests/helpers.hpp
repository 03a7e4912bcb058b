#pragma once

// Small builders shared across the test files.  Instances own their pieces;
// SlotProblem holds pointers, so call problem() on a bundle that stays alive.

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "troughfill/common.hpp"
#include "troughfill/model.hpp"
#include "troughfill/solver.hpp"

namespace tf::test {

inline Topology single_idc_topo(std::vector<double> rates, double k_max = 10.0,
                                double lambda = 1.0, double bound = 10.0) {
  const int m = static_cast<int>(rates.size());
  std::vector<IdcSpec> idcs{{0, k_max}};
  std::vector<JobClass> jobs(m);
  for (int j = 0; j < m; ++j) jobs[j] = {j, 0, {0}, lambda, bound};
  return Topology(std::move(idcs), std::move(jobs), std::move(rates));
}

inline SystemState make_state(std::vector<double> servers,
                              std::vector<double> price,
                              std::vector<double> dsj,
                              std::vector<double> bandwidth = {}) {
  SystemState st;
  const int n = static_cast<int>(servers.size());
  st.active_servers = std::move(servers);
  st.price = std::move(price);
  st.dsj_capacity = std::move(dsj);
  if (bandwidth.empty()) bandwidth.assign(static_cast<std::size_t>(n) * n, 0.0);
  st.bandwidth = std::move(bandwidth);
  return st;
}

struct InstanceBundle {
  Topology topo;
  SystemState state;
  PowerModel power;
  std::vector<double> weights;
  std::optional<std::vector<double>> caps;
  double cost_scale = 1.0;

  InstanceBundle() = default;
  InstanceBundle(const InstanceBundle&) = delete;
  InstanceBundle& operator=(const InstanceBundle&) = delete;
  InstanceBundle(InstanceBundle&&) = default;
  InstanceBundle& operator=(InstanceBundle&&) = default;

  SlotProblem problem() const {
    SlotProblem p;
    p.state = &state;
    p.topo = &topo;
    p.power = &power;
    p.reward_weights = weights;
    p.cost_scale = cost_scale;
    p.service_caps = caps;
    return p;
  }
};

// Random instance with <= 2 IDCs and <= 2 jobs; half the draws carry
// per-job service caps.  Matches the regime of the grid-oracle checks.
inline InstanceBundle random_small_instance(Rng& rng) {
  InstanceBundle b;
  const int n = 1 + static_cast<int>(rng.uniform01() * 2);
  const int m = 1 + static_cast<int>(rng.uniform01() * 2);
  std::vector<IdcSpec> idcs(n);
  for (int i = 0; i < n; ++i) idcs[i] = {i, 10.0};
  std::vector<JobClass> jobs(m);
  std::vector<double> rates(static_cast<std::size_t>(n) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    jobs[j].id = j;
    jobs[j].origin = static_cast<int>(rng.uniform01() * n);
    for (int i = 0; i < n; ++i) {
      if (i == jobs[j].origin || rng.uniform01() < 0.7) {
        jobs[j].serving_set.push_back(i);
        rates[static_cast<std::size_t>(i) * m + j] = 0.5 + rng.uniform01() * 2;
      }
    }
    jobs[j].mean_rate = 1.0;
    jobs[j].arrival_bound = 10.0;
  }
  b.topo = Topology(std::move(idcs), std::move(jobs), std::move(rates));
  b.state.active_servers.resize(n);
  b.state.price.resize(n);
  b.state.dsj_capacity.resize(n);
  b.state.bandwidth.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    b.state.active_servers[i] = 2 + rng.uniform01() * 6;
    b.state.price[i] = 0.2 + rng.uniform01() * 2;
    b.state.dsj_capacity[i] = rng.uniform01() * b.state.active_servers[i];
  }
  for (int o = 0; o < n; ++o) {
    for (int d = 0; d < n; ++d) {
      if (o != d) {
        b.state.bandwidth[static_cast<std::size_t>(o) * n + d] =
            rng.uniform01() < 0.8 ? 1 + rng.uniform01() * 4 : 0.0;
      }
    }
  }
  b.cost_scale = 0.2 + rng.uniform01() * 3;
  b.weights.resize(m);
  for (int j = 0; j < m; ++j) b.weights[j] = rng.uniform01() * 6;
  if (rng.uniform01() < 0.5) {
    std::vector<double> caps(m);
    for (int j = 0; j < m; ++j) caps[j] = rng.uniform01() * 8;
    b.caps = std::move(caps);
  }
  return b;
}

// Single-IDC instance in the closed-form regime: weights are the queue
// lengths, no service caps, distinct Q_j r_j products so the argmax is
// unique.
inline InstanceBundle random_single_idc_instance(Rng& rng,
                                                 std::vector<double>* queues,
                                                 std::vector<double>* rates_out) {
  InstanceBundle b;
  const int m = 1 + static_cast<int>(rng.uniform01() * 3);
  std::vector<double> rates(m);
  for (int j = 0; j < m; ++j) rates[j] = 0.5 + rng.uniform01() * 2.5;
  const double k = 4.0 + rng.uniform01() * 8.0;
  b.topo = single_idc_topo(rates, k);
  b.state = make_state({k}, {0.2 + rng.uniform01() * 2.8},
                       {rng.uniform01() * 0.6 * k});
  b.cost_scale = 0.5 + rng.uniform01() * 4.5;
  b.weights.resize(m);
  for (int j = 0; j < m; ++j) {
    b.weights[j] = rng.uniform01() < 0.2 ? 0.0 : rng.uniform01() * 6.0;
  }
  // Nudge apart any near-tied Q_j r_j so the served argmax is unique.
  for (int j = 0; j < m; ++j) {
    for (int l = 0; l < j; ++l) {
      if (std::abs(b.weights[j] * rates[j] - b.weights[l] * rates[l]) < 1e-3) {
        b.weights[j] += 0.1;
      }
    }
  }
  if (queues) *queues = b.weights;
  if (rates_out) *rates_out = rates;
  return b;
}

}  // namespace tf::test
