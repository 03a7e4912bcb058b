#include "troughfill/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "internal_util.hpp"

namespace tf {

void Scenario::validate() const {
  power.validate();
  bool erg = dist.has_value();
  if (erg == !state_series.empty()) {
    throw ConfigError("scenario needs exactly one state source");
  }
  if (horizon <= 0) throw ConfigError("scenario horizon must be > 0");
  const int m = topo.job_count();
  if (erg) {
    dist->validate(topo);
  } else {
    if (static_cast<long>(state_series.size()) < horizon) {
      throw ConfigError(detail::fmt(
          "state series has %zu slots, horizon is %ld", state_series.size(),
          horizon));
    }
    for (const SystemState& s : state_series) s.validate(topo);
  }
  if (!arrival_series.empty()) {
    if (static_cast<long>(arrival_series.size()) < horizon) {
      throw ConfigError("arrival series shorter than horizon");
    }
    for (const auto& row : arrival_series) {
      if (static_cast<int>(row.size()) != m) {
        throw ConfigError("arrival series row has wrong job count");
      }
      for (int j = 0; j < m; ++j) {
        if (!(row[j] >= 0.0) || !std::isfinite(row[j])) {
          throw ConfigError("arrivals must be finite and >= 0");
        }
        if (row[j] > topo.job(j).arrival_bound * (1.0 + 1e-9) + 1e-12) {
          throw ConfigError(detail::fmt(
              "recorded arrival %g exceeds job %d bound %g", row[j], j,
              topo.job(j).arrival_bound));
        }
      }
    }
  } else {
    // Generated arrivals are uniform on [0, 2*lambda_j]; the declared bound
    // must cover that support or the drift constants would be wrong.
    for (int j = 0; j < m; ++j) {
      if (topo.job(j).arrival_bound + 1e-9 < 2.0 * topo.job(j).mean_rate) {
        throw ConfigError(detail::fmt(
            "job %d: arrival bound %g below generator support 2*lambda = %g",
            j, topo.job(j).arrival_bound, 2.0 * topo.job(j).mean_rate));
      }
    }
  }
}

int Scenario::state_index_at(long t) const {
  if (!ergodic()) return static_cast<int>(t);
  double u = counter_uniform01(substream_seed(seed, "state"),
                               static_cast<std::uint64_t>(t));
  return sample_state_index(*dist, u);
}

const SystemState& Scenario::state_at(long t) const {
  if (ergodic()) return dist->states[state_index_at(t)];
  return state_series[t];
}

std::vector<double> Scenario::arrivals_at(long t) const {
  if (!arrival_series.empty()) return arrival_series[t];
  const int m = topo.job_count();
  std::vector<double> a(m);
  for (int j = 0; j < m; ++j) {
    double u = counter_uniform01(
        substream_seed(seed, "arrivals", static_cast<std::uint64_t>(j)),
        static_cast<std::uint64_t>(t));
    a[j] = 2.0 * topo.job(j).mean_rate * u;
  }
  return a;
}

int sample_state_index(const StateDistribution& dist, double u01) {
  double c = 0.0;
  const int n = static_cast<int>(dist.probs.size());
  for (int i = 0; i < n; ++i) {
    c += dist.probs[i];
    if (u01 < c) return i;
  }
  return n - 1;
}

const SystemState& sample_state(const StateDistribution& dist, Rng& rng) {
  return dist.states[sample_state_index(dist, rng.uniform01())];
}

namespace {

void finalize(const Scenario& sc, MetricsSeries& ms) {
  const long t_count = ms.slots();
  const int m = sc.topo.job_count();
  ms.avg_queue.assign(m, 0.0);
  ms.avg_served.assign(m, 0.0);
  ms.avg_arrival.assign(m, 0.0);
  ms.delay.assign(m, 0.0);
  for (long t = 0; t < t_count; ++t) {
    ms.avg_cost += ms.cost_total[t];
    ms.avg_energy += ms.energy[t];
    ms.avg_shift += ms.shift[t];
    for (int j = 0; j < m; ++j) {
      ms.avg_queue[j] += ms.queue[t][j];
      ms.avg_served[j] += ms.served[t][j];
      ms.avg_arrival[j] += ms.arrivals[t][j];
    }
  }
  const double inv = 1.0 / static_cast<double>(t_count);
  ms.avg_cost *= inv;
  ms.avg_energy *= inv;
  ms.avg_shift *= inv;
  double q_sum = 0.0;
  double a_sum = 0.0;
  for (int j = 0; j < m; ++j) {
    ms.avg_queue[j] *= inv;
    ms.avg_served[j] *= inv;
    ms.avg_arrival[j] *= inv;
    ms.delay[j] =
        ms.avg_arrival[j] > 0.0 ? ms.avg_queue[j] / ms.avg_arrival[j] : 0.0;
    q_sum += ms.avg_queue[j];
    a_sum += ms.avg_arrival[j];
  }
  ms.avg_queue_total = q_sum;
  ms.overall_delay = a_sum > 0.0 ? q_sum / a_sum : 0.0;

  // Least-squares slope of the total queue over the last half of the run.
  long t0 = t_count / 2;
  long len = t_count - t0;
  if (len >= 2) {
    double xm = 0.0;
    double ym = 0.0;
    for (long t = t0; t < t_count; ++t) {
      double y = std::accumulate(ms.queue[t].begin(), ms.queue[t].end(), 0.0);
      xm += static_cast<double>(t - t0);
      ym += y;
    }
    xm /= static_cast<double>(len);
    ym /= static_cast<double>(len);
    double sxy = 0.0;
    double sxx = 0.0;
    for (long t = t0; t < t_count; ++t) {
      double y = std::accumulate(ms.queue[t].begin(), ms.queue[t].end(), 0.0);
      double dx = static_cast<double>(t - t0) - xm;
      sxy += dx * (y - ym);
      sxx += dx * dx;
    }
    ms.drift_slope = sxx > 0.0 ? sxy / sxx : 0.0;
  }
  ms.unstable = ms.drift_slope > 0.01 * a_sum;

  // Exact replay: every recorded queue row must equal queue_step applied to
  // the previous row.  Same inputs, same operations, so equality is exact.
  ms.replay_ok = true;
  for (long t = 0; t + 1 < t_count && ms.replay_ok; ++t) {
    QueueVector qt(m);
    qt.q = ms.queue[t];
    QueueVector next = queue_step(qt, ms.served[t], ms.arrivals[t]);
    for (int j = 0; j < m; ++j) {
      if (next[j] != ms.queue[t + 1][j]) ms.replay_ok = false;
    }
  }
}

}  // namespace

MetricsSeries run(const Scenario& scenario, Controller& controller) {
  scenario.validate();
  const long t_count = scenario.horizon;
  const int n = scenario.topo.idc_count();
  const int m = scenario.topo.job_count();

  MetricsSeries ms;
  ms.cost_total.reserve(t_count);
  ms.energy.reserve(t_count);
  ms.shift.reserve(t_count);
  ms.shifted_volume.reserve(t_count);
  ms.queue.reserve(t_count);
  ms.served.reserve(t_count);
  ms.arrivals.reserve(t_count);

  QueueVector q(m);
  double arr_cum = 0.0;
  double drain_cum = 0.0;
  for (long t = 0; t < t_count; ++t) {
    int idx = scenario.state_index_at(t);
    const SystemState& state = scenario.state_at(t);
    Allocation alloc =
        controller.step(state, q, scenario.ergodic() ? idx : -1);
    try {
      alloc.validate(scenario.topo, state);
    } catch (const FeasibilityError& e) {
      throw FeasibilityError(
          detail::fmt("slot %ld: controller %s returned an infeasible "
                      "allocation",
                      t, controller.name().c_str()),
          e.violations());
    }
    CostBreakdown cost = slot_cost(state, scenario.topo, alloc, scenario.power);
    std::vector<double> served = serve_rates(scenario.topo, alloc);
    std::vector<double> arrivals = scenario.arrivals_at(t);

    double moved = 0.0;
    for (int o = 0; o < n; ++o) {
      for (int d = 0; d < n; ++d) {
        if (o != d) moved += alloc.shifted_volume(scenario.topo, state, o, d);
      }
    }

    ms.cost_total.push_back(cost.grand_total);
    ms.energy.push_back(cost.energy_total);
    ms.shift.push_back(cost.shift_total);
    ms.shifted_volume.push_back(moved);
    ms.queue.push_back(q.q);
    ms.served.push_back(served);
    ms.arrivals.push_back(arrivals);

    for (int j = 0; j < m; ++j) {
      arr_cum += arrivals[j];
      drain_cum += std::min(q[j], served[j]);
    }
    q = queue_step(q, served, arrivals);
  }

  double q_end = std::accumulate(q.q.begin(), q.q.end(), 0.0);
  ms.conservation_gap = std::abs(arr_cum - drain_cum - q_end);
  finalize(scenario, ms);
  return ms;
}

std::vector<CompareRow> compare(
    const Scenario& scenario,
    const std::vector<std::unique_ptr<Controller>>& controllers,
    std::vector<MetricsSeries>* series_out) {
  std::vector<CompareRow> rows;
  for (const auto& ctl : controllers) {
    CompareRow row;
    row.name = ctl->name();
    MetricsSeries ms;
    try {
      ms = run(scenario, *ctl);
      row.avg_cost = ms.avg_cost;
      row.overall_delay = ms.overall_delay;
      row.avg_queue_total = ms.avg_queue_total;
      row.unstable = ms.unstable;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
    if (series_out) series_out->push_back(std::move(ms));
  }
  return rows;
}

// --------------------------------------------------------------------------
// Controller adapters.
// --------------------------------------------------------------------------

QtfController::QtfController(const Topology& topo, const PowerModel& power,
                             QtfConfig cfg, SolverOptions solver)
    : topo_(&topo), power_(power), cfg_(cfg), engine_(solver) {
  if (cfg_.v <= 0.0) throw ConfigError("qtf needs v > 0");
}

std::string QtfController::name() const {
  return detail::fmt("qtf_v%.10g", cfg_.v);
}

Allocation QtfController::step(const SystemState& state, const QueueVector& q,
                               int state_key) {
  return qtf_step(state, *topo_, power_, q, cfg_, engine_, state_key);
}

SstfController::SstfController(const Topology& topo, const PowerModel& power,
                               SstfState init, SolverOptions solver)
    : topo_(&topo), power_(power), sstf_(std::move(init)), engine_(solver) {}

std::string SstfController::name() const { return "sstf"; }

Allocation SstfController::step(const SystemState& state,
                                const QueueVector& /*q*/, int state_key) {
  return sstf_step(state, *topo_, power_, sstf_, engine_, state_key);
}

BesController::BesController(const Topology& topo, const PowerModel& /*power*/)
    : topo_(&topo) {}

std::string BesController::name() const { return "bes"; }

Allocation BesController::step(const SystemState& state, const QueueVector& q,
                               int /*state_key*/) {
  return bes_step(state, *topo_, q);
}

OssiController::OssiController(OssiPolicy policy)
    : policy_(std::move(policy)) {}

std::string OssiController::name() const { return "ossi"; }

Allocation OssiController::step(const SystemState& /*state*/,
                                const QueueVector& /*q*/, int state_key) {
  if (state_key < 0 ||
      state_key >= static_cast<int>(policy_.per_state.size())) {
    throw SolverError("ossi controller needs an ergodic state index");
  }
  return policy_.per_state[state_key];
}

}  // namespace tf
