#include "troughfill/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>

#include "internal_util.hpp"

namespace tf {

using detail::fmt;

namespace log {

namespace {
Level parse_env_level() {
  const char* env = std::getenv("TROUGHFILL_LOG");
  if (env == nullptr) return Level::kWarn;
  std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "info") return Level::kInfo;
  if (v == "warn") return Level::kWarn;
  if (v == "error") return Level::kError;
  return Level::kWarn;
}
}  // namespace

Level threshold() {
  static const Level level = parse_env_level();
  return level;
}

void write(Level level, const std::string& msg) {
  if (level < threshold()) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

}  // namespace log

namespace {

void require_finite_nonneg(const std::vector<double>& v, const char* what,
                           std::vector<std::string>* out) {
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || v[k] < 0.0) {
      out->push_back(fmt("%s[%zu] = %g is not finite and nonnegative", what, k,
                         v[k]));
    }
  }
}

}  // namespace

void PowerModel::validate() const {
  if (!(rho > 0.0) || rho > 1.0) {
    throw std::domain_error(fmt("power model rho = %g outside (0, 1]", rho));
  }
  if (!(nu >= 1.0) || !std::isfinite(nu)) {
    throw std::domain_error(fmt("power model nu = %g must be >= 1", nu));
  }
}

ShiftCostModel::ShiftCostModel(std::vector<ShiftCostSegment> segments)
    : segments_(std::move(segments)) {
  if (segments_.empty()) {
    throw std::domain_error("shift cost model needs at least one segment");
  }
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    if (!std::isfinite(segments_[k].slope) ||
        !std::isfinite(segments_[k].intercept) || segments_[k].slope < 0.0) {
      throw std::domain_error("shift cost segment is not finite or has a "
                              "negative slope");
    }
    if (k > 0 && segments_[k].slope <= segments_[k - 1].slope) {
      throw std::domain_error("shift cost slopes must be strictly increasing");
    }
    if (segments_[k].intercept > segments_.front().intercept + 1e-12) {
      throw std::domain_error(
          "shift cost value at zero utilization must come from the first "
          "segment (its intercept must be the largest)");
    }
  }
}

ShiftCostModel ShiftCostModel::default_model() {
  const double slopes[] = {1.0, 3.0, 10.0, 70.0, 500.0, 5000.0};
  const double kinks[] = {1.0 / 3.0, 2.0 / 3.0, 9.0 / 10.0, 1.0, 11.0 / 10.0};
  std::vector<ShiftCostSegment> segs;
  segs.push_back({slopes[0], 0.0});
  for (int k = 0; k < 5; ++k) {
    // Consecutive segments meet at the kink: b' = b + (a - a') * u.
    double b = segs.back().intercept +
               (slopes[k] - slopes[k + 1]) * kinks[k];
    segs.push_back({slopes[k + 1], b});
  }
  return ShiftCostModel(std::move(segs));
}

double ShiftCostModel::value(double utilization) const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& seg : segments_) {
    best = std::max(best, seg.slope * utilization + seg.intercept);
  }
  return best;
}

double ShiftCostModel::min_active_slope(double utilization) const {
  double best = value(utilization);
  for (const auto& seg : segments_) {
    if (seg.slope * utilization + seg.intercept >= best - 1e-12 * (1.0 + std::abs(best))) {
      return seg.slope;  // segments are sorted by slope
    }
  }
  return segments_.front().slope;
}

double ShiftCostModel::max_active_slope(double utilization) const {
  double best = value(utilization);
  for (auto it = segments_.rbegin(); it != segments_.rend(); ++it) {
    if (it->slope * utilization + it->intercept >= best - 1e-12 * (1.0 + std::abs(best))) {
      return it->slope;
    }
  }
  return segments_.back().slope;
}

Topology::Topology(std::vector<IdcSpec> idcs, std::vector<JobClass> jobs,
                   std::vector<double> service_rates, ShiftCostModel link_cost)
    : n_(static_cast<int>(idcs.size())),
      m_(static_cast<int>(jobs.size())),
      idcs_(std::move(idcs)),
      jobs_(std::move(jobs)),
      service_rates_(std::move(service_rates)),
      link_cost_(std::move(link_cost)) {
  if (service_rates_.size() != static_cast<std::size_t>(n_) * m_) {
    throw std::invalid_argument("service rate matrix has the wrong shape");
  }
  for (int i = 0; i < n_; ++i) {
    if (!(idcs_[i].k_max > 0.0) || !std::isfinite(idcs_[i].k_max)) {
      throw std::domain_error(fmt("IDC %d k_max = %g must be positive", i,
                                  idcs_[i].k_max));
    }
  }
  std::vector<std::vector<bool>> servable(n_, std::vector<bool>(m_, false));
  for (int j = 0; j < m_; ++j) {
    const JobClass& job = jobs_[j];
    if (job.serving_set.empty()) {
      throw std::domain_error(fmt("job %d has an empty serving set", j));
    }
    if (job.origin < 0 || job.origin >= n_) {
      throw std::domain_error(fmt("job %d origin %d out of range", j,
                                  job.origin));
    }
    if (!(job.mean_rate >= 0.0) || job.mean_rate > job.arrival_bound + 1e-12) {
      throw std::domain_error(
          fmt("job %d needs 0 <= mean_rate <= arrival_bound, got %g / %g", j,
              job.mean_rate, job.arrival_bound));
    }
    for (int i : job.serving_set) {
      if (i < 0 || i >= n_) {
        throw std::domain_error(fmt("job %d serving set entry %d out of range",
                                    j, i));
      }
      if (!(service_rates_[i * m_ + j] > 0.0)) {
        throw std::domain_error(
            fmt("service rate r(%d,%d) must be positive inside the serving set",
                i, j));
      }
      servable[i][j] = true;
    }
  }
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < m_; ++j) {
      if (!servable[i][j] && service_rates_[i * m_ + j] != 0.0) {
        throw std::domain_error(
            fmt("service rate r(%d,%d) set outside the serving set", i, j));
      }
    }
  }

  jobs_at_.assign(n_, {});
  shifted_jobs_.assign(static_cast<std::size_t>(n_) * n_, {});
  for (int j = 0; j < m_; ++j) {
    for (int i = 0; i < n_; ++i) {
      if (!servable[i][j]) continue;
      jobs_at_[i].push_back(j);
      int o = jobs_[j].origin;
      if (i != o) shifted_jobs_[o * n_ + i].push_back(j);
    }
  }
}

std::vector<double> Topology::mean_rates() const {
  std::vector<double> out(m_);
  for (int j = 0; j < m_; ++j) out[j] = jobs_[j].mean_rate;
  return out;
}

void SystemState::validate(const Topology& topo) const {
  int n = topo.idc_count();
  std::vector<std::string> bad;
  if (static_cast<int>(active_servers.size()) != n ||
      static_cast<int>(price.size()) != n ||
      static_cast<int>(dsj_capacity.size()) != n ||
      static_cast<int>(bandwidth.size()) != n * n) {
    throw FeasibilityError("system state has the wrong shape");
  }
  require_finite_nonneg(active_servers, "active_servers", &bad);
  require_finite_nonneg(price, "price", &bad);
  require_finite_nonneg(dsj_capacity, "dsj_capacity", &bad);
  require_finite_nonneg(bandwidth, "bandwidth", &bad);
  for (int i = 0; i < n; ++i) {
    if (active_servers[i] > topo.idc(i).k_max + kFeasTol) {
      bad.push_back(fmt("active_servers[%d] = %g exceeds k_max = %g", i,
                        active_servers[i], topo.idc(i).k_max));
    }
    if (dsj_capacity[i] > active_servers[i] + kFeasTol) {
      bad.push_back(fmt("dsj_capacity[%d] = %g exceeds active servers %g", i,
                        dsj_capacity[i], active_servers[i]));
    }
  }
  if (!bad.empty()) throw FeasibilityError("invalid system state", bad);
}

double Allocation::shifted_volume(const Topology& topo,
                                  const SystemState& /*state*/, int o,
                                  int d) const {
  double vol = 0.0;
  for (int j : topo.shifted_jobs(o, d)) {
    vol += topo.service_rate(d, j) * at(d, j);
  }
  return vol;
}

void Allocation::validate(const Topology& topo, const SystemState& state,
                          double tol) const {
  if (n != topo.idc_count() || m != topo.job_count()) {
    throw FeasibilityError("allocation has the wrong shape");
  }
  std::vector<std::string> bad;
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      double v = at(i, j);
      if (!std::isfinite(v)) {
        bad.push_back(fmt("S(%d,%d) = %g is not finite", i, j, v));
        continue;
      }
      if (v < -tol) bad.push_back(fmt("S(%d,%d) = %g is negative", i, j, v));
      if (!topo.can_serve(i, j) && v != 0.0) {
        bad.push_back(fmt("S(%d,%d) = %g outside the serving set", i, j, v));
      }
      total += v;
    }
    if (total > state.residual(i) + tol) {
      bad.push_back(fmt(
          "IDC %d DTJ capacity %g exceeds residual %g = K - S_0", i, total,
          state.residual(i)));
    }
  }
  int nn = topo.idc_count();
  for (int o = 0; o < nn; ++o) {
    for (int d = 0; d < nn; ++d) {
      if (o == d || topo.shifted_jobs(o, d).empty()) continue;
      double vol = shifted_volume(topo, state, o, d);
      if (vol > state.bw(o, d, nn) + tol) {
        bad.push_back(fmt("link %d->%d shifted traffic %g exceeds bandwidth %g",
                          o, d, vol, state.bw(o, d, nn)));
      }
    }
  }
  if (!bad.empty()) throw FeasibilityError("infeasible allocation", bad);
}

double server_power(double speed, const PowerModel& model) {
  model.validate();
  if (!(speed >= 0.0) || speed > 1.0 + 1e-12) {
    throw std::domain_error(fmt("server speed %g outside [0, 1]", speed));
  }
  speed = std::min(speed, 1.0);
  return model.rho * std::pow(speed, model.nu) + 1.0 - model.rho;
}

double idc_power(double active_servers, double total_demand,
                 const PowerModel& model) {
  model.validate();
  if (!(active_servers >= 0.0) || !(total_demand >= 0.0)) {
    throw std::domain_error("idc_power needs nonnegative servers and demand");
  }
  if (active_servers == 0.0) {
    if (total_demand > 1e-6) {
      throw FeasibilityError(
          fmt("demand %g on an IDC with no active servers", total_demand));
    }
    return 0.0;
  }
  if (total_demand > active_servers + 1e-6) {
    throw FeasibilityError(fmt("demand %g exceeds active servers %g",
                               total_demand, active_servers));
  }
  total_demand = std::min(total_demand, active_servers);
  return (1.0 - model.rho) * active_servers +
         model.rho * std::pow(total_demand, model.nu) /
             std::pow(active_servers, model.nu - 1.0);
}

double shift_cost(double utilization, const ShiftCostModel& model) {
  if (!(utilization >= 0.0)) {
    throw std::domain_error(fmt("utilization %g must be nonnegative",
                                utilization));
  }
  return model.value(utilization);
}

CostBreakdown slot_cost(const SystemState& state, const Topology& topo,
                        const Allocation& alloc, const PowerModel& model) {
  alloc.validate(topo, state);
  int n = topo.idc_count();
  CostBreakdown out;
  out.energy_per_idc.assign(n, 0.0);
  out.shift_per_link.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double dtj = 0.0;
    for (int j : topo.jobs_at(i)) dtj += alloc.at(i, j);
    double total = state.dsj_capacity[i] + dtj;
    out.energy_per_idc[i] =
        state.price[i] * idc_power(state.active_servers[i], total, model);
    out.energy_total += out.energy_per_idc[i];
  }
  for (int o = 0; o < n; ++o) {
    for (int d = 0; d < n; ++d) {
      if (o == d || topo.shifted_jobs(o, d).empty()) continue;
      double vol = alloc.shifted_volume(topo, state, o, d);
      if (vol <= 0.0) continue;
      double bw = state.bw(o, d, n);
      if (bw <= 0.0) {
        throw FeasibilityError(
            fmt("link %d->%d carries traffic %g with zero bandwidth", o, d,
                vol));
      }
      double cost = shift_cost(vol / bw, topo.link_cost(o, d));
      out.shift_per_link[o * n + d] = cost;
      out.shift_total += cost;
    }
  }
  out.grand_total = out.energy_total + out.shift_total;
  return out;
}

double serve_rate(const Topology& topo, const Allocation& alloc, int j) {
  double rate = 0.0;
  for (int i : topo.job(j).serving_set) {
    rate += topo.service_rate(i, j) * alloc.at(i, j);
  }
  return rate;
}

std::vector<double> serve_rates(const Topology& topo, const Allocation& alloc) {
  std::vector<double> out(topo.job_count());
  for (int j = 0; j < topo.job_count(); ++j) out[j] = serve_rate(topo, alloc, j);
  return out;
}

QueueVector queue_step(const QueueVector& q, const std::vector<double>& service,
                       const std::vector<double>& arrivals) {
  if (service.size() != q.q.size() || arrivals.size() != q.q.size()) {
    throw std::invalid_argument("queue_step input sizes disagree");
  }
  QueueVector next(q.size());
  for (int j = 0; j < q.size(); ++j) {
    if (!(q[j] >= 0.0) || !(service[j] >= 0.0) || !(arrivals[j] >= 0.0)) {
      throw std::domain_error(fmt(
          "queue_step needs nonnegative inputs at job %d (Q=%g, S=%g, A=%g)",
          j, q[j], service[j], arrivals[j]));
    }
    next[j] = std::max(q[j] - service[j], 0.0) + arrivals[j];
  }
  return next;
}

}  // namespace tf
