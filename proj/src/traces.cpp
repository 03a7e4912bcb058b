#include "troughfill/traces.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <string>

#include "internal_util.hpp"

namespace tf {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

Scenario gen_synthetic(const SyntheticConfig& config) {
  require(config.n_idcs > 0 && config.n_jobs > 0 && config.n_states > 0,
          "synthetic config needs positive counts");
  require(config.capacity_lo >= 0 && config.capacity_hi >= config.capacity_lo,
          "synthetic capacity range must be ordered and nonnegative");
  require(config.bandwidth_lo >= 0 &&
              config.bandwidth_hi >= config.bandwidth_lo,
          "synthetic bandwidth range must be ordered and nonnegative");
  require(config.price_lo >= 0 && config.price_hi >= config.price_lo,
          "synthetic price range must be ordered and nonnegative");
  require(config.dsj_lo >= 0 && config.dsj_hi >= config.dsj_lo &&
              config.dsj_hi <= 1.0,
          "synthetic dsj fraction range must sit inside [0, 1]");
  require(config.rate_lo > 0 && config.rate_hi >= config.rate_lo,
          "synthetic rate range must be ordered and positive");
  require(config.load_ratio >= 0, "synthetic load ratio must be >= 0");
  require(config.horizon > 0, "synthetic horizon must be > 0");
  const int n = config.n_idcs;
  const int m = config.n_jobs;

  // Topology draws first, then states, then rates derived from both; the
  // order is part of the determinism contract.
  Rng topo_rng(substream_seed(config.seed, "topology"));
  std::vector<std::vector<int>> serving(m);
  std::vector<int> origin(m);
  std::vector<double> rates(static_cast<std::size_t>(n) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    do {
      serving[j].clear();
      for (int i = 0; i < n; ++i) {
        if (topo_rng.bernoulli(0.5)) serving[j].push_back(i);
      }
    } while (serving[j].empty());
    origin[j] = topo_rng.uniform_int(0, n - 1);
    if (config.force_origin_serving &&
        !std::binary_search(serving[j].begin(), serving[j].end(), origin[j])) {
      serving[j].insert(std::upper_bound(serving[j].begin(), serving[j].end(),
                                         origin[j]),
                        origin[j]);
    }
    for (int i : serving[j]) {
      rates[static_cast<std::size_t>(i) * m + j] =
          topo_rng.uniform(config.rate_lo, config.rate_hi);
    }
  }

  Rng state_rng(substream_seed(config.seed, "states"));
  StateDistribution dist;
  dist.states.reserve(config.n_states);
  double dsj_capacity_mean = 0.0;
  double residual_mean = 0.0;
  for (int w = 0; w < config.n_states; ++w) {
    SystemState s;
    s.active_servers.resize(n);
    s.price.resize(n);
    s.dsj_capacity.resize(n);
    s.bandwidth.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
      s.active_servers[i] =
          std::round(state_rng.uniform(config.capacity_lo, config.capacity_hi));
    }
    for (int i = 0; i < n; ++i) {
      s.price[i] = state_rng.uniform(config.price_lo, config.price_hi);
    }
    for (int i = 0; i < n; ++i) {
      s.dsj_capacity[i] =
          state_rng.uniform(config.dsj_lo, config.dsj_hi) * s.active_servers[i];
      dsj_capacity_mean += s.dsj_capacity[i];
      residual_mean += s.active_servers[i] - s.dsj_capacity[i];
    }
    for (int o = 0; o < n; ++o) {
      for (int d = 0; d < n; ++d) {
        if (o == d) continue;
        s.bandwidth[static_cast<std::size_t>(o) * n + d] =
            state_rng.uniform(config.bandwidth_lo, config.bandwidth_hi);
      }
    }
    dist.states.push_back(std::move(s));
  }
  dsj_capacity_mean /= static_cast<double>(config.n_states);
  residual_mean /= static_cast<double>(config.n_states);
  dist.probs.assign(config.n_states, 1.0 / config.n_states);

  // Mean rates: every job gets an equal slice of the target DTJ capacity
  // demand, converted to traffic by its average service rate.
  double dtj_capacity_demand = config.load_ratio * dsj_capacity_mean;
  if (dtj_capacity_demand > residual_mean + 1.0) {
    log::warn(detail::fmt(
        "synthetic scenario is overloaded: DTJ capacity demand %.3g vs "
        "expected residual %.3g",
        dtj_capacity_demand, residual_mean));
  }
  std::vector<JobClass> jobs(m);
  for (int j = 0; j < m; ++j) {
    double r_mean = 0.0;
    for (int i : serving[j]) {
      r_mean += rates[static_cast<std::size_t>(i) * m + j];
    }
    r_mean /= static_cast<double>(serving[j].size());
    double lambda = dtj_capacity_demand / m * r_mean;
    jobs[j] = JobClass{j, origin[j], serving[j], lambda, 2.0 * lambda};
  }

  std::vector<IdcSpec> idcs(n);
  for (int i = 0; i < n; ++i) idcs[i] = IdcSpec{i, config.capacity_hi};

  Scenario sc;
  sc.topo = Topology(std::move(idcs), std::move(jobs), std::move(rates));
  sc.power = PowerModel{config.rho, config.nu};
  sc.dist = std::move(dist);
  sc.horizon = config.horizon;
  sc.seed = config.seed;
  return sc;
}

PacketSeries ingest_packet_log(const std::string& path,
                               const PacketLogConfig& config) {
  require(config.slot_length > 0, "packet log slot length must be > 0");
  require(config.size_threshold > 0, "packet size threshold must be > 0");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open packet log: " + path);

  std::vector<std::pair<double, double>> packets;  // (timestamp s, Mbit)
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("timestamp", 0) == 0) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    double ts = std::strtod(p, &end);
    bool ok = end != p && *end == ',';
    long long bytes = 0;
    if (ok) {
      const char* q = end + 1;
      bytes = std::strtoll(q, &end, 10);
      ok = end != q && *end == '\0' && bytes >= 0 && std::isfinite(ts);
    }
    if (!ok) {
      throw ConfigError(
          detail::fmt("%s line %ld: expected `timestamp_s,size_bytes`",
                      path.c_str(), line_no));
    }
    packets.emplace_back(ts, static_cast<double>(bytes) * 8e-6);
  }
  if (packets.empty()) throw ConfigError("packet log is empty: " + path);

  double t_min = packets.front().first;
  double t_max = t_min;
  for (const auto& [ts, mbit] : packets) {
    t_min = std::min(t_min, ts);
    t_max = std::max(t_max, ts);
  }
  long n_slots =
      static_cast<long>(std::floor((t_max - t_min) / config.slot_length)) + 1;
  PacketSeries series;
  series.dsj_demand.assign(n_slots, 0.0);
  series.dtj_arrivals.assign(n_slots, 0.0);
  for (const auto& [ts, mbit] : packets) {
    long slot = static_cast<long>(std::floor((ts - t_min) / config.slot_length));
    slot = std::clamp(slot, 0L, n_slots - 1);
    if (mbit <= config.size_threshold) {
      series.dsj_demand[slot] += mbit * config.dsj_capacity_per_mbit;
    } else {
      series.dtj_arrivals[slot] += mbit;
    }
  }
  return series;
}

PriceSeries load_prices(const std::string& path,
                        const std::vector<std::string>& region_by_idc,
                        long n_slots, double slot_length) {
  require(n_slots > 0 && slot_length > 0, "price series needs slots > 0");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open price file: " + path);

  std::map<std::string, std::map<long, double>> table;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("region", 0) == 0) continue;
    auto c1 = line.find(',');
    auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    bool ok = c2 != std::string::npos;
    std::string region;
    long hour = 0;
    double price = 0.0;
    if (ok) {
      region = line.substr(0, c1);
      char* end = nullptr;
      const char* hp = line.c_str() + c1 + 1;
      hour = std::strtol(hp, &end, 10);
      ok = end == line.c_str() + c2 && end != hp && !region.empty();
      const char* pp = line.c_str() + c2 + 1;
      price = std::strtod(pp, &end);
      ok = ok && *end == '\0' && end != pp && price >= 0.0 &&
           std::isfinite(price) && hour >= 0;
    }
    if (!ok) {
      throw ConfigError(detail::fmt(
          "%s line %ld: expected `region,hour,price`", path.c_str(), line_no));
    }
    table[region][hour] = price;
  }

  PriceSeries series;
  series.alpha.resize(region_by_idc.size());
  for (std::size_t i = 0; i < region_by_idc.size(); ++i) {
    auto it = table.find(region_by_idc[i]);
    if (it == table.end()) {
      throw ConfigError("price file has no region '" + region_by_idc[i] + "'");
    }
    series.alpha[i].resize(n_slots);
    for (long t = 0; t < n_slots; ++t) {
      long hour = static_cast<long>(t * slot_length / 3600.0 + 1e-9);
      auto hit = it->second.find(hour);
      if (hit == it->second.end()) {
        throw ConfigError(detail::fmt("region %s is missing hour %ld",
                                      region_by_idc[i].c_str(), hour));
      }
      series.alpha[i][t] = hit->second;
    }
  }
  return series;
}

Scenario build_trace_scenario(const PacketSeries& packets,
                              const PriceSeries& prices,
                              const TraceScenarioConfig& config) {
  const int n = config.n_idcs;
  const int m = config.n_jobs;
  require(n > 0 && m > 0, "trace scenario needs positive counts");
  require(static_cast<int>(prices.alpha.size()) == n,
          "price series has wrong IDC count");
  std::vector<int> dtj_blocks = config.dtj_blocks;
  std::vector<int> dsj_blocks = config.dsj_blocks;
  if (dtj_blocks.empty()) {
    dtj_blocks.resize(m);
    std::iota(dtj_blocks.begin(), dtj_blocks.end(), 0);
  }
  if (dsj_blocks.empty()) {
    dsj_blocks.resize(n);
    std::iota(dsj_blocks.begin(), dsj_blocks.end(), m);
  }
  require(static_cast<int>(dtj_blocks.size()) == m,
          "need one DTJ block per job");
  require(static_cast<int>(dsj_blocks.size()) == n,
          "need one DSJ block per IDC");
  int max_block = 0;
  for (int b : dtj_blocks) max_block = std::max(max_block, b);
  for (int b : dsj_blocks) max_block = std::max(max_block, b);
  long block_slots = config.block_slots;
  if (block_slots <= 0) block_slots = packets.slots() / (m + n);
  require(block_slots > 0, "packet log too short for the requested blocks");
  require(static_cast<long>(max_block + 1) * block_slots <= packets.slots(),
          detail::fmt("packet log has %ld slots, blocks need %ld",
                      packets.slots(),
                      static_cast<long>(max_block + 1) * block_slots));
  require(prices.slots() >= block_slots,
          detail::fmt("price series has %ld slots, horizon needs %ld",
                      prices.slots(), block_slots));

  Rng rng(substream_seed(config.seed, "trace-topology"));
  std::vector<double> capacity(n);
  for (int i = 0; i < n; ++i) {
    capacity[i] = std::round(rng.uniform(config.capacity_lo, config.capacity_hi));
  }
  std::vector<double> bandwidth(static_cast<std::size_t>(n) * n, 0.0);
  for (int o = 0; o < n; ++o) {
    for (int d = 0; d < n; ++d) {
      if (o == d) continue;
      bandwidth[static_cast<std::size_t>(o) * n + d] =
          rng.uniform(config.bandwidth_lo, config.bandwidth_hi);
    }
  }
  std::vector<std::vector<int>> serving(m);
  std::vector<int> origin(m);
  std::vector<double> rates(static_cast<std::size_t>(n) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    origin[j] = j % n;
    for (int i = 0; i < n; ++i) {
      if (i == origin[j] || rng.bernoulli(config.serving_p)) {
        serving[j].push_back(i);
      }
    }
    for (int i : serving[j]) {
      rates[static_cast<std::size_t>(i) * m + j] =
          rng.uniform(config.rate_lo, config.rate_hi);
    }
  }

  std::vector<std::vector<double>> arrivals(
      block_slots, std::vector<double>(m, 0.0));
  for (int j = 0; j < m; ++j) {
    long base = static_cast<long>(dtj_blocks[j]) * block_slots;
    for (long t = 0; t < block_slots; ++t) {
      arrivals[t][j] = packets.dtj_arrivals[base + t];
    }
  }

  long clipped = 0;
  std::vector<SystemState> states(block_slots);
  for (long t = 0; t < block_slots; ++t) {
    SystemState& s = states[t];
    s.active_servers = capacity;
    s.bandwidth = bandwidth;
    s.price.resize(n);
    s.dsj_capacity.resize(n);
    for (int i = 0; i < n; ++i) {
      s.price[i] = prices.alpha[i][t];
      double demand =
          packets.dsj_demand[static_cast<long>(dsj_blocks[i]) * block_slots + t];
      if (demand > capacity[i]) {
        clipped += 1;
        demand = capacity[i];
      }
      s.dsj_capacity[i] = demand;
    }
  }
  if (clipped > 0) {
    log::warn(detail::fmt(
        "trace scenario: DSJ demand exceeded capacity on %ld IDC-slots; "
        "clipped (DSJs keep priority, no DTJ capacity remains there)",
        clipped));
  }

  std::vector<JobClass> jobs(m);
  for (int j = 0; j < m; ++j) {
    double mean = 0.0;
    double peak = 0.0;
    for (long t = 0; t < block_slots; ++t) {
      mean += arrivals[t][j];
      peak = std::max(peak, arrivals[t][j]);
    }
    mean /= static_cast<double>(block_slots);
    jobs[j] = JobClass{j, origin[j], serving[j], mean, peak};
  }
  std::vector<IdcSpec> idcs(n);
  for (int i = 0; i < n; ++i) idcs[i] = IdcSpec{i, capacity[i]};

  Scenario sc;
  sc.topo = Topology(std::move(idcs), std::move(jobs), std::move(rates));
  sc.power = PowerModel{config.rho, config.nu};
  sc.state_series = std::move(states);
  sc.arrival_series = std::move(arrivals);
  sc.horizon = block_slots;
  sc.seed = config.seed;
  return sc;
}

}  // namespace tf
