#include "troughfill/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "internal_util.hpp"

namespace tf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct SweepPoint {
  int index = 0;
  std::string label;
  std::vector<std::pair<std::string, double>> assign;
};

std::vector<SweepPoint> expand_sweep(const RunConfig& config) {
  std::vector<SweepPoint> points;
  if (config.sweep.empty()) {
    points.push_back({0, "baseline", {}});
    return points;
  }
  long total = 1;
  for (const SweepAxis& ax : config.sweep) {
    total *= static_cast<long>(ax.values.size());
  }
  for (long k = 0; k < total; ++k) {
    SweepPoint p;
    p.index = static_cast<int>(k);
    long rem = k;
    std::vector<double> vals(config.sweep.size());
    for (std::size_t a = config.sweep.size(); a-- > 0;) {
      const SweepAxis& ax = config.sweep[a];
      vals[a] = ax.values[rem % ax.values.size()];
      rem /= static_cast<long>(ax.values.size());
    }
    for (std::size_t a = 0; a < config.sweep.size(); ++a) {
      p.assign.emplace_back(config.sweep[a].param, vals[a]);
      if (!p.label.empty()) p.label += "_";
      p.label += config.sweep[a].param + "=" + detail::fmt("%.10g", vals[a]);
    }
    points.push_back(std::move(p));
  }
  return points;
}

double max_price(const Scenario& sc) {
  double mp = 0.0;
  auto scan = [&](const SystemState& s) {
    for (double a : s.price) mp = std::max(mp, a);
  };
  if (sc.ergodic()) {
    for (const SystemState& s : sc.dist->states) scan(s);
  } else {
    for (const SystemState& s : sc.state_series) scan(s);
  }
  return mp;
}

void write_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

void append_g10(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  s += buf;
}

std::string metrics_csv(const MetricsSeries& ms, int m) {
  std::string s;
  s.reserve(static_cast<std::size_t>(ms.slots() + 1) * (40 + 18 * 2 * m));
  s += "t,cost_total,energy,shift";
  for (int j = 1; j <= m; ++j) s += detail::fmt(",Q_%d", j);
  for (int j = 1; j <= m; ++j) s += detail::fmt(",served_%d", j);
  s += "\n";
  for (long t = 0; t < ms.slots(); ++t) {
    s += std::to_string(t + 1);
    s += ',';
    append_g10(s, ms.cost_total[t]);
    s += ',';
    append_g10(s, ms.energy[t]);
    s += ',';
    append_g10(s, ms.shift[t]);
    for (int j = 0; j < m; ++j) {
      s += ',';
      append_g10(s, ms.queue[t][j]);
    }
    for (int j = 0; j < m; ++j) {
      s += ',';
      append_g10(s, ms.served[t][j]);
    }
    s += "\n";
  }
  return s;
}

json bounds_json(const BoundReport& b) {
  json j;
  j["b_const"] = b.b_const;
  j["epsilon"] = b.epsilon;
  j["v"] = b.v;
  j["g_eps"] = b.g_eps;
  j["queue_bound"] = b.queue_bound;
  j["cost_bound"] = b.cost_bound;
  return j;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

// One (sweep point, controller spec) run: construct, simulate, persist.
struct PointRunner {
  const RunConfig& cfg;  // sweep point already applied
  const SweepPoint& point;
  const Scenario& sc;
  std::map<double, OssiPolicy>& policies;  // by tol; shared within the point
  std::map<double, std::string>& policy_errors;

  const OssiPolicy* policy_for(double tol, std::string& error) {
    auto hit = policies.find(tol);
    if (hit != policies.end()) return &hit->second;
    auto miss = policy_errors.find(tol);
    if (miss != policy_errors.end()) {
      error = miss->second;
      return nullptr;
    }
    try {
      OssiOptions opts;
      opts.tol = tol;
      auto [it, ignored] = policies.emplace(
          tol, ossi_solve(*sc.dist, sc.topo, sc.power, sc.topo.mean_rates(),
                          opts));
      (void)ignored;
      return &it->second;
    } catch (const std::exception& e) {
      policy_errors[tol] = e.what();
      error = e.what();
      return nullptr;
    }
  }

  RunRecord run_one(const ControllerSpec& spec,
                    const std::optional<double>& g_eps, double eps) {
    RunRecord rec;
    rec.sweep_index = point.index;
    rec.sweep_label = point.label;
    rec.controller = spec.label();
    rec.dir = cfg.out + "/" + detail::fmt("p%d_", point.index) + point.label +
              "__" + spec.label();
    rec.row.name = spec.label();

    json cinfo;
    cinfo["policy"] = spec.policy;
    cinfo["label"] = spec.label();
    MetricsSeries ms;
    bool have_metrics = false;
    try {
      std::unique_ptr<Controller> ctl;
      if (spec.policy == "qtf") {
        cinfo["v"] = spec.v;
        ctl = std::make_unique<QtfController>(sc.topo, sc.power,
                                              QtfConfig{spec.v});
      } else if (spec.policy == "sstf") {
        std::vector<double> lambda =
            spec.lambda ? *spec.lambda : sc.topo.mean_rates();
        if (lambda.size() != static_cast<std::size_t>(sc.topo.job_count())) {
          throw ConfigError(detail::fmt(
              "sstf lambda has %zu entries, scenario has %d jobs",
              lambda.size(), sc.topo.job_count()));
        }
        double beta0 = spec.beta0;
        if (beta0 <= 0) {
          beta0 = calibrate_beta0(sc.topo, sc.power, max_price(sc));
        }
        cinfo["beta0_used"] = beta0;
        cinfo["lambda"] = lambda;
        ctl = std::make_unique<SstfController>(
            sc.topo, sc.power, SstfState::initial(std::move(lambda), beta0));
      } else if (spec.policy == "bes") {
        ctl = std::make_unique<BesController>(sc.topo, sc.power);
      } else {
        cinfo["tol"] = spec.tol;
        std::string error;
        const OssiPolicy* policy = policy_for(spec.tol, error);
        if (!policy) {
          throw SolverError("offline policy unavailable: " + error);
        }
        cinfo["ossi_dual_value"] = policy->dual_value;
        cinfo["ossi_optimal_cost"] = policy->optimal_cost;
        cinfo["ossi_iterations"] = policy->iterations;
        ctl = std::make_unique<OssiController>(*policy);
      }

      ms = run(sc, *ctl);
      have_metrics = true;
      rec.row.avg_cost = ms.avg_cost;
      rec.row.overall_delay = ms.overall_delay;
      rec.row.avg_queue_total = ms.avg_queue_total;
      rec.row.unstable = ms.unstable;
      if (spec.policy == "sstf") {
        cinfo["final_mu"] =
            static_cast<const SstfController&>(*ctl).state().mu;
      }
    } catch (const std::exception& e) {
      rec.row.error = e.what();
    }
    if (spec.policy == "qtf" && g_eps) {
      rec.bounds = drift_bound_constants(sc.topo, spec.v, eps, *g_eps);
    }

    fs::create_directories(rec.dir);
    if (have_metrics) {
      write_atomic(rec.dir + "/metrics.csv", metrics_csv(ms, sc.topo.job_count()));
    }
    json summary;
    summary["version"] = kVersion;
    summary["config_hash"] = config_hash(cfg);
    summary["config"] = json::parse(serialize_config(cfg));
    summary["sweep"] = {{"index", point.index}, {"label", point.label}};
    summary["controller"] = std::move(cinfo);
    summary["lambda"] = sc.topo.mean_rates();
    summary["horizon"] = sc.horizon;
    summary["seed"] = sc.seed;
    if (have_metrics) {
      json agg;
      agg["avg_cost"] = ms.avg_cost;
      agg["avg_energy"] = ms.avg_energy;
      agg["avg_shift"] = ms.avg_shift;
      agg["avg_queue_total"] = ms.avg_queue_total;
      agg["avg_queue"] = ms.avg_queue;
      agg["avg_served"] = ms.avg_served;
      agg["avg_arrival"] = ms.avg_arrival;
      agg["delay"] = ms.delay;
      agg["overall_delay"] = ms.overall_delay;
      agg["drift_slope"] = ms.drift_slope;
      agg["unstable"] = ms.unstable;
      agg["conservation_gap"] = ms.conservation_gap;
      agg["replay_ok"] = ms.replay_ok;
      agg["slots"] = ms.slots();
      summary["aggregates"] = std::move(agg);
    }
    if (rec.bounds) summary["bounds"] = bounds_json(*rec.bounds);
    if (!rec.row.error.empty()) summary["error"] = rec.row.error;
    write_atomic(rec.dir + "/summary.json", summary.dump(2) + "\n");
    return rec;
  }
};

std::vector<RunRecord> run_point(const RunConfig& base,
                                 const SweepPoint& point) {
  RunConfig cfg = base;
  for (const auto& [param, value] : point.assign) {
    cfg = apply_sweep_value(cfg, param, value);
  }
  Scenario sc = build_scenario(cfg);
  sc.validate();

  std::map<double, OssiPolicy> policies;
  std::map<double, std::string> policy_errors;
  PointRunner runner{cfg, point, sc, policies, policy_errors};

  std::optional<double> g_eps;
  double eps = 0.0;
  if (cfg.bounds_epsilon_frac > 0) {
    double lmin = std::numeric_limits<double>::infinity();
    for (double l : sc.topo.mean_rates()) {
      if (l > 0) lmin = std::min(lmin, l);
    }
    if (!std::isfinite(lmin)) {
      log::warn("drift bounds skipped: all mean rates are zero");
    } else {
      eps = cfg.bounds_epsilon_frac * lmin;
      std::vector<double> lambda_eps = sc.topo.mean_rates();
      for (double& l : lambda_eps) l += eps;
      try {
        OssiPolicy at_eps =
            ossi_solve(*sc.dist, sc.topo, sc.power, lambda_eps, {});
        g_eps = at_eps.optimal_cost;
      } catch (const std::exception& e) {
        log::warn(detail::fmt("drift bounds skipped: %s", e.what()));
      }
    }
  }

  std::vector<RunRecord> records;
  for (const ControllerSpec& spec : cfg.controllers) {
    records.push_back(runner.run_one(spec, g_eps, eps));
  }
  return records;
}

}  // namespace

std::vector<RunRecord> run_experiments(const RunConfig& config) {
  std::vector<SweepPoint> points = expand_sweep(config);
  fs::create_directories(config.out);

  std::vector<std::vector<RunRecord>> results(points.size());
  std::vector<std::exception_ptr> errors(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t k = next.fetch_add(1);
      if (k >= points.size()) return;
      try {
        results[k] = run_point(config, points[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };

  std::size_t jobs = config.jobs > 0
                         ? static_cast<std::size_t>(config.jobs)
                         : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, points.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (std::size_t i = 0; i < jobs; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  for (std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<RunRecord> flat;
  for (std::vector<RunRecord>& r : results) {
    for (RunRecord& rec : r) flat.push_back(std::move(rec));
  }
  write_comparison_csv(config.out + "/comparison.csv", flat);
  return flat;
}

void write_comparison_csv(const std::string& path,
                          const std::vector<RunRecord>& records) {
  std::string s =
      "sweep_index,sweep_label,controller,avg_cost,overall_delay,"
      "avg_queue_total,unstable,queue_bound,cost_bound,error\n";
  for (const RunRecord& r : records) {
    s += std::to_string(r.sweep_index);
    s += ',';
    s += csv_quote(r.sweep_label);
    s += ',';
    s += r.controller;
    s += ',';
    append_g10(s, r.row.avg_cost);
    s += ',';
    append_g10(s, r.row.overall_delay);
    s += ',';
    append_g10(s, r.row.avg_queue_total);
    s += ',';
    s += r.row.unstable ? '1' : '0';
    s += ',';
    if (r.bounds) append_g10(s, r.bounds->queue_bound);
    s += ',';
    if (r.bounds) append_g10(s, r.bounds->cost_bound);
    s += ',';
    s += csv_quote(r.row.error);
    s += '\n';
  }
  write_atomic(path, s);
}

void windowed_rates(const std::string& run_dir,
                    const std::vector<long>& windows) {
  std::ifstream summary_in(run_dir + "/summary.json");
  if (!summary_in) {
    throw ConfigError("no summary.json in " + run_dir + "; run first");
  }
  json summary;
  try {
    summary = json::parse(summary_in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("summary.json is not valid JSON: ") +
                      e.what());
  }
  if (!summary.contains("lambda") || !summary.at("lambda").is_array()) {
    throw ConfigError("summary.json has no lambda array");
  }
  std::vector<double> lambda =
      summary.at("lambda").get<std::vector<double>>();
  const int m = static_cast<int>(lambda.size());

  std::ifstream metrics_in(run_dir + "/metrics.csv");
  if (!metrics_in) throw ConfigError("no metrics.csv in " + run_dir);
  std::string line;
  if (!std::getline(metrics_in, line)) throw ConfigError("metrics.csv is empty");
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) head.push_back(tok);
  }
  const std::size_t served0 = 4 + static_cast<std::size_t>(m);
  if (head.size() != 4 + 2 * static_cast<std::size_t>(m) ||
      head[served0] != "served_1") {
    throw ConfigError("metrics.csv schema does not match summary.json");
  }
  std::vector<std::vector<double>> served;
  while (std::getline(metrics_in, line)) {
    if (line.empty()) continue;
    std::vector<double> row(m);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < head.size(); ++f) {
      std::size_t next = line.find(',', pos);
      if (f >= served0) {
        row[f - served0] = std::strtod(line.c_str() + pos, nullptr);
      }
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    served.push_back(std::move(row));
  }
  const long t_total = static_cast<long>(served.size());
  if (t_total == 0) throw ConfigError("metrics.csv has no rows");

  for (long w : windows) {
    if (w < 1 || w > t_total) {
      throw ConfigError(detail::fmt(
          "window %ld does not fit the %ld-slot horizon", w, t_total));
    }
    long n_win = t_total / w;
    std::string s = "window,t_start";
    for (int j = 1; j <= m; ++j) s += detail::fmt(",rate_%d", j);
    s += "\n";
    for (long k = 0; k < n_win; ++k) {
      s += std::to_string(k + 1);
      s += ',';
      s += std::to_string(k * w + 1);
      for (int j = 0; j < m; ++j) {
        double sum = 0.0;
        for (long t = k * w; t < (k + 1) * w; ++t) sum += served[t][j];
        double rate =
            lambda[j] > 0 ? sum / (static_cast<double>(w) * lambda[j]) : 0.0;
        s += ',';
        append_g10(s, rate);
      }
      s += '\n';
    }
    write_atomic(run_dir + detail::fmt("/rates_w%ld.csv", w), s);
  }
}

int cmd_run(const RunConfig& config) {
  try {
    std::vector<RunRecord> records = run_experiments(config);
    bool failed = false;
    for (const RunRecord& r : records) {
      if (r.row.error.empty()) {
        std::printf("wrote %s\n", r.dir.c_str());
      } else {
        failed = true;
        std::fprintf(stderr, "%s: %s\n", r.dir.c_str(), r.row.error.c_str());
      }
    }
    return failed ? 2 : 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

int cmd_compare(const RunConfig& config) {
  try {
    std::vector<RunRecord> records = run_experiments(config);
    std::printf("%-5s %-24s %-14s %14s %12s %12s %s\n", "point", "sweep",
                "controller", "avg_cost", "delay", "queue_total", "flags");
    bool failed = false;
    for (const RunRecord& r : records) {
      if (!r.row.error.empty()) {
        failed = true;
        std::printf("%-5d %-24s %-14s failed: %s\n", r.sweep_index,
                    r.sweep_label.c_str(), r.controller.c_str(),
                    r.row.error.c_str());
        continue;
      }
      std::string flags = r.row.unstable ? "unstable" : "";
      if (r.bounds) {
        if (!flags.empty()) flags += " ";
        flags += detail::fmt("Q<=%.4g cost<=%.4g", r.bounds->queue_bound,
                             r.bounds->cost_bound);
      }
      std::printf("%-5d %-24s %-14s %14.6g %12.6g %12.6g %s\n", r.sweep_index,
                  r.sweep_label.c_str(), r.controller.c_str(), r.row.avg_cost,
                  r.row.overall_delay, r.row.avg_queue_total, flags.c_str());
    }
    std::printf("comparison table: %s/comparison.csv\n", config.out.c_str());
    return failed ? 2 : 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

int cmd_rates(const std::string& run_dir, const std::vector<long>& windows) {
  try {
    windowed_rates(run_dir, windows);
    for (long w : windows) {
      std::printf("wrote %s/rates_w%ld.csv\n", run_dir.c_str(), w);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace tf
