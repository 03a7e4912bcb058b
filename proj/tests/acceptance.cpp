// Acceptance gate: twelve checks combining exact solver oracles with the
// qualitative behavior the controllers are supposed to reproduce.  Each
// criterion prints one PASS/FAIL line; the exit code is 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "troughfill/common.hpp"
#include "troughfill/config.hpp"
#include "troughfill/controllers.hpp"
#include "troughfill/runner.hpp"
#include "troughfill/sim.hpp"
#include "troughfill/solver.hpp"
#include "troughfill/traces.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace tf;
using tf::test::GridOracleResult;
using tf::test::InstanceBundle;

namespace {

// Pinned tolerances, one per criterion that needs one.
constexpr double kOracleObjTol = 1e-3;      // 1: |objective - grid oracle|
constexpr double kOracleBudgetSec = 10.0;   // 1: total runtime budget
constexpr double kClosedFormTol = 1e-6;     // 2: elementwise allocation gap
constexpr double kKktTol = 1e-5;            // 3: KKT residual ceiling
constexpr double kSstfGapFrac = 0.05;       // 4: |SSTF cost - g*| / g*
constexpr double kAdjacentSlack = 0.02;     // 5: allowed single violation size
constexpr double kSmallVDelayMax = 2.0;     // 6: delay ceiling at V = 1, slots
constexpr double kEpsFrac = 0.05;           // 7: epsilon = 5% of min lambda
constexpr double kGStarGapFrac = 0.005;     // 8: |g(0.001 min l) - g*| / g*
constexpr double kDelayFactor = 5.0;        // 9: "much larger" delay multiple
constexpr double kZeroServeTol = 1e-9;      // 10: a slot counts as zero service
constexpr double kConservationTol = 1e-6;   // 12: conservation gap ceiling

int g_failed = 0;

void report(int idx, const char* name, bool pass, const std::string& detail) {
  std::printf("%s %2d %s (%s)\n", pass ? "PASS" : "FAIL", idx, name,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) g_failed += 1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

double max_price_of(const Scenario& sc) {
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

// Everything criteria 3 and 12 audit after the fact.
struct SolvedInstance {
  InstanceBundle bundle;
  Allocation allocation;
};

struct RunAudit {
  std::string name;
  bool replay_ok = true;
  double conservation_gap = 0.0;
};

RunAudit audit_of(const std::string& name, const MetricsSeries& ms) {
  return {name, ms.replay_ok, ms.conservation_gap};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  std::vector<SolvedInstance> solved;
  std::vector<RunAudit> audits;

  // ---- 1: solver vs grid oracle on small instances -------------------------
  {
    bool pass = true;
    std::string detail;
    try {
      auto t0 = std::chrono::steady_clock::now();
      Rng rng(substream_seed(2024, "acceptance-small", 0));
      double worst = 0.0;
      for (int k = 0; k < 100; ++k) {
        InstanceBundle b = tf::test::random_small_instance(rng);
        SolveReport rep = solve_slot(b.problem());
        GridOracleResult oracle = tf::test::grid_oracle(b.problem());
        double gap = std::abs(rep.objective - oracle.objective) /
                     std::max(1.0, std::abs(oracle.objective));
        worst = std::max(worst, gap);
        solved.push_back({std::move(b), rep.allocation});
      }
      double secs = seconds_since(t0);
      pass = worst <= kOracleObjTol && secs < kOracleBudgetSec;
      detail = fmt("100 instances, worst objective gap %.2e, %.1f s", worst,
                   secs);
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(1, "solver matches the grid oracle", pass, detail);
  }

  // ---- 2: solver vs single-IDC closed form ---------------------------------
  {
    bool pass = true;
    std::string detail;
    try {
      Rng rng(substream_seed(2024, "acceptance-sqtf", 0));
      double worst = 0.0;
      long served_cases = 0;
      bool argmax_ok = true;
      for (int k = 0; k < 1000; ++k) {
        std::vector<double> queues, rates;
        InstanceBundle b =
            tf::test::random_single_idc_instance(rng, &queues, &rates);
        SolveReport rep = solve_slot(b.problem());
        QueueVector qv(static_cast<int>(queues.size()));
        for (std::size_t j = 0; j < queues.size(); ++j) {
          qv[static_cast<int>(j)] = queues[j];
        }
        Allocation closed =
            sqtf_closed_form(b.state, qv, rates, b.cost_scale, b.power);
        const int m = static_cast<int>(rates.size());
        int top = 0;
        for (int j = 1; j < m; ++j) {
          if (queues[j] * rates[j] > queues[top] * rates[top]) top = j;
        }
        double off_top = 0.0;
        for (int j = 0; j < m; ++j) {
          worst = std::max(
              worst, std::abs(rep.allocation.at(0, j) - closed.at(0, j)));
          if (j != top) off_top += rep.allocation.at(0, j);
        }
        if (closed.at(0, top) > 0.0) {
          served_cases += 1;
          argmax_ok = argmax_ok && off_top <= kClosedFormTol;
        }
        solved.push_back({std::move(b), rep.allocation});
      }
      pass = worst <= kClosedFormTol && argmax_ok && served_cases > 100;
      detail = fmt("1000 instances, worst gap %.2e, %ld served argmax-only=%s",
                   worst, served_cases, argmax_ok ? "yes" : "no");
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(2, "single-IDC closed form agrees", pass, detail);
  }

  // ---- 3: KKT certification of every allocation so far ---------------------
  {
    bool pass = true;
    std::string detail;
    try {
      double worst = 0.0;
      for (const SolvedInstance& s : solved) {
        KktReport kkt = check_kkt(s.bundle.problem(), s.allocation);
        worst = std::max(worst, kkt.worst());
      }
      pass = !solved.empty() && worst <= kKktTol;
      detail = fmt("%zu allocations, worst residual %.2e", solved.size(),
                   worst);
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(3, "KKT certificates hold", pass, detail);
  }

  // ---- shared ergodic artifacts for 4-8 and 10 -----------------------------
  // Built in dependency order (simulated runs before the offline solves) so a
  // failure only takes down the criteria that actually need the missing piece.
  std::optional<Scenario> ergodic;
  std::optional<MetricsSeries> sstf_run;
  const std::vector<double> kVs = {1.0, 10.0, 100.0, 1000.0};
  std::vector<MetricsSeries> qtf_runs;
  std::optional<OssiPolicy> star;
  const std::vector<double> kEpsFracs = {0.001, 0.01, 0.05, 0.1};  // ascending
  std::vector<double> g_eps(kEpsFracs.size(), 0.0);
  bool g_eps_ok = false;
  std::string ergodic_error = "ergodic artifacts unavailable";

  try {
    SyntheticConfig def;  // 5 IDCs, 10 jobs, 100 states, 100k slots, ratio 1
    Scenario sc = gen_synthetic(def);
    sc.validate();
    std::vector<double> lambda = sc.topo.mean_rates();

    double beta0 = calibrate_beta0(sc.topo, sc.power, max_price_of(sc));
    SstfController sstf(sc.topo, sc.power, SstfState::initial(lambda, beta0));
    auto t0 = std::chrono::steady_clock::now();
    sstf_run = run(sc, sstf);
    audits.push_back(audit_of("ergodic sstf", *sstf_run));
    std::fprintf(stderr, "[acceptance] sstf avg cost %.6g (%.0f s)\n",
                 sstf_run->avg_cost, seconds_since(t0));

    for (double v : kVs) {
      QtfController qtf(sc.topo, sc.power, QtfConfig{v});
      t0 = std::chrono::steady_clock::now();
      qtf_runs.push_back(run(sc, qtf));
      audits.push_back(audit_of(fmt("ergodic qtf v=%g", v), qtf_runs.back()));
      std::fprintf(stderr,
                   "[acceptance] qtf v=%g cost %.6g delay %.3g (%.0f s)\n", v,
                   qtf_runs.back().avg_cost, qtf_runs.back().overall_delay,
                   seconds_since(t0));
    }

    t0 = std::chrono::steady_clock::now();
    star = ossi_solve(*sc.dist, sc.topo, sc.power, lambda, {});
    std::fprintf(stderr, "[acceptance] ossi g*=%.6g dual=%.6g (%.0f s)\n",
                 star->optimal_cost, star->dual_value, seconds_since(t0));

    double min_lambda = std::numeric_limits<double>::infinity();
    for (double l : lambda) {
      if (l > 0) min_lambda = std::min(min_lambda, l);
    }
    for (std::size_t k = 0; k < kEpsFracs.size(); ++k) {
      std::vector<double> inflated = lambda;
      for (double& l : inflated) l += kEpsFracs[k] * min_lambda;
      g_eps[k] =
          ossi_solve(*sc.dist, sc.topo, sc.power, inflated, {}).optimal_cost;
    }
    g_eps_ok = true;
    ergodic = std::move(sc);
  } catch (const std::exception& e) {
    ergodic_error = e.what();
  }

  // ---- 4: SSTF long-run cost close to the offline optimum ------------------
  {
    bool pass = star.has_value() && sstf_run.has_value();
    std::string detail = ergodic_error;
    if (pass) {
      double gap = std::abs(sstf_run->avg_cost - star->optimal_cost) /
                   star->optimal_cost;
      pass = gap <= kSstfGapFrac;
      detail = fmt("sstf %.6g vs g* %.6g, gap %.2f%%", sstf_run->avg_cost,
                   star->optimal_cost, 100.0 * gap);
    }
    report(4, "SSTF cost within 5% of the offline optimum", pass, detail);
  }

  // ---- 5: QTF cost/delay tradeoff is monotone in V -------------------------
  {
    bool pass = qtf_runs.size() == kVs.size();
    std::string detail = ergodic_error;
    if (pass) {
      int violations = 0;
      double worst = 0.0;
      for (std::size_t k = 0; k + 1 < qtf_runs.size(); ++k) {
        double c0 = qtf_runs[k].avg_cost, c1 = qtf_runs[k + 1].avg_cost;
        double d0 = qtf_runs[k].overall_delay,
               d1 = qtf_runs[k + 1].overall_delay;
        if (c1 > c0) {
          violations += 1;
          worst = std::max(worst, (c1 - c0) / c0);
        }
        if (d1 < d0) {
          violations += 1;
          worst = std::max(worst, (d0 - d1) / std::max(d0, 1e-12));
        }
      }
      pass = violations == 0 || (violations == 1 && worst <= kAdjacentSlack);
      detail = fmt("cost %.6g/%.6g/%.6g/%.6g delay %.3g/%.3g/%.3g/%.3g",
                   qtf_runs[0].avg_cost, qtf_runs[1].avg_cost,
                   qtf_runs[2].avg_cost, qtf_runs[3].avg_cost,
                   qtf_runs[0].overall_delay, qtf_runs[1].overall_delay,
                   qtf_runs[2].overall_delay, qtf_runs[3].overall_delay);
    }
    report(5, "QTF tradeoff monotone in V", pass, detail);
  }

  // ---- 6: near-unit delay at V = 1 -----------------------------------------
  {
    bool pass = !qtf_runs.empty();
    std::string detail = ergodic_error;
    if (pass) {
      pass = qtf_runs[0].overall_delay <= kSmallVDelayMax;
      detail = fmt("overall delay %.3g slots", qtf_runs[0].overall_delay);
    }
    report(6, "QTF V=1 delay at most 2 slots", pass, detail);
  }

  // ---- 7: drift queue and cost bounds --------------------------------------
  {
    bool pass = ergodic.has_value() && star.has_value() && g_eps_ok &&
                qtf_runs.size() == kVs.size();
    std::string detail = ergodic_error;
    if (pass) {
      double min_lambda = std::numeric_limits<double>::infinity();
      for (double l : ergodic->topo.mean_rates()) {
        if (l > 0) min_lambda = std::min(min_lambda, l);
      }
      double eps = kEpsFrac * min_lambda;
      double g_at_eps = g_eps[2];  // the 0.05 entry of kEpsFracs
      std::ostringstream ss;
      for (std::size_t k : {std::size_t{0}, std::size_t{3}}) {  // V=1, V=1000
        BoundReport b =
            drift_bound_constants(ergodic->topo, kVs[k], eps, g_at_eps);
        double cost_bound = star->optimal_cost + b.b_const / kVs[k];
        bool q_ok = qtf_runs[k].avg_queue_total <= b.queue_bound;
        bool c_ok = qtf_runs[k].avg_cost <= cost_bound;
        pass = pass && q_ok && c_ok;
        ss << fmt("V=%g Q %.3g<=%.3g cost %.6g<=%.6g ", kVs[k],
                  qtf_runs[k].avg_queue_total, b.queue_bound,
                  qtf_runs[k].avg_cost, cost_bound);
      }
      detail = ss.str();
    }
    report(7, "drift bounds hold", pass, detail);
  }

  // ---- 8: perturbed optimum is monotone and continuous at zero -------------
  {
    bool pass = star.has_value() && g_eps_ok;
    std::string detail = ergodic_error;
    if (pass) {
      bool monotone = true;
      for (std::size_t k = 0; k + 1 < g_eps.size(); ++k) {
        monotone = monotone && g_eps[k] <= g_eps[k + 1] + 1e-9 * g_eps[k + 1];
      }
      double gap = std::abs(g_eps[0] - star->optimal_cost) / star->optimal_cost;
      pass = monotone && gap <= kGStarGapFrac;
      detail = fmt("g(eps)=%.6g/%.6g/%.6g/%.6g, gap to g* %.3f%%", g_eps[0],
                   g_eps[1], g_eps[2], g_eps[3], 100.0 * gap);
    }
    report(8, "perturbed optimum nondecreasing, 0.5% limit gap", pass, detail);
  }

  // ---- 9: baseline ordering across trace thresholds ------------------------
  {
    bool pass = true;
    std::string detail;
    try {
      const std::vector<double> thresholds = {10.0, 50.0, 100.0, 150.0};
      std::ostringstream ss;
      for (double th : thresholds) {
        RunConfig rc;
        rc.scenario_type = "trace";
        rc.trace_files.packet_log =
            std::string(TF_SOURCE_DIR) + "/data/packets.csv";
        rc.trace_files.price_file =
            std::string(TF_SOURCE_DIR) + "/data/prices.csv";
        rc.trace_files.regions = {"r0", "r1", "r2", "r3", "r4"};
        rc.trace.log.size_threshold = th;
        rc.trace.capacity_lo = 30.0;
        rc.trace.capacity_hi = 40.0;
        rc.trace.bandwidth_lo = 150.0;
        rc.trace.bandwidth_hi = 225.0;
        rc.trace.seed = 7;
        Scenario sc = build_scenario(rc);
        sc.validate();

        BesController bes(sc.topo, sc.power);
        MetricsSeries mb = run(sc, bes);
        audits.push_back(audit_of(fmt("trace th=%g bes", th), mb));

        QtfController qtf(sc.topo, sc.power, QtfConfig{1000.0});
        MetricsSeries mq = run(sc, qtf);
        audits.push_back(audit_of(fmt("trace th=%g qtf", th), mq));

        double beta0 = calibrate_beta0(sc.topo, sc.power, max_price_of(sc));
        SstfController sstf(sc.topo, sc.power,
                            SstfState::initial(sc.topo.mean_rates(), beta0));
        MetricsSeries ms = run(sc, sstf);
        audits.push_back(audit_of(fmt("trace th=%g sstf", th), ms));

        bool ok = mb.avg_cost >= mq.avg_cost &&
                  mb.overall_delay >= mq.overall_delay &&
                  ms.avg_cost <= mq.avg_cost &&
                  ms.overall_delay >= kDelayFactor * mq.overall_delay;
        pass = pass && ok;
        ss << fmt("th=%g cost b/q/s %.5g/%.5g/%.5g delay %.3g/%.3g/%.3g%s ",
                  th, mb.avg_cost, mq.avg_cost, ms.avg_cost, mb.overall_delay,
                  mq.overall_delay, ms.overall_delay, ok ? "" : " BAD");
      }
      detail = ss.str();
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(9, "trace baselines: BES dominated, SSTF cheap but slow", pass,
           detail);
  }

  // ---- 10: rate granularity signature --------------------------------------
  {
    bool pass = ergodic.has_value() && sstf_run.has_value() &&
                qtf_runs.size() == kVs.size();
    std::string detail = ergodic_error;
    if (pass) {
      const MetricsSeries& q = qtf_runs.back();  // V = 1000
      const MetricsSeries& s = *sstf_run;
      auto zero_fraction = [](const MetricsSeries& ms) {
        long zero = 0, total = 0;
        for (const std::vector<double>& row : ms.served) {
          for (double v : row) {
            total += 1;
            zero += v <= kZeroServeTol;
          }
        }
        return static_cast<double>(zero) / static_cast<double>(total);
      };
      auto window_cov = [&](const MetricsSeries& ms) {
        const long w = 1000;
        const long n_win = ms.slots() / w;
        const std::vector<double> lambda = ergodic->topo.mean_rates();
        double cov_sum = 0.0;
        int cov_jobs = 0;
        for (std::size_t j = 0; j < lambda.size(); ++j) {
          if (!(lambda[j] > 0)) continue;
          std::vector<double> vals(n_win);
          double mean = 0.0;
          for (long k = 0; k < n_win; ++k) {
            double sum = 0.0;
            for (long t = k * w; t < (k + 1) * w; ++t) sum += ms.served[t][j];
            vals[k] = sum / (static_cast<double>(w) * lambda[j]);
            mean += vals[k];
          }
          mean /= static_cast<double>(n_win);
          double m2 = 0.0;
          for (double v : vals) m2 += (v - mean) * (v - mean);
          double sd = std::sqrt(m2 / static_cast<double>(n_win));
          if (mean > 0) {
            cov_sum += sd / mean;
            cov_jobs += 1;
          }
        }
        return cov_jobs > 0 ? cov_sum / cov_jobs : 0.0;
      };
      double fz_q = zero_fraction(q);
      double fz_s = zero_fraction(s);
      double cov_q = window_cov(q);
      double cov_s = window_cov(s);
      pass = fz_q > fz_s && cov_s > cov_q;
      detail = fmt("zero-slot frac qtf %.3f > sstf %.3f; w1000 CoV sstf %.4f "
                   "> qtf %.4f",
                   fz_q, fz_s, cov_s, cov_q);
    }
    report(10, "QTF bursty per slot, SSTF bursty per kiloslot", pass, detail);
  }

  // ---- 11: byte-identical reruns through the batch driver ------------------
  {
    bool pass = true;
    std::string detail;
    try {
      namespace fs = std::filesystem;
      auto make_cfg = [](const std::string& out) {
        RunConfig rc;
        rc.scenario_type = "synthetic";
        rc.horizon = 1000;
        rc.seed = 5;
        rc.jobs = 1;
        rc.out = out;
        ControllerSpec qtf;
        qtf.policy = "qtf";
        qtf.v = 100.0;
        ControllerSpec sstf;
        sstf.policy = "sstf";
        rc.controllers = {qtf, sstf};
        return rc;
      };
      fs::remove_all("acceptance_rep_a");
      fs::remove_all("acceptance_rep_b");
      std::vector<RunRecord> ra = run_experiments(make_cfg("acceptance_rep_a"));
      std::vector<RunRecord> rb = run_experiments(make_cfg("acceptance_rep_b"));
      pass = ra.size() == rb.size() && !ra.empty();
      long bytes = 0;
      for (std::size_t k = 0; pass && k < ra.size(); ++k) {
        std::string a = slurp(ra[k].dir + "/metrics.csv");
        std::string b = slurp(rb[k].dir + "/metrics.csv");
        pass = !a.empty() && a == b && ra[k].row.error.empty() &&
               rb[k].row.error.empty();
        bytes += static_cast<long>(a.size());
      }
      pass = pass && slurp("acceptance_rep_a/comparison.csv") ==
                         slurp("acceptance_rep_b/comparison.csv");
      detail = fmt("%zu runs, %ld bytes of metrics compared", ra.size(), bytes);
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    report(11, "identical config replays byte-identical", pass, detail);
  }

  // ---- 12: conservation and replay on every run above ----------------------
  {
    bool pass = !audits.empty();
    double worst_gap = 0.0;
    std::string worst_name = "-";
    for (const RunAudit& a : audits) {
      if (!a.replay_ok) {
        pass = false;
        worst_name = a.name + " (replay)";
      }
      if (a.conservation_gap > worst_gap) {
        worst_gap = a.conservation_gap;
        worst_name = a.name;
      }
    }
    pass = pass && worst_gap <= kConservationTol;
    report(12, "queue accounting conserved on all runs", pass,
           fmt("%zu runs, worst gap %.2e (%s)", audits.size(), worst_gap,
               worst_name.c_str()));
  }

  std::printf("acceptance: %d/12 criteria passed\n", 12 - g_failed);
  return g_failed == 0 ? 0 : 1;
}
