#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "helpers.hpp"
#include "troughfill/sim.hpp"

using namespace tf;
using tf::test::make_state;
using tf::test::single_idc_topo;

namespace {

// Ergodic one-IDC scenario: K = 10, S0 = 2, unit price and rate.
Scenario one_idc_scenario(double lambda, long horizon, std::uint64_t seed,
                          int n_states = 1) {
  Scenario sc;
  sc.topo = single_idc_topo({1.0}, 10.0, lambda, 2.0 * lambda + 1e-9);
  StateDistribution dist;
  for (int s = 0; s < n_states; ++s) {
    dist.states.push_back(make_state({10.0}, {1.0 + s}, {2.0}));
    dist.probs.push_back(1.0 / n_states);
  }
  sc.dist = std::move(dist);
  sc.horizon = horizon;
  sc.seed = seed;
  return sc;
}

struct OverAllocator : Controller {
  const Topology* topo;
  explicit OverAllocator(const Topology& t) : topo(&t) {}
  std::string name() const override { return "over"; }
  Allocation step(const SystemState& state, const QueueVector&, int) override {
    Allocation a(topo->idc_count(), topo->job_count());
    a.at(0, 0) = state.residual(0) + 1.0;
    return a;
  }
};

}  // namespace

TEST_CASE("state sampling: degenerate, empirical frequencies, determinism") {
  StateDistribution dist;
  dist.states = {make_state({10.0}, {1.0}, {0.0}),
                 make_state({10.0}, {2.0}, {0.0})};
  dist.probs = {1.0, 0.0};
  Rng rng(7);
  for (int k = 0; k < 100; ++k) CHECK(sample_state(dist, rng).price[0] == 1.0);

  dist.probs = {0.3, 0.7};
  long hits = 0;
  const long draws = 100000;
  for (long k = 0; k < draws; ++k) {
    int idx = sample_state_index(dist, counter_uniform01(99, k));
    if (idx == 0) ++hits;
  }
  CHECK(std::abs(hits / static_cast<double>(draws) - 0.3) < 0.01);

  Rng a(42), b(42);
  for (int k = 0; k < 200; ++k) {
    CHECK(sample_state_index(dist, a.uniform01()) ==
          sample_state_index(dist, b.uniform01()));
  }
}

TEST_CASE("scenario validation: one state source, covered arrivals") {
  Scenario sc = one_idc_scenario(1.0, 100, 3);
  CHECK_NOTHROW(sc.validate());

  Scenario both = one_idc_scenario(1.0, 100, 3);
  both.state_series.push_back(both.dist->states[0]);
  CHECK_THROWS_AS(both.validate(), ConfigError);

  Scenario neither = one_idc_scenario(1.0, 100, 3);
  neither.dist.reset();
  CHECK_THROWS_AS(neither.validate(), ConfigError);

  Scenario zero = one_idc_scenario(1.0, 0, 3);
  CHECK_THROWS_AS(zero.validate(), ConfigError);

  // Generated arrivals live on [0, 2 lambda]; a smaller declared bound lies.
  Scenario lying = one_idc_scenario(1.0, 100, 3);
  Topology t = single_idc_topo({1.0}, 10.0, 1.0, 1.5);
  lying.topo = t;
  CHECK_THROWS_AS(lying.validate(), ConfigError);

  // A recorded arrival above the bound is rejected too.
  Scenario recorded = one_idc_scenario(1.0, 2, 3);
  recorded.arrival_series = {{0.5}, {9.0}};
  CHECK_THROWS_AS(recorded.validate(), ConfigError);
}

TEST_CASE("per-slot draws are counter-based and bounded") {
  Scenario sc = one_idc_scenario(1.5, 1000, 11, 3);
  double mean = 0.0;
  for (long t = 0; t < sc.horizon; ++t) {
    auto a1 = sc.arrivals_at(t);
    auto a2 = sc.arrivals_at(t);
    CHECK(a1 == a2);
    CHECK(sc.state_index_at(t) == sc.state_index_at(t));
    REQUIRE(a1.size() == 1);
    CHECK(a1[0] >= 0.0);
    CHECK(a1[0] <= 3.0);
    mean += a1[0];
  }
  mean /= static_cast<double>(sc.horizon);
  CHECK(mean == doctest::Approx(1.5).epsilon(0.05));

  // Different seeds give different realizations.
  Scenario other = one_idc_scenario(1.5, 1000, 12, 3);
  bool differs = false;
  for (long t = 0; t < 10 && !differs; ++t) {
    differs = other.arrivals_at(t) != sc.arrivals_at(t);
  }
  CHECK(differs);
}

TEST_CASE("zero demand: queues stay empty and cost is the base load") {
  Scenario sc = one_idc_scenario(0.0, 200, 5);
  QtfController qtf(sc.topo, sc.power, QtfConfig{1.0});
  MetricsSeries ms = run(sc, qtf);
  REQUIRE(ms.slots() == 200);
  // Base cost: 0.5*10 idle + 0.5*4/10 dsj quadratic, at unit price.
  for (long t = 0; t < 200; ++t) {
    CHECK(ms.queue[t][0] == 0.0);
    CHECK(ms.served[t][0] == 0.0);
    CHECK(ms.cost_total[t] == doctest::Approx(5.2).epsilon(1e-12));
  }
  CHECK(ms.avg_cost == doctest::Approx(5.2).epsilon(1e-12));
  CHECK(ms.overall_delay == 0.0);
  CHECK_FALSE(ms.unstable);
}

TEST_CASE("identical reruns are bit-identical") {
  Scenario sc = one_idc_scenario(2.0, 500, 17, 4);
  QtfController c1(sc.topo, sc.power, QtfConfig{10.0});
  QtfController c2(sc.topo, sc.power, QtfConfig{10.0});
  MetricsSeries a = run(sc, c1);
  MetricsSeries b = run(sc, c2);
  CHECK(a.cost_total == b.cost_total);
  CHECK(a.queue == b.queue);
  CHECK(a.served == b.served);
  CHECK(a.arrivals == b.arrivals);
  CHECK(a.avg_cost == b.avg_cost);
  CHECK(a.drift_slope == b.drift_slope);
}

TEST_CASE("bookkeeping: replay and conservation hold exactly") {
  Scenario sc = one_idc_scenario(2.0, 2000, 23, 3);
  QtfController qtf(sc.topo, sc.power, QtfConfig{50.0});
  MetricsSeries ms = run(sc, qtf);
  CHECK(ms.replay_ok);
  CHECK(ms.conservation_gap <= 1e-6);
  // Aggregates agree with the recorded series.
  double cost = 0.0;
  for (double c : ms.cost_total) cost += c;
  CHECK(ms.avg_cost == doctest::Approx(cost / 2000.0).epsilon(1e-12));
  double q = 0.0;
  for (const auto& row : ms.queue) q += row[0];
  CHECK(ms.avg_queue[0] == doctest::Approx(q / 2000.0).epsilon(1e-12));
  CHECK(ms.avg_queue_total == doctest::Approx(q / 2000.0).epsilon(1e-12));
  // Little's law wiring: delay = avg queue / avg arrivals.
  CHECK(ms.delay[0] ==
        doctest::Approx(ms.avg_queue[0] / ms.avg_arrival[0]).epsilon(1e-12));
}

TEST_CASE("an infeasible controller aborts the run naming the slot") {
  Scenario sc = one_idc_scenario(1.0, 10, 29);
  OverAllocator bad(sc.topo);
  try {
    run(sc, bad);
    FAIL("expected FeasibilityError");
  } catch (const FeasibilityError& e) {
    CHECK(std::string(e.what()).find("slot 0") != std::string::npos);
    CHECK(std::string(e.what()).find("over") != std::string::npos);
    CHECK_FALSE(e.violations().empty());
  }
}

TEST_CASE("small cost weight serves backlog immediately: delay near one slot") {
  Scenario sc = one_idc_scenario(1.0, 4000, 31);
  QtfController qtf(sc.topo, sc.power, QtfConfig{0.01});
  MetricsSeries ms = run(sc, qtf);
  CHECK_FALSE(ms.unstable);
  CHECK(ms.overall_delay > 0.5);
  CHECK(ms.overall_delay <= 2.0);
}

TEST_CASE("compare: shared realizations and the cost/delay tradeoff") {
  Scenario sc = one_idc_scenario(2.0, 3000, 37, 3);
  std::vector<std::unique_ptr<Controller>> cs;
  cs.emplace_back(new QtfController(sc.topo, sc.power, QtfConfig{0.1}));
  cs.emplace_back(new QtfController(sc.topo, sc.power, QtfConfig{200.0}));
  std::vector<MetricsSeries> series;
  std::vector<CompareRow> rows = compare(sc, cs, &series);
  REQUIRE(rows.size() == 2);
  REQUIRE(series.size() == 2);
  CHECK(rows[0].name == "qtf_v0.1");
  CHECK(rows[1].name == "qtf_v200");
  CHECK(rows[0].error.empty());
  CHECK(rows[1].error.empty());
  // Same world for both controllers.
  CHECK(series[0].arrivals == series[1].arrivals);
  // Larger V trades delay for cost.
  CHECK(rows[1].avg_cost <= rows[0].avg_cost + 1e-9);
  CHECK(rows[1].overall_delay >= rows[0].overall_delay - 1e-9);
  CHECK(rows[0].avg_queue_total ==
        doctest::Approx(series[0].avg_queue_total).epsilon(1e-12));
}

TEST_CASE("overload trips the instability flag; light load does not") {
  // lambda = 5 against residual capacity 3: queues grow ~2 per slot.
  Scenario heavy = one_idc_scenario(5.0, 2000, 41);
  heavy.dist->states[0] = make_state({10.0}, {1.0}, {7.0});
  BesController bes(heavy.topo, heavy.power);
  MetricsSeries hot = run(heavy, bes);
  CHECK(hot.unstable);
  CHECK(hot.drift_slope > 1.0);
  CHECK(hot.overall_delay > 10.0);

  Scenario light = one_idc_scenario(1.0, 2000, 43);
  BesController easy(light.topo, light.power);
  MetricsSeries cool = run(light, easy);
  CHECK_FALSE(cool.unstable);
  CHECK(std::abs(cool.drift_slope) < 0.05);
}

TEST_CASE("ossi controller needs the ergodic state index") {
  Scenario sc = one_idc_scenario(1.0, 10, 47);
  OssiPolicy pol;
  pol.per_state = {Allocation(1, 1)};
  OssiController ctrl(pol);
  QueueVector q(1);
  CHECK_NOTHROW(ctrl.step(sc.dist->states[0], q, 0));
  CHECK_THROWS_AS(ctrl.step(sc.dist->states[0], q, -1), SolverError);
  CHECK_THROWS_AS(ctrl.step(sc.dist->states[0], q, 5), SolverError);
}
