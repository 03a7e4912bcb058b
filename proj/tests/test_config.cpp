#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "troughfill/config.hpp"
#include "troughfill/runner.hpp"

using namespace tf;
namespace fs = std::filesystem;

namespace {

// Small, fast synthetic experiment shared by the command tests.
std::string smoke_json(const std::string& out) {
  return R"({
    "scenario": {
      "type": "synthetic",
      "n_idcs": 2, "n_jobs": 2, "n_states": 4,
      "capacity": [8, 12], "bandwidth": [5, 8], "price": [1, 3],
      "dsj_fraction": [0.1, 0.4], "rate": [1, 2],
      "load_ratio": 1.0, "force_origin_serving": true,
      "horizon": 300, "seed": 21
    },
    "controllers": [
      {"policy": "qtf", "v": 5.0},
      {"policy": "bes"}
    ],
    "jobs": 1,
    "out": ")" + out + R"("
  })";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), (path + " should exist"));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const std::string& text) {
  long n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

void expect_config_error(const std::string& json_text,
                         const std::string& needle) {
  try {
    parse_config(json_text);
    FAIL_CHECK("expected ConfigError containing '" << needle
                                                   << "' for: " << json_text);
  } catch (const ConfigError& e) {
    CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos,
                  "message '" << e.what() << "' should mention '" << needle
                              << "'");
  }
}

}  // namespace

TEST_CASE("config round-trip: parse, serialize, parse is the identity") {
  std::string text = R"({
    "scenario": {
      "type": "synthetic",
      "n_idcs": 3, "n_jobs": 5, "n_states": 20,
      "capacity": [100, 200], "bandwidth": [30, 40], "price": [1, 10],
      "dsj_fraction": [0.0, 0.3], "rate": [5, 10],
      "load_ratio": 0.8, "rho": 0.5, "nu": 2.0,
      "force_origin_serving": true, "horizon": 2000, "seed": 11
    },
    "controllers": [
      {"policy": "qtf", "v": 1000},
      {"policy": "sstf", "beta0": 0.5, "lambda": [1, 2, 3, 4, 5]},
      {"policy": "bes"},
      {"policy": "ossi", "tol": 0.001}
    ],
    "sweep": [{"param": "qtf.v", "values": [1, 10, 100]}],
    "horizon": 5000,
    "seed": 77,
    "out": "runs",
    "jobs": 2,
    "bounds_epsilon_frac": 0.05
  })";
  RunConfig a = parse_config(text);
  CHECK(a.scenario_type == "synthetic");
  CHECK(a.synthetic.n_jobs == 5);
  CHECK(a.synthetic.capacity_lo == 100.0);
  CHECK(a.synthetic.force_origin_serving);
  REQUIRE(a.controllers.size() == 4);
  CHECK(a.controllers[0].label() == "qtf_v1000");
  CHECK(a.controllers[1].label() == "sstf");
  REQUIRE(a.controllers[1].lambda.has_value());
  CHECK(a.controllers[1].lambda->size() == 5);
  CHECK(a.controllers[3].tol == 0.001);
  REQUIRE(a.sweep.size() == 1);
  CHECK(a.sweep[0].values == std::vector<double>{1, 10, 100});
  CHECK(a.horizon == 5000);
  CHECK(a.seed == 77);
  CHECK(a.jobs == 2);
  CHECK(a.bounds_epsilon_frac == 0.05);

  std::string canon = serialize_config(a);
  RunConfig b = parse_config(canon);
  CHECK(a == b);
  CHECK(serialize_config(b) == canon);
  CHECK(config_hash(a) == config_hash(b));

  RunConfig c = a;
  c.seed = 78;
  CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("trace configs round-trip too") {
  std::string text = R"({
    "scenario": {
      "type": "trace",
      "packet_log": "data/packets.csv", "price_file": "data/prices.csv",
      "regions": ["r0", "r1"],
      "slot_length": 20, "size_threshold": 100, "dsj_capacity_per_mbit": 1.0,
      "n_idcs": 2, "n_jobs": 3,
      "capacity": [30, 40], "bandwidth": [150, 225], "rate": [5, 10],
      "serving_p": 0.5, "seed": 3,
      "block_slots": 50, "dtj_blocks": [0, 1, 2], "dsj_blocks": [3, 4]
    },
    "controllers": [{"policy": "qtf", "v": 1000}]
  })";
  RunConfig a = parse_config(text);
  CHECK(a.scenario_type == "trace");
  CHECK(a.trace_files.regions == std::vector<std::string>{"r0", "r1"});
  CHECK(a.trace.log.size_threshold == 100.0);
  CHECK(a.trace.dtj_blocks == std::vector<int>{0, 1, 2});
  RunConfig b = parse_config(serialize_config(a));
  CHECK(a == b);
}

TEST_CASE("unknown keys fail with a dotted path") {
  expect_config_error(R"({"scenario": {"type": "synthetic"},
                          "controllers": [{"policy": "bes"}],
                          "extra": 1})",
                      "unknown config key: extra");
  expect_config_error(R"({"scenario": {"type": "synthetic", "wrong": 1},
                          "controllers": [{"policy": "bes"}]})",
                      "scenario.wrong");
  expect_config_error(R"({"scenario": {"type": "synthetic"},
                          "controllers": [{"policy": "qtf", "beta0": 1}]})",
                      "controllers[0].beta0");
  expect_config_error(R"({"scenario": {"type": "synthetic"},
                          "controllers": [{"policy": "bes"}],
                          "sweep": [{"param": "seed", "values": [1], "x": 2}]})",
                      "sweep[0].x");
}

TEST_CASE("controller validation") {
  auto with_controllers = [](const std::string& cs) {
    return R"({"scenario": {"type": "synthetic"}, "controllers": )" + cs + "}";
  };
  expect_config_error(with_controllers("[]"), "nonempty");
  expect_config_error(with_controllers(R"([{"policy": "nope"}])"),
                      "one of qtf, sstf, bes, ossi");
  expect_config_error(with_controllers(R"([{"policy": "qtf", "v": 0}])"),
                      "v must be > 0");
  expect_config_error(with_controllers(R"([{"policy": "sstf", "beta0": -1}])"),
                      "beta0 must be >= 0");
  expect_config_error(
      with_controllers(R"([{"policy": "sstf", "lambda": [1, -2]}])"),
      "lambda entries must be >= 0");
  expect_config_error(with_controllers(R"([{"policy": "ossi", "tol": 0}])"),
                      "tol must be > 0");
  expect_config_error(with_controllers(R"([{"policy": "bes"},
                                           {"policy": "bes"}])"),
                      "duplicate");
  // Two qtf controllers with different v values are fine.
  RunConfig ok = parse_config(with_controllers(
      R"([{"policy": "qtf", "v": 1}, {"policy": "qtf", "v": 1000}])"));
  CHECK(ok.controllers.size() == 2);
}

TEST_CASE("sweep validation") {
  auto cfg = [](const std::string& type, const std::string& controllers,
                const std::string& sweep) {
    std::string scenario =
        type == "synthetic"
            ? R"({"type": "synthetic"})"
            : R"({"type": "trace", "packet_log": "p.csv",
                  "price_file": "q.csv", "regions": ["a", "b", "c", "d", "e"]})";
    return R"({"scenario": )" + scenario + R"(, "controllers": )" +
           controllers + R"(, "sweep": )" + sweep + "}";
  };
  const std::string qtf = R"([{"policy": "qtf"}])";
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "voltage", "values": [1]}])"),
                      "not sweepable");
  expect_config_error(cfg("synthetic", R"([{"policy": "bes"}])",
                          R"([{"param": "qtf.v", "values": [1]}])"),
                      "needs a qtf controller");
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "sstf.beta0", "values": [1]}])"),
                      "needs an sstf controller");
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "threshold", "values": [10]}])"),
                      "only applies to trace");
  expect_config_error(cfg("trace", qtf,
                          R"([{"param": "load_ratio", "values": [1]}])"),
                      "only applies to synthetic");
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "seed", "values": [1.5]}])"),
                      "nonnegative integers");
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "qtf.v", "values": []}])"),
                      "nonempty");
  expect_config_error(cfg("synthetic", qtf,
                          R"([{"param": "qtf.v", "values": [1]},
                              {"param": "qtf.v", "values": [2]}])"),
                      "twice");
}

TEST_CASE("offline policies and drift bounds need the ergodic scenario") {
  std::string trace_scenario = R"({"type": "trace", "packet_log": "p.csv",
      "price_file": "q.csv", "regions": ["a", "b", "c", "d", "e"]})";
  expect_config_error(R"({"scenario": )" + trace_scenario +
                          R"(, "controllers": [{"policy": "ossi"}]})",
                      "synthetic");
  expect_config_error(R"({"scenario": )" + trace_scenario +
                          R"(, "controllers": [{"policy": "bes"}],
                          "bounds_epsilon_frac": 0.05})",
                      "synthetic");
}

TEST_CASE("malformed json is a config error") {
  expect_config_error("{not json", "valid JSON");
  expect_config_error(R"(["array"])", "object");
  expect_config_error(R"({"controllers": [{"policy": "bes"}]})",
                      "scenario is required");
}

TEST_CASE("sweep values rewrite the right knobs") {
  RunConfig config = parse_config(smoke_json("unused"));
  RunConfig v = apply_sweep_value(config, "qtf.v", 250.0);
  CHECK(v.controllers[0].v == 250.0);
  CHECK(v.controllers[1].policy == "bes");

  RunConfig lr = apply_sweep_value(config, "load_ratio", 2.5);
  CHECK(lr.synthetic.load_ratio == 2.5);

  RunConfig sd = apply_sweep_value(config, "seed", 123.0);
  REQUIRE(sd.seed.has_value());
  CHECK(*sd.seed == 123u);

  RunConfig hz = apply_sweep_value(config, "horizon", 500.0);
  REQUIRE(hz.horizon.has_value());
  CHECK(*hz.horizon == 500);

  RunConfig trace;
  trace.scenario_type = "trace";
  RunConfig th = apply_sweep_value(trace, "threshold", 42.0);
  CHECK(th.trace.log.size_threshold == 42.0);
}

TEST_CASE("scenario build applies overrides") {
  RunConfig config = parse_config(smoke_json("unused"));
  Scenario sc = build_scenario(config);
  CHECK(sc.horizon == 300);
  CHECK(sc.seed == 21u);

  config.horizon = 120;
  config.seed = 999;
  Scenario sd = build_scenario(config);
  CHECK(sd.horizon == 120);
  CHECK(sd.seed == 999u);
  CHECK(sd.topo.idc_count() == 2);
}

TEST_CASE("run command writes metrics, summaries, and the comparison table") {
  const std::string out = "tf_out_smoke";
  fs::remove_all(out);
  RunConfig config = parse_config(smoke_json(out));
  CHECK(cmd_run(config) == 0);

  std::vector<RunRecord> records = run_experiments(config);
  REQUIRE(records.size() == 2);
  CHECK(records[0].controller == "qtf_v5");
  CHECK(records[1].controller == "bes");
  CHECK(records[0].sweep_label == "baseline");
  for (const RunRecord& rec : records) {
    CHECK(rec.row.error.empty());
    CHECK(rec.dir.rfind(out + "/p0_", 0) == 0);
    CHECK(rec.dir.find("__" + rec.controller) != std::string::npos);

    std::string metrics = slurp(rec.dir + "/metrics.csv");
    CHECK(count_lines(metrics) == 301);  // header + one row per slot
    CHECK(metrics.rfind("t,cost_total,energy,shift,Q_1,Q_2,served_1,served_2\n",
                        0) == 0);

    nlohmann::json summary = nlohmann::json::parse(slurp(rec.dir + "/summary.json"));
    CHECK(summary.at("version").get<std::string>() == kVersion);
    CHECK(summary.at("horizon").get<long>() == 300);
    CHECK(summary.at("aggregates").at("replay_ok").get<bool>());
    CHECK(summary.at("aggregates").at("slots").get<long>() == 300);
    CHECK(summary.at("aggregates").at("avg_cost").get<double>() ==
          doctest::Approx(rec.row.avg_cost));
    CHECK(summary.at("controller").at("policy").is_string());
    CHECK(summary.at("config").at("scenario").at("n_idcs").get<int>() == 2);
  }

  std::string comparison = slurp(out + "/comparison.csv");
  CHECK(count_lines(comparison) == 3);
  CHECK(comparison.rfind("sweep_index,sweep_label,controller,avg_cost,"
                         "overall_delay,avg_queue_total,unstable,queue_bound,"
                         "cost_bound,error\n",
                         0) == 0);
}

TEST_CASE("identical configs produce byte-identical outputs") {
  const std::string out1 = "tf_out_rep1";
  const std::string out2 = "tf_out_rep2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  RunConfig c1 = parse_config(smoke_json(out1));
  RunConfig c2 = parse_config(smoke_json(out2));
  std::vector<RunRecord> r1 = run_experiments(c1);
  std::vector<RunRecord> r2 = run_experiments(c2);
  REQUIRE(r1.size() == r2.size());
  for (std::size_t k = 0; k < r1.size(); ++k) {
    CHECK(slurp(r1[k].dir + "/metrics.csv") ==
          slurp(r2[k].dir + "/metrics.csv"));
  }
  CHECK(slurp(out1 + "/comparison.csv") == slurp(out2 + "/comparison.csv"));
}

TEST_CASE("a sweep runs every point and tags the output dirs") {
  const std::string out = "tf_out_sweep";
  fs::remove_all(out);
  std::string text = R"({
    "scenario": {
      "type": "synthetic",
      "n_idcs": 2, "n_jobs": 2, "n_states": 3,
      "capacity": [8, 12], "bandwidth": [5, 8], "price": [1, 3],
      "dsj_fraction": [0.1, 0.4], "rate": [1, 2],
      "horizon": 150, "seed": 4
    },
    "controllers": [{"policy": "qtf", "v": 1}],
    "sweep": [{"param": "qtf.v", "values": [1, 1000]}],
    "jobs": 1,
    "out": ")" + out + R"("
  })";
  RunConfig config = parse_config(text);
  std::vector<RunRecord> records = run_experiments(config);
  REQUIRE(records.size() == 2);
  CHECK(records[0].sweep_index == 0);
  CHECK(records[1].sweep_index == 1);
  CHECK(records[0].controller == "qtf_v1");
  CHECK(records[1].controller == "qtf_v1000");
  CHECK(records[0].sweep_label != records[1].sweep_label);
  CHECK(records[0].dir != records[1].dir);
  std::string comparison = slurp(out + "/comparison.csv");
  CHECK(count_lines(comparison) == 3);
  write_comparison_csv(out + "/again.csv", records);
  CHECK(slurp(out + "/again.csv") == comparison);
}

TEST_CASE("windowed rates: files, shapes, and the degenerate window") {
  const std::string out = "tf_out_rates";
  fs::remove_all(out);
  RunConfig config = parse_config(smoke_json(out));
  config.controllers.resize(1);  // qtf only
  std::vector<RunRecord> records = run_experiments(config);
  REQUIRE(records.size() == 1);
  const std::string dir = records[0].dir;

  windowed_rates(dir, {1, 50, 300});
  std::string w1 = slurp(dir + "/rates_w1.csv");
  CHECK(count_lines(w1) == 301);
  CHECK(w1.rfind("window,t_start,rate_1,rate_2\n", 0) == 0);
  std::string w50 = slurp(dir + "/rates_w50.csv");
  CHECK(count_lines(w50) == 7);
  std::string w300 = slurp(dir + "/rates_w300.csv");
  CHECK(count_lines(w300) == 2);

  // The single full-horizon window is the overall normalized rate.
  nlohmann::json summary = nlohmann::json::parse(slurp(dir + "/summary.json"));
  double lambda1 = summary.at("lambda")[0].get<double>();
  double served1 = summary.at("aggregates").at("avg_served")[0].get<double>();
  std::istringstream rows(w300.substr(w300.find('\n') + 1));
  std::string cell;
  std::getline(rows, cell, ',');  // window
  CHECK(cell == "1");
  std::getline(rows, cell, ',');  // t_start
  CHECK(cell == "1");
  std::getline(rows, cell, ',');  // rate_1
  CHECK(std::stod(cell) == doctest::Approx(served1 / lambda1).epsilon(1e-9));

  CHECK_THROWS_AS(windowed_rates(dir, {301}), ConfigError);
  CHECK_THROWS_AS(windowed_rates(dir, {0}), ConfigError);
}
