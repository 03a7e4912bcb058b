#include "troughfill/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

#include "internal_util.hpp"

namespace tf {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) bad("unknown config key: " + path + item.key());
  }
}

double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) bad(path + " must be a number");
  return j.get<double>();
}

long as_long(const json& j, const std::string& path) {
  if (!j.is_number_integer()) bad(path + " must be an integer");
  return j.get<long>();
}

std::uint64_t as_seed(const json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
    bad(path + " must be a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) bad(path + " must be a boolean");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) bad(path + " must be a string");
  return j.get<std::string>();
}

void get_range(const json& obj, const std::string& path, const char* key,
               double& lo, double& hi) {
  if (!obj.contains(key)) return;
  const json& j = obj.at(key);
  std::string p = path + key;
  if (!j.is_array() || j.size() != 2) bad(p + " must be a [lo, hi] pair");
  lo = as_double(j[0], p + "[0]");
  hi = as_double(j[1], p + "[1]");
  if (hi < lo) bad(p + " must have lo <= hi");
}

template <typename T, typename Fn>
void get_opt(const json& obj, const std::string& path, const char* key,
             T& target, Fn convert) {
  if (obj.contains(key)) target = convert(obj.at(key), path + key);
}

void parse_packet_log_config(const json& obj, const std::string& path,
                             PacketLogConfig& log) {
  get_opt(obj, path, "slot_length", log.slot_length, as_double);
  get_opt(obj, path, "size_threshold", log.size_threshold, as_double);
  get_opt(obj, path, "dsj_capacity_per_mbit", log.dsj_capacity_per_mbit,
          as_double);
  if (log.slot_length <= 0) bad(path + "slot_length must be > 0");
  if (log.size_threshold <= 0) bad(path + "size_threshold must be > 0");
  if (log.dsj_capacity_per_mbit <= 0) {
    bad(path + "dsj_capacity_per_mbit must be > 0");
  }
}

void parse_scenario(const json& obj, RunConfig& config) {
  const std::string path = "scenario.";
  if (!obj.is_object()) bad("scenario must be an object");
  std::string type = "synthetic";
  get_opt(obj, path, "type", type, as_string);
  config.scenario_type = type;
  if (type == "synthetic") {
    check_keys(obj, path,
               {"type", "n_idcs", "n_jobs", "n_states", "capacity",
                "bandwidth", "price", "dsj_fraction", "rate", "load_ratio",
                "rho", "nu", "force_origin_serving", "horizon", "seed"});
    SyntheticConfig& c = config.synthetic;
    get_opt(obj, path, "n_idcs", c.n_idcs,
            [](const json& j, const std::string& p) {
              return static_cast<int>(as_long(j, p));
            });
    get_opt(obj, path, "n_jobs", c.n_jobs,
            [](const json& j, const std::string& p) {
              return static_cast<int>(as_long(j, p));
            });
    get_opt(obj, path, "n_states", c.n_states,
            [](const json& j, const std::string& p) {
              return static_cast<int>(as_long(j, p));
            });
    get_range(obj, path, "capacity", c.capacity_lo, c.capacity_hi);
    get_range(obj, path, "bandwidth", c.bandwidth_lo, c.bandwidth_hi);
    get_range(obj, path, "price", c.price_lo, c.price_hi);
    get_range(obj, path, "dsj_fraction", c.dsj_lo, c.dsj_hi);
    get_range(obj, path, "rate", c.rate_lo, c.rate_hi);
    get_opt(obj, path, "load_ratio", c.load_ratio, as_double);
    get_opt(obj, path, "rho", c.rho, as_double);
    get_opt(obj, path, "nu", c.nu, as_double);
    get_opt(obj, path, "force_origin_serving", c.force_origin_serving,
            as_bool);
    get_opt(obj, path, "horizon", c.horizon, as_long);
    get_opt(obj, path, "seed", c.seed, as_seed);
    if (c.n_idcs <= 0 || c.n_jobs <= 0 || c.n_states <= 0) {
      bad(path + "n_idcs, n_jobs, n_states must be positive");
    }
    if (c.horizon <= 0) bad(path + "horizon must be > 0");
    if (c.load_ratio < 0) bad(path + "load_ratio must be >= 0");
  } else if (type == "trace") {
    check_keys(obj, path,
               {"type", "packet_log", "price_file", "regions", "slot_length",
                "size_threshold", "dsj_capacity_per_mbit", "n_idcs", "n_jobs",
                "capacity", "bandwidth", "rate", "rho", "nu", "serving_p",
                "seed", "block_slots", "dtj_blocks", "dsj_blocks"});
    TraceFiles& f = config.trace_files;
    TraceScenarioConfig& c = config.trace;
    get_opt(obj, path, "packet_log", f.packet_log, as_string);
    get_opt(obj, path, "price_file", f.price_file, as_string);
    if (obj.contains("regions")) {
      const json& r = obj.at("regions");
      if (!r.is_array()) bad(path + "regions must be an array of strings");
      f.regions.clear();
      for (std::size_t i = 0; i < r.size(); ++i) {
        f.regions.push_back(
            as_string(r[i], detail::fmt("scenario.regions[%zu]", i)));
      }
    }
    parse_packet_log_config(obj, path, c.log);
    get_opt(obj, path, "n_idcs", c.n_idcs,
            [](const json& j, const std::string& p) {
              return static_cast<int>(as_long(j, p));
            });
    get_opt(obj, path, "n_jobs", c.n_jobs,
            [](const json& j, const std::string& p) {
              return static_cast<int>(as_long(j, p));
            });
    get_range(obj, path, "capacity", c.capacity_lo, c.capacity_hi);
    get_range(obj, path, "bandwidth", c.bandwidth_lo, c.bandwidth_hi);
    get_range(obj, path, "rate", c.rate_lo, c.rate_hi);
    get_opt(obj, path, "rho", c.rho, as_double);
    get_opt(obj, path, "nu", c.nu, as_double);
    get_opt(obj, path, "serving_p", c.serving_p, as_double);
    get_opt(obj, path, "seed", c.seed, as_seed);
    get_opt(obj, path, "block_slots", c.block_slots, as_long);
    auto get_blocks = [&](const char* key, std::vector<int>& out) {
      if (!obj.contains(key)) return;
      const json& b = obj.at(key);
      std::string p = path + key;
      if (!b.is_array()) bad(p + " must be an array of block indices");
      out.clear();
      for (std::size_t i = 0; i < b.size(); ++i) {
        long v = as_long(b[i], detail::fmt("%s[%zu]", p.c_str(), i));
        if (v < 0) bad(p + " entries must be >= 0");
        out.push_back(static_cast<int>(v));
      }
    };
    get_blocks("dtj_blocks", c.dtj_blocks);
    get_blocks("dsj_blocks", c.dsj_blocks);
    if (c.n_idcs <= 0 || c.n_jobs <= 0) {
      bad(path + "n_idcs and n_jobs must be positive");
    }
    if (c.serving_p < 0 || c.serving_p > 1) {
      bad(path + "serving_p must sit inside [0, 1]");
    }
    if (f.packet_log.empty()) bad(path + "packet_log is required");
    if (f.price_file.empty()) bad(path + "price_file is required");
    if (static_cast<int>(f.regions.size()) != c.n_idcs) {
      bad(detail::fmt("scenario.regions needs one region per IDC (%d), got %zu",
                      c.n_idcs, f.regions.size()));
    }
  } else {
    bad("scenario.type must be \"synthetic\" or \"trace\"");
  }
}

ControllerSpec parse_controller(const json& obj, std::size_t index) {
  std::string path = detail::fmt("controllers[%zu].", index);
  if (!obj.is_object()) bad(path + " must be an object");
  ControllerSpec spec;
  if (!obj.contains("policy")) bad(path + "policy is required");
  spec.policy = as_string(obj.at("policy"), path + "policy");
  if (spec.policy == "qtf") {
    check_keys(obj, path, {"policy", "v"});
    get_opt(obj, path, "v", spec.v, as_double);
    if (spec.v <= 0) bad(path + "v must be > 0");
  } else if (spec.policy == "sstf") {
    check_keys(obj, path, {"policy", "beta0", "lambda"});
    get_opt(obj, path, "beta0", spec.beta0, as_double);
    if (spec.beta0 < 0) bad(path + "beta0 must be >= 0");
    if (obj.contains("lambda")) {
      const json& l = obj.at("lambda");
      if (!l.is_array()) bad(path + "lambda must be an array");
      std::vector<double> lambda;
      for (std::size_t i = 0; i < l.size(); ++i) {
        double v = as_double(l[i], detail::fmt("%slambda[%zu]", path.c_str(), i));
        if (v < 0) bad(path + "lambda entries must be >= 0");
        lambda.push_back(v);
      }
      spec.lambda = std::move(lambda);
    }
  } else if (spec.policy == "bes") {
    check_keys(obj, path, {"policy"});
  } else if (spec.policy == "ossi") {
    check_keys(obj, path, {"policy", "tol"});
    get_opt(obj, path, "tol", spec.tol, as_double);
    if (spec.tol <= 0) bad(path + "tol must be > 0");
  } else {
    bad(path + "policy must be one of qtf, sstf, bes, ossi");
  }
  return spec;
}

SweepAxis parse_sweep_axis(const json& obj, std::size_t index,
                           const RunConfig& config) {
  std::string path = detail::fmt("sweep[%zu].", index);
  if (!obj.is_object()) bad(path + " must be an object");
  check_keys(obj, path, {"param", "values"});
  SweepAxis axis;
  if (!obj.contains("param")) bad(path + "param is required");
  axis.param = as_string(obj.at("param"), path + "param");
  bool known = false;
  for (const char* p : kSweepParams) known = known || axis.param == p;
  if (!known) bad(path + "param '" + axis.param + "' is not sweepable");
  if (!obj.contains("values")) bad(path + "values is required");
  const json& vals = obj.at("values");
  if (!vals.is_array() || vals.empty()) {
    bad(path + "values must be a nonempty array");
  }
  for (std::size_t i = 0; i < vals.size(); ++i) {
    axis.values.push_back(
        as_double(vals[i], detail::fmt("%svalues[%zu]", path.c_str(), i)));
  }

  auto has_policy = [&](const char* policy) {
    return std::any_of(config.controllers.begin(), config.controllers.end(),
                       [&](const ControllerSpec& c) { return c.policy == policy; });
  };
  if (axis.param == "qtf.v") {
    if (!has_policy("qtf")) bad(path + "qtf.v sweep needs a qtf controller");
    for (double v : axis.values) {
      if (v <= 0) bad(path + "qtf.v values must be > 0");
    }
  } else if (axis.param == "sstf.beta0") {
    if (!has_policy("sstf")) {
      bad(path + "sstf.beta0 sweep needs an sstf controller");
    }
    for (double v : axis.values) {
      if (v < 0) bad(path + "sstf.beta0 values must be >= 0");
    }
  } else if (axis.param == "load_ratio") {
    if (config.scenario_type != "synthetic") {
      bad(path + "load_ratio only applies to synthetic scenarios");
    }
    for (double v : axis.values) {
      if (v < 0) bad(path + "load_ratio values must be >= 0");
    }
  } else if (axis.param == "threshold") {
    if (config.scenario_type != "trace") {
      bad(path + "threshold only applies to trace scenarios");
    }
    for (double v : axis.values) {
      if (v <= 0) bad(path + "threshold values must be > 0");
    }
  } else if (axis.param == "seed" || axis.param == "horizon") {
    for (double v : axis.values) {
      if (v != std::floor(v) || v < (axis.param == "horizon" ? 1.0 : 0.0)) {
        bad(path + axis.param + " values must be nonnegative integers");
      }
    }
  }
  return axis;
}

json range_json(double lo, double hi) { return json::array({lo, hi}); }

json scenario_json(const RunConfig& config) {
  json s;
  s["type"] = config.scenario_type;
  if (config.scenario_type == "synthetic") {
    const SyntheticConfig& c = config.synthetic;
    s["n_idcs"] = c.n_idcs;
    s["n_jobs"] = c.n_jobs;
    s["n_states"] = c.n_states;
    s["capacity"] = range_json(c.capacity_lo, c.capacity_hi);
    s["bandwidth"] = range_json(c.bandwidth_lo, c.bandwidth_hi);
    s["price"] = range_json(c.price_lo, c.price_hi);
    s["dsj_fraction"] = range_json(c.dsj_lo, c.dsj_hi);
    s["rate"] = range_json(c.rate_lo, c.rate_hi);
    s["load_ratio"] = c.load_ratio;
    s["rho"] = c.rho;
    s["nu"] = c.nu;
    s["force_origin_serving"] = c.force_origin_serving;
    s["horizon"] = c.horizon;
    s["seed"] = c.seed;
  } else {
    const TraceFiles& f = config.trace_files;
    const TraceScenarioConfig& c = config.trace;
    s["packet_log"] = f.packet_log;
    s["price_file"] = f.price_file;
    s["regions"] = f.regions;
    s["slot_length"] = c.log.slot_length;
    s["size_threshold"] = c.log.size_threshold;
    s["dsj_capacity_per_mbit"] = c.log.dsj_capacity_per_mbit;
    s["n_idcs"] = c.n_idcs;
    s["n_jobs"] = c.n_jobs;
    s["capacity"] = range_json(c.capacity_lo, c.capacity_hi);
    s["bandwidth"] = range_json(c.bandwidth_lo, c.bandwidth_hi);
    s["rate"] = range_json(c.rate_lo, c.rate_hi);
    s["rho"] = c.rho;
    s["nu"] = c.nu;
    s["serving_p"] = c.serving_p;
    s["seed"] = c.seed;
    s["block_slots"] = c.block_slots;
    if (!c.dtj_blocks.empty()) s["dtj_blocks"] = c.dtj_blocks;
    if (!c.dsj_blocks.empty()) s["dsj_blocks"] = c.dsj_blocks;
  }
  return s;
}

json controller_json(const ControllerSpec& spec) {
  json c;
  c["policy"] = spec.policy;
  if (spec.policy == "qtf") c["v"] = spec.v;
  if (spec.policy == "sstf") {
    c["beta0"] = spec.beta0;
    if (spec.lambda) c["lambda"] = *spec.lambda;
  }
  if (spec.policy == "ossi") c["tol"] = spec.tol;
  return c;
}

json config_json(const RunConfig& config) {
  json j;
  j["scenario"] = scenario_json(config);
  json controllers = json::array();
  for (const ControllerSpec& c : config.controllers) {
    controllers.push_back(controller_json(c));
  }
  j["controllers"] = std::move(controllers);
  if (!config.sweep.empty()) {
    json sweep = json::array();
    for (const SweepAxis& a : config.sweep) {
      json axis;
      axis["param"] = a.param;
      axis["values"] = a.values;
      sweep.push_back(std::move(axis));
    }
    j["sweep"] = std::move(sweep);
  }
  if (config.horizon) j["horizon"] = *config.horizon;
  if (config.seed) j["seed"] = *config.seed;
  j["out"] = config.out;
  j["jobs"] = config.jobs;
  j["bounds_epsilon_frac"] = config.bounds_epsilon_frac;
  return j;
}

}  // namespace

std::string ControllerSpec::label() const {
  if (policy == "qtf") return detail::fmt("qtf_v%.10g", v);
  return policy;
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) bad("config must be a JSON object");
  check_keys(root, "",
             {"scenario", "controllers", "sweep", "horizon", "seed", "out",
              "jobs", "bounds_epsilon_frac"});

  RunConfig config;
  if (!root.contains("scenario")) bad("scenario is required");
  parse_scenario(root.at("scenario"), config);

  if (!root.contains("controllers")) bad("controllers is required");
  const json& controllers = root.at("controllers");
  if (!controllers.is_array() || controllers.empty()) {
    bad("controllers must be a nonempty array");
  }
  for (std::size_t i = 0; i < controllers.size(); ++i) {
    config.controllers.push_back(parse_controller(controllers[i], i));
  }
  std::set<std::string> labels;
  for (const ControllerSpec& c : config.controllers) {
    if (!labels.insert(c.label()).second) {
      bad("controllers produce duplicate label '" + c.label() + "'");
    }
  }

  if (root.contains("sweep")) {
    const json& sweep = root.at("sweep");
    if (!sweep.is_array()) bad("sweep must be an array");
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      config.sweep.push_back(parse_sweep_axis(sweep[i], i, config));
    }
    std::set<std::string> params;
    for (const SweepAxis& a : config.sweep) {
      if (!params.insert(a.param).second) {
        bad("sweep lists parameter '" + a.param + "' twice");
      }
    }
  }

  if (root.contains("horizon")) {
    long h = as_long(root.at("horizon"), "horizon");
    if (h <= 0) bad("horizon must be > 0");
    config.horizon = h;
  }
  if (root.contains("seed")) config.seed = as_seed(root.at("seed"), "seed");
  get_opt(root, "", "out", config.out, as_string);
  if (config.out.empty()) bad("out must be a nonempty path");
  if (root.contains("jobs")) {
    long j = as_long(root.at("jobs"), "jobs");
    if (j < 0) bad("jobs must be >= 0");
    config.jobs = static_cast<int>(j);
  }
  get_opt(root, "", "bounds_epsilon_frac", config.bounds_epsilon_frac,
          as_double);
  if (config.bounds_epsilon_frac < 0) bad("bounds_epsilon_frac must be >= 0");

  bool needs_ergodic =
      config.bounds_epsilon_frac > 0 ||
      std::any_of(config.controllers.begin(), config.controllers.end(),
                  [](const ControllerSpec& c) { return c.policy == "ossi"; });
  if (needs_ergodic && config.scenario_type != "synthetic") {
    bad("ossi controllers and drift bounds need the synthetic (ergodic) "
        "scenario; trace runs have no state distribution");
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  return config_json(config).dump(2) + "\n";
}

std::uint64_t config_hash(const RunConfig& config) {
  return fnv1a(serialize_config(config));
}

RunConfig apply_sweep_value(const RunConfig& config, const std::string& param,
                            double value) {
  RunConfig out = config;
  if (param == "qtf.v") {
    for (ControllerSpec& c : out.controllers) {
      if (c.policy == "qtf") c.v = value;
    }
  } else if (param == "sstf.beta0") {
    for (ControllerSpec& c : out.controllers) {
      if (c.policy == "sstf") c.beta0 = value;
    }
  } else if (param == "load_ratio") {
    out.synthetic.load_ratio = value;
  } else if (param == "threshold") {
    out.trace.log.size_threshold = value;
  } else if (param == "seed") {
    out.seed = static_cast<std::uint64_t>(std::llround(value));
  } else if (param == "horizon") {
    out.horizon = static_cast<long>(std::llround(value));
  } else {
    bad("unknown sweep parameter '" + param + "'");
  }
  return out;
}

Scenario build_scenario(const RunConfig& config) {
  if (config.scenario_type == "synthetic") {
    SyntheticConfig c = config.synthetic;
    if (config.horizon) c.horizon = *config.horizon;
    if (config.seed) c.seed = *config.seed;
    return gen_synthetic(c);
  }
  TraceScenarioConfig tc = config.trace;
  if (config.seed) tc.seed = *config.seed;
  PacketSeries packets = ingest_packet_log(config.trace_files.packet_log,
                                           tc.log);
  long block_slots = tc.block_slots;
  if (block_slots <= 0) block_slots = packets.slots() / (tc.n_jobs + tc.n_idcs);
  if (block_slots <= 0) {
    bad("packet log too short for the requested blocks");
  }
  PriceSeries prices =
      load_prices(config.trace_files.price_file, config.trace_files.regions,
                  block_slots, tc.log.slot_length);
  Scenario sc = build_trace_scenario(packets, prices, tc);
  if (config.horizon) sc.horizon = std::min(sc.horizon, *config.horizon);
  return sc;
}

}  // namespace tf
