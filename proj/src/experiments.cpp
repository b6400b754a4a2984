#include "entsim/experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace entsim::exp {

namespace {

std::string format6(double value) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

double nearest_rank_percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

proto::SwapRequest base_request(std::uint64_t id) {
  proto::SwapRequest request;
  request.request_id = id;
  request.source_node = 0;
  request.destination_node = -1;
  return request;
}

void validate_spec(const ScenarioSpec& spec) {
  if (spec.trials_per_point < 1) {
    throw std::invalid_argument("scenario: trials_per_point must be at least 1");
  }
  if (spec.kind != ScenarioKind::PurificationCurve && spec.kind != ScenarioKind::DistilComparison) {
    if (spec.sweep_values.empty()) throw std::invalid_argument("scenario: sweep values are empty");
    if (!std::is_sorted(spec.sweep_values.begin(), spec.sweep_values.end())) {
      throw std::invalid_argument("scenario: sweep values must be sorted");
    }
  }
}

struct ArmSpec {
  std::string series;
  proto::Ordering ordering = proto::Ordering::PurifyThenSwap;
  proto::SlotPolicy policy = proto::SlotPolicy::OldestFirst;
  int rounds = 0;
};

net::NetworkConfig config_for_point(const ScenarioSpec& spec, double sweep_value) {
  net::NetworkConfig config = spec.base_config;
  switch (spec.kind) {
    case ScenarioKind::NodeSweep: {
      const int nodes = static_cast<int>(sweep_value);
      if (nodes < 2) throw std::invalid_argument("scenario: node counts start at 2");
      double total = 0.0;
      for (double d : spec.base_config.distances_km) total += d;
      config.num_switches = nodes - 2;
      config.distances_km.assign(nodes - 1, total / (nodes - 1));
      break;
    }
    case ScenarioKind::MemorySweep: {
      const int positions = static_cast<int>(sweep_value);
      if (positions < 2 || positions % 2 != 0) {
        throw std::invalid_argument("scenario: memory positions must be even and at least 2");
      }
      config.num_memory_positions = positions;
      break;
    }
    case ScenarioKind::OrderingSweep:
      config.distances_km.assign(config.distances_km.size(), sweep_value);
      break;
    case ScenarioKind::DistilComparison:
    case ScenarioKind::PurificationCurve:
      break;
  }
  return config;
}

std::vector<ArmSpec> arms_for(const ScenarioSpec& spec) {
  switch (spec.kind) {
    case ScenarioKind::NodeSweep:
      return {{"", proto::Ordering::PurifyThenSwap, proto::SlotPolicy::OldestFirst, 0}};
    case ScenarioKind::MemorySweep:
      return {{"", proto::Ordering::PurifyThenSwap, proto::SlotPolicy::BestFidelity, 0}};
    case ScenarioKind::OrderingSweep:
      return {{"ps", proto::Ordering::PurifyThenSwap, proto::SlotPolicy::OldestFirst,
               spec.distillation_rounds},
              {"sp", proto::Ordering::SwapThenPurify, proto::SlotPolicy::OldestFirst,
               spec.distillation_rounds}};
    case ScenarioKind::DistilComparison:
      return {{"baseline", proto::Ordering::SwapThenPurify, proto::SlotPolicy::OldestFirst, 0},
              {"distilled", proto::Ordering::SwapThenPurify, proto::SlotPolicy::OldestFirst,
               spec.distillation_rounds}};
    case ScenarioKind::PurificationCurve:
      return {};
  }
  return {};
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t derive_trial_seed(std::uint64_t master, std::uint64_t point, std::uint64_t trial) {
  engine::RngStream stream(master ^ (0x9e3779b97f4a7c15ull * (point + 1)) ^
                           (0xc2b2ae3d27d4eb4full * (trial + 1)));
  return stream.next_u64();
}

TrialRun run_single_trial(const net::NetworkConfig& base, const proto::SwapRequest& request,
                          std::uint64_t trial_seed, std::ostream* trace) {
  net::NetworkConfig config = base;
  config.seed = trial_seed;
  engine::Simulator sim;
  if (trace != nullptr) {
    sim.set_trace(trace, [](engine::EventKind kind) { return proto::event_kind_name(kind); });
  }
  net::Network network(sim, config);
  proto::Orchestrator orchestrator(sim, network);
  network.start_sources();
  orchestrator.submit(request);
  sim.run_until(config.runtime_ns);
  orchestrator.finalize_incomplete();
  if (orchestrator.records().empty()) {
    throw std::logic_error("experiments: trial produced no record");
  }
  return TrialRun{orchestrator.records().front(), network.usage_log()};
}

ResultRow aggregate_trials(const std::string& series, double sweep_value,
                           const std::vector<proto::TrialRecord>& records) {
  ResultRow row;
  row.series = series;
  row.sweep_value = sweep_value;
  row.num_trials = static_cast<int>(records.size());

  std::vector<double> fidelities;
  double completion_sum = 0.0;
  double pairs_sum = 0.0;
  int clean = 0;
  for (const proto::TrialRecord& r : records) {
    row.distill_attempts += r.distillation_attempts;
    row.distill_successes += r.distillation_successes;
    if (!r.completed) continue;
    ++row.num_successes;
    fidelities.push_back(r.end_to_end_fidelity);
    completion_sum += static_cast<double>(r.completion_time_ns);
    pairs_sum += r.pairs_consumed;
    if (r.distillation_clean) ++clean;
  }
  if (!fidelities.empty()) {
    const double n = static_cast<double>(fidelities.size());
    double sum = 0.0;
    for (double f : fidelities) sum += f;
    row.mean_fidelity = sum / n;
    if (fidelities.size() > 1) {
      double ss = 0.0;
      for (double f : fidelities) ss += (f - row.mean_fidelity) * (f - row.mean_fidelity);
      row.std_fidelity = std::sqrt(ss / (n - 1.0));
    }
    row.mean_completion_ns = completion_sum / n;
    row.mean_pairs_consumed = pairs_sum / n;
    row.clean_fraction = static_cast<double>(clean) / n;
    std::vector<double> sorted = fidelities;
    std::sort(sorted.begin(), sorted.end());
    row.p50 = nearest_rank_percentile(sorted, 0.50);
    row.p90 = nearest_rank_percentile(sorted, 0.90);
    row.p99 = nearest_rank_percentile(sorted, 0.99);
  }
  return row;
}

std::string scenario_csv(ScenarioKind kind, const std::vector<ResultRow>& rows) {
  std::string out;
  switch (kind) {
    case ScenarioKind::NodeSweep:
    case ScenarioKind::MemorySweep:
      out = "sweep_value,mean_fidelity,std_fidelity,num_successes,num_trials,mean_completion_ns\n";
      for (const ResultRow& r : rows) {
        out += format6(r.sweep_value) + "," + format6(r.mean_fidelity) + "," +
               format6(r.std_fidelity) + "," + std::to_string(r.num_successes) + "," +
               std::to_string(r.num_trials) + "," + format6(r.mean_completion_ns) + "\n";
      }
      return out;
    case ScenarioKind::OrderingSweep:
      out = "series,sweep_value,mean_fidelity,std_fidelity,num_successes,num_trials,"
            "mean_completion_ns,distill_attempts,distill_successes,clean_fraction\n";
      for (const ResultRow& r : rows) {
        out += r.series + "," + format6(r.sweep_value) + "," + format6(r.mean_fidelity) + "," +
               format6(r.std_fidelity) + "," + std::to_string(r.num_successes) + "," +
               std::to_string(r.num_trials) + "," + format6(r.mean_completion_ns) + "," +
               std::to_string(r.distill_attempts) + "," + std::to_string(r.distill_successes) +
               "," + format6(r.clean_fraction) + "\n";
      }
      return out;
    case ScenarioKind::DistilComparison:
      out = "series,sweep_value,mean_fidelity,std_fidelity,p50,p90,p99,num_successes,"
            "num_trials,mean_completion_ns,mean_pairs_consumed\n";
      for (const ResultRow& r : rows) {
        out += r.series + "," + format6(r.sweep_value) + "," + format6(r.mean_fidelity) + "," +
               format6(r.std_fidelity) + "," + format6(r.p50) + "," + format6(r.p90) + "," +
               format6(r.p99) + "," + std::to_string(r.num_successes) + "," +
               std::to_string(r.num_trials) + "," + format6(r.mean_completion_ns) + "," +
               format6(r.mean_pairs_consumed) + "\n";
      }
      return out;
    case ScenarioKind::PurificationCurve:
      return out;  // produced directly by the analytic table
  }
  return out;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, std::ostream* trace) {
  validate_spec(spec);
  ScenarioResult result;

  if (spec.kind == ScenarioKind::PurificationCurve) {
    std::vector<double> grid = spec.sweep_values;
    if (grid.empty()) {
      for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
    }
    result.csv = bell::purification_curve_csv(bell::purification_curve(grid, spec.curve_rounds));
    return result;
  }

  std::string per_trial =
      "series,sweep_value,trial,seed,completed,fidelity,completion_ns,swaps,"
      "distill_attempts,distill_successes,pairs_consumed,e2e_copies\n";

  std::vector<double> points = spec.sweep_values;
  if (spec.kind == ScenarioKind::DistilComparison) {
    points = {spec.base_config.distances_km.front()};
  }

  for (const ArmSpec& arm : arms_for(spec)) {
    for (std::size_t point = 0; point < points.size(); ++point) {
      const net::NetworkConfig config = config_for_point(spec, points[point]);
      std::vector<proto::TrialRecord> records;
      records.reserve(static_cast<std::size_t>(spec.trials_per_point));
      for (int trial = 0; trial < spec.trials_per_point; ++trial) {
        const std::uint64_t seed = derive_trial_seed(spec.seed, point, trial);
        proto::SwapRequest request = base_request(static_cast<std::uint64_t>(trial));
        request.ordering = arm.ordering;
        request.policy = arm.policy;
        request.distillation_rounds = arm.rounds;
        if (trace != nullptr) {
          (*trace) << "# " << (arm.series.empty() ? "run" : arm.series) << " sweep="
                   << format6(points[point]) << " trial=" << trial << " seed=" << seed << "\n";
        }
        const TrialRun run = run_single_trial(config, request, seed, trace);
        const proto::TrialRecord& r = run.record;
        records.push_back(r);
        per_trial += arm.series + "," + format6(points[point]) + "," + std::to_string(trial) +
                     "," + std::to_string(seed) + "," + (r.completed ? "1" : "0") + "," +
                     format6(r.end_to_end_fidelity) + "," +
                     std::to_string(r.completion_time_ns) + "," +
                     std::to_string(r.swaps_performed) + "," +
                     std::to_string(r.distillation_attempts) + "," +
                     std::to_string(r.distillation_successes) + "," +
                     std::to_string(r.pairs_consumed) + "," +
                     std::to_string(r.end_to_end_copies) + "\n";
      }
      result.rows.push_back(aggregate_trials(arm.series, points[point], records));
    }
  }
  result.csv = scenario_csv(spec.kind, result.rows);
  result.per_trial_csv = per_trial;
  return result;
}

std::string run_metadata_json(const ScenarioSpec& spec, const std::string& config_text) {
  nlohmann::json meta;
  meta["tool"] = "entsim";
  meta["version"] = "0.1.0";
  switch (spec.kind) {
    case ScenarioKind::NodeSweep:
      meta["scenario"] = "node-sweep";
      break;
    case ScenarioKind::MemorySweep:
      meta["scenario"] = "memory-sweep";
      break;
    case ScenarioKind::OrderingSweep:
      meta["scenario"] = "ordering-sweep";
      break;
    case ScenarioKind::DistilComparison:
      meta["scenario"] = "distil-comparison";
      break;
    case ScenarioKind::PurificationCurve:
      meta["scenario"] = "purification-curve";
      break;
  }
  meta["seed"] = spec.seed;
  meta["trials_per_point"] = spec.trials_per_point;
  meta["sweep_values"] = spec.sweep_values;
  meta["distillation_rounds"] = spec.distillation_rounds;
  meta["curve_rounds"] = spec.curve_rounds;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "0x%016llx",
                static_cast<unsigned long long>(fnv1a64(config_text)));
  meta["config_hash_fnv1a64"] = hash;
  return meta.dump(2) + "\n";
}

namespace {

std::vector<double> default_sweep(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::NodeSweep:
      return {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    case ScenarioKind::MemorySweep:
      return {2, 6, 10, 14, 18};
    case ScenarioKind::OrderingSweep:
      return {10, 50, 100, 200, 300};
    default:
      return {};
  }
}

bool write_file(const std::string& path, const std::string& content, std::string& error) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    error = "cannot open '" + path + "' for writing";
    return false;
  }
  out << content;
  if (!out) {
    error = "failed writing '" + path + "'";
    return false;
  }
  return true;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"entsim - entanglement network fidelity simulator"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "run a scenario and write CSV results");

  std::string scenario_name;
  std::string config_path;
  std::string out_path;
  std::string dump_path;
  std::vector<double> sweep;
  int trials = 100;
  int rounds = -1;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool trace = false;

  run->add_option("--scenario", scenario_name,
                  "node-sweep | memory-sweep | ordering-sweep | distil-comparison | "
                  "purification-curve")
      ->required();
  run->add_option("--config", config_path, "network configuration JSON");
  run->add_option("--out", out_path, "output CSV path")->required();
  run->add_option("--trials", trials, "trials per sweep point");
  auto* seed_opt = run->add_option("--seed", seed, "master seed (overrides the config seed)");
  run->add_option("--sweep", sweep, "sweep values (comma separated)")->delimiter(',');
  run->add_option("--rounds", rounds, "purification rounds");
  run->add_flag("--trace", trace, "write an event trace next to the output");
  run->add_option("--per-trial-dump", dump_path, "write per-trial records to this CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  seed_given = seed_opt->count() > 0;

  ScenarioSpec spec;
  if (scenario_name == "node-sweep") {
    spec.kind = ScenarioKind::NodeSweep;
  } else if (scenario_name == "memory-sweep") {
    spec.kind = ScenarioKind::MemorySweep;
  } else if (scenario_name == "ordering-sweep") {
    spec.kind = ScenarioKind::OrderingSweep;
  } else if (scenario_name == "distil-comparison") {
    spec.kind = ScenarioKind::DistilComparison;
  } else if (scenario_name == "purification-curve") {
    spec.kind = ScenarioKind::PurificationCurve;
  } else {
    std::fprintf(stderr, "entsim: unknown scenario '%s'\n", scenario_name.c_str());
    return 2;
  }

  std::string config_text;
  try {
    if (spec.kind != ScenarioKind::PurificationCurve) {
      if (config_path.empty()) {
        std::fprintf(stderr, "entsim: --config is required for this scenario\n");
        return 2;
      }
      std::ifstream in(config_path);
      if (!in) {
        std::fprintf(stderr, "entsim: cannot open config '%s'\n", config_path.c_str());
        return 2;
      }
      std::ostringstream buffer;
      buffer << in.rdbuf();
      config_text = buffer.str();
      spec.base_config = net::parse_network_config(config_text);
    }
    spec.trials_per_point = trials;
    spec.seed = seed_given ? seed : spec.base_config.seed;
    spec.sweep_values = sweep.empty() ? default_sweep(spec.kind) : sweep;
    if (rounds >= 0) {
      spec.distillation_rounds = rounds;
      spec.curve_rounds = rounds;
    }

    std::ofstream trace_file;
    std::ostream* trace_sink = nullptr;
    if (trace) {
      trace_file.open(out_path + ".trace", std::ios::binary);
      if (!trace_file) {
        std::fprintf(stderr, "entsim: cannot open trace output\n");
        return 2;
      }
      trace_sink = &trace_file;
    }

    const ScenarioResult result = run_scenario(spec, trace_sink);

    std::string error;
    if (!write_file(out_path, result.csv, error)) {
      std::fprintf(stderr, "entsim: %s\n", error.c_str());
      return 2;
    }
    if (!write_file(out_path + ".meta.json", run_metadata_json(spec, config_text), error)) {
      std::fprintf(stderr, "entsim: %s\n", error.c_str());
      return 2;
    }
    if (!dump_path.empty() && !result.per_trial_csv.empty()) {
      if (!write_file(dump_path, result.per_trial_csv, error)) {
        std::fprintf(stderr, "entsim: %s\n", error.c_str());
        return 2;
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "entsim: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace entsim::exp
