#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "entsim/netmodel.hpp"
#include "entsim/protocols.hpp"

// Scenario runners: parameter sweeps over independent trials, each with its
// own engine instance and derived seed, aggregated into CSV tables. Trials
// are independent by construction; the CSV is assembled in (sweep value,
// trial index) order regardless of execution order.
namespace entsim::exp {

enum class ScenarioKind {
  NodeSweep,
  MemorySweep,
  OrderingSweep,
  DistilComparison,
  PurificationCurve,
};

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::NodeSweep;
  std::vector<double> sweep_values;  // node counts, memory positions, or km
  int trials_per_point = 100;
  net::NetworkConfig base_config;
  std::uint64_t seed = 0;
  int distillation_rounds = 1;  // ordering sweep and distillation comparison
  int curve_rounds = 3;         // purification curve
};

struct ResultRow {
  std::string series;  // empty for single-series scenarios
  double sweep_value = 0.0;
  double mean_fidelity = 0.0;
  double std_fidelity = 0.0;
  int num_successes = 0;
  int num_trials = 0;
  double mean_completion_ns = 0.0;
  int distill_attempts = 0;
  int distill_successes = 0;
  double clean_fraction = 0.0;  // completed trials with no failed purification
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
  double mean_pairs_consumed = 0.0;
};

struct TrialRun {
  proto::TrialRecord record;
  std::vector<net::PairUsage> usages;
};

/// One request on a fresh engine + network seeded with trial_seed.
TrialRun run_single_trial(const net::NetworkConfig& config, const proto::SwapRequest& request,
                          std::uint64_t trial_seed, std::ostream* trace = nullptr);

/// Deterministic per-trial seed: same (master, point, trial) across arms so
/// paired comparisons share their draw streams.
std::uint64_t derive_trial_seed(std::uint64_t master, std::uint64_t point, std::uint64_t trial);

struct ScenarioResult {
  std::vector<ResultRow> rows;
  std::string csv;
  std::string per_trial_csv;
};

ScenarioResult run_scenario(const ScenarioSpec& spec, std::ostream* trace = nullptr);

ResultRow aggregate_trials(const std::string& series, double sweep_value,
                           const std::vector<proto::TrialRecord>& records);

std::string scenario_csv(ScenarioKind kind, const std::vector<ResultRow>& rows);

/// Sidecar JSON with the seed, trial count and a hash of the configuration.
std::string run_metadata_json(const ScenarioSpec& spec, const std::string& config_text);

std::uint64_t fnv1a64(const std::string& text);

/// `entsim run --scenario ... --config ... --out ...`; returns the exit code.
int cli_main(int argc, const char* const* argv);

}  // namespace entsim::exp
