// Acceptance suite: every release criterion runs at its pinned tolerance and
// prints one PASS/FAIL line. The binary exits nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "entsim/bell.hpp"
#include "entsim/dense_oracle.hpp"
#include "entsim/experiments.hpp"
#include "entsim/netmodel.hpp"
#include "entsim/protocols.hpp"

using namespace entsim;

namespace {

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bell::BellState random_bell_state(std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  bell::BellState v;
  for (int i = 0; i < 4; ++i) v[i] = expo(rng);
  return v / v.sum();
}

struct CircuitOutcome {
  double success_probability = 0.0;
  bell::BellState post_state;
};

// Independent full-circuit execution of one purification round (rotations,
// transversal CNOTs, target measurement, post-selection on equal outcomes).
CircuitOutcome circuit_purification(const bell::BellState& keep, const bell::BellState& sac) {
  using dense::DenseState;
  using dense::GateSpec;
  const double half_pi = std::acos(0.0);
  DenseState state =
      DenseState::tensor(DenseState::bell_diagonal(keep), DenseState::bell_diagonal(sac));
  state = apply_gate(state, GateSpec::rx(half_pi, 0));
  state = apply_gate(state, GateSpec::rx(half_pi, 2));
  state = apply_gate(state, GateSpec::rx(-half_pi, 1));
  state = apply_gate(state, GateSpec::rx(-half_pi, 3));
  state = apply_gate(state, GateSpec::cnot(0, 2));
  state = apply_gate(state, GateSpec::cnot(1, 3));

  double success = 0.0;
  dense::CMatrix accumulated = dense::CMatrix::Zero(4, 4);
  for (const auto& first : measure_qubit(state, 2)) {
    for (const auto& second : measure_qubit(first.post_state, 3)) {
      if (first.outcome != second.outcome) continue;
      const double joint = first.probability * second.probability;
      success += joint;
      accumulated += joint * partial_trace(second.post_state, {2, 3}).matrix();
    }
  }
  const DenseState post = DenseState::from_density_matrix(accumulated / success);
  return {success, project_bell_diagonal(post).state};
}

net::NetworkConfig chain_config(int switches, double internode_km, int positions) {
  net::NetworkConfig config;
  config.num_switches = switches;
  config.distances_km.assign(switches + 1, internode_km);
  config.num_memory_positions = positions;
  config.source_delay_ns = 1.0;
  config.noise_model = net::NoiseModelKind::None;
  config.memory_decay_rate_per_ns = 0.0;
  config.coherence_time_ns = 1'000'000'000'000'000;
  config.seed = 1;
  config.runtime_ns = 1'000'000'000;
  return config;
}

// Dispersion threshold calibrated so a 150 km link destroys half its pairs.
net::NetworkConfig pmd_config(int switches, double internode_km, int positions) {
  net::NetworkConfig config = chain_config(switches, internode_km, positions);
  config.noise_model = net::NoiseModelKind::PmdDepolarization;
  config.pmd.tau_coh_ps = 1.6;
  config.pmd.coefficient_ps_per_sqrt_km = 1.6 / std::sqrt(150.0);
  config.pmd.relative_std = 1.0;
  return config;
}

void criterion_1_dejmps_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const bell::BellState keep = random_bell_state(rng);
    const bell::BellState sac = random_bell_state(rng);
    const CircuitOutcome oracle = circuit_purification(keep, sac);
    const bell::PurificationOutcome closed = bell::dejmps_round(keep, sac);
    worst =
        std::max(worst, std::abs(oracle.success_probability - closed.success_probability));
    worst = std::max(worst, (oracle.post_state - closed.post_state).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(start);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "purification map vs circuit oracle, 500 random pairs, max |err| = %.3g "
                "(tol 1e-10), %.1f s (limit 30)",
                worst, elapsed);
  report("C01", worst <= 1e-10 && elapsed < 30.0, detail);
}

void criterion_2_swap_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const bell::BellState a = random_bell_state(rng);
    const bell::BellState b = random_bell_state(rng);
    const dense::DenseState joint = dense::DenseState::tensor(
        dense::DenseState::bell_diagonal(a), dense::DenseState::bell_diagonal(b));
    const auto oracle = project_bell_diagonal(bell_measurement_with_correction(joint, {1, 2}, 3));
    worst = std::max(worst, (oracle.state - bell::swap_compose(a, b)).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(start);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "swap composition vs measurement+correction oracle, 500 random pairs, "
                "max |err| = %.3g (tol 1e-10), %.1f s (limit 60)",
                worst, elapsed);
  report("C02", worst <= 1e-10 && elapsed < 60.0, detail);
}

void criterion_3_spot_value() {
  const bell::BellState input{0.85, 0.05, 0.05, 0.05};
  const bell::PurificationOutcome out = bell::dejmps_round(input, input);
  const double f_err = std::abs(out.post_state[0] - 0.725 / 0.82);
  const double p_err = std::abs(out.success_probability - 0.82);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "identical copies at 0.85: |F' - 0.725/0.82| = %.3g (tol 1e-9), "
                "|p - 0.82| = %.3g (tol 1e-12)",
                f_err, p_err);
  report("C03", f_err <= 1e-9 && p_err <= 1e-12, detail);
}

void criterion_4_two_rounds() {
  const auto rows = bell::purification_curve({0.2}, 2);
  const double two_rounds = rows[2].fidelity;
  const bool value_ok = std::abs(two_rounds - 0.52565 / 0.541) <= 1e-9 && two_rounds > 0.95;

  bool gains_ok = true;
  std::string violations;
  for (double p = 0.05; p <= 0.60 + 1e-9; p += 0.05) {
    const auto curve = bell::purification_curve({p}, 3);
    const double gain2 = curve[2].fidelity - curve[1].fidelity;
    const double gain3 = curve[3].fidelity - curve[2].fidelity;
    if (!(gain3 < gain2)) {
      gains_ok = false;
      char buf[32];
      std::snprintf(buf, sizeof(buf), " p=%.2f", p);
      violations += buf;
    }
  }
  std::string detail = "two rounds from F=0.85 give " + std::to_string(two_rounds) +
                       " (pinned 0.52565/0.541 to 1e-9, must exceed 0.95)";
  if (!value_ok) detail += " [VALUE MISMATCH]";
  detail += "; round-3 gain < round-2 gain on p in {0.05..0.60}";
  if (!gains_ok) {
    detail += ": violated at" + violations +
              " (real property of the oracle-validated recursion near its repelling "
              "lambda1=1/2 fixed point; gains shrink only for p <= ~0.49)";
  }
  report("C04", value_ok && gains_ok, detail);
}

void criterion_5_gain_region() {
  bool ok = true;
  for (double p = 0.01; p < 2.0 / 3.0 - 1e-9; p += 0.01) {
    const bell::BellState s = bell::depolarized_state(p);
    if (!(bell::dejmps_round(s, s).post_state[0] > s[0])) ok = false;
  }
  const bell::BellState beyond = bell::depolarized_state(0.7);
  if (!(bell::dejmps_round(beyond, beyond).post_state[0] <= beyond[0])) ok = false;

  const bell::BellState boundary = bell::depolarized_state(2.0 / 3.0);
  const double l1 = boundary[0];
  const double l1_post = bell::dejmps_round(boundary, boundary).post_state[0];
  const bool fixed_point = std::abs(l1 - 0.5) <= 1e-12 && std::abs(l1_post - 0.5) <= 1e-12;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "gain for p<2/3, loss at p=0.7, fixed point at p=2/3: lambda1 = %.15f, "
                "lambda1' = %.15f (tol 1e-12)",
                l1, l1_post);
  report("C05", ok && fixed_point, detail);
}

void criterion_6_noiseless_identity() {
  bool ok = true;
  double worst = 0.0;
  for (int nodes : {2, 3, 4, 6, 8, 10, 12}) {
    for (int trial = 0; trial < 100; ++trial) {
      net::NetworkConfig config = chain_config(nodes - 2, 15.0, 2);
      const std::uint64_t seed = exp::derive_trial_seed(600, static_cast<std::uint64_t>(nodes),
                                                        static_cast<std::uint64_t>(trial));
      proto::SwapRequest request;
      request.request_id = 1;
      const exp::TrialRun run = exp::run_single_trial(config, request, seed);
      if (!run.record.completed) ok = false;
      worst = std::max(worst, std::abs(run.record.end_to_end_fidelity - 1.0));
    }
  }
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "noise disabled, chains of 2..12 nodes, 100 trials each: max |F - 1| = %.3g "
                "(tol 1e-12)",
                worst);
  report("C06", ok && worst <= 1e-12, detail);
}

void criterion_7_calculus_agreement() {
  bool ok = true;
  double worst = 0.0;
  const double rate = 2e-7;
  for (int nodes = 2; nodes <= 12; ++nodes) {
    for (std::uint64_t seed : {71ull, 72ull, 73ull}) {
      net::NetworkConfig config = chain_config(nodes - 2, 20.0, 2);
      config.memory_decay_rate_per_ns = rate;
      proto::SwapRequest request;
      request.request_id = 1;
      const exp::TrialRun run = exp::run_single_trial(config, request, seed);
      if (!run.record.completed) {
        ok = false;
        continue;
      }
      // Replay: decay every consumed physical segment over its recorded
      // storage intervals and fold with swap composition.
      std::vector<bell::BellState> per_link(nodes - 1, bell::perfect_state());
      std::vector<bool> seen(static_cast<std::size_t>(nodes - 1), false);
      for (const net::PairUsage& usage : run.usages) {
        if (usage.consumed_left < 0 || usage.consumed_right < 0) continue;
        if (usage.link < 0 || seen[static_cast<std::size_t>(usage.link)]) {
          ok = false;
          continue;
        }
        bell::BellState s = bell::apply_memory_decay(
            usage.initial, {rate, static_cast<double>(usage.consumed_left - usage.stored_at)});
        s = bell::apply_memory_decay(
            s, {rate, static_cast<double>(usage.consumed_right - usage.stored_at)});
        per_link[static_cast<std::size_t>(usage.link)] = s;
        seen[static_cast<std::size_t>(usage.link)] = true;
      }
      bell::BellState folded = per_link[0];
      for (int link = 1; link < nodes - 1; ++link) {
        folded = bell::swap_compose(folded, per_link[link]);
      }
      for (bool s : seen) ok = ok && s;
      worst = std::max(
          worst, std::abs(bell::fidelity_to_phi_plus(folded) - run.record.end_to_end_fidelity));
    }
  }
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "simulated fidelity vs analytic swap+decay fold, chains of 2..12 nodes: "
                "max |err| = %.3g (tol 1e-10)",
                worst);
  report("C07", ok && worst <= 1e-10, detail);
}

void criterion_8_determinism() {
  bool ok = true;
  std::string which;

  const auto check_scenario = [&](const char* name, const exp::ScenarioSpec& spec) {
    const exp::ScenarioResult first = exp::run_scenario(spec);
    for (int repeat = 1; repeat < 3; ++repeat) {
      const exp::ScenarioResult again = exp::run_scenario(spec);
      if (again.csv != first.csv || again.per_trial_csv != first.per_trial_csv) {
        ok = false;
        which += std::string(" ") + name;
        return;
      }
    }
  };

  exp::ScenarioSpec node;
  node.kind = exp::ScenarioKind::NodeSweep;
  node.sweep_values = {2, 4, 6};
  node.trials_per_point = 10;
  node.base_config = pmd_config(1, 100.0, 4);
  node.seed = 81;
  check_scenario("node-sweep", node);

  exp::ScenarioSpec memory;
  memory.kind = exp::ScenarioKind::MemorySweep;
  memory.sweep_values = {2, 6};
  memory.trials_per_point = 10;
  memory.base_config = pmd_config(1, 100.0, 2);
  memory.seed = 82;
  check_scenario("memory-sweep", memory);

  exp::ScenarioSpec ordering;
  ordering.kind = exp::ScenarioKind::OrderingSweep;
  ordering.sweep_values = {50.0, 150.0};
  ordering.trials_per_point = 10;
  ordering.base_config = pmd_config(1, 50.0, 4);
  ordering.seed = 83;
  ordering.distillation_rounds = 1;
  check_scenario("ordering-sweep", ordering);

  exp::ScenarioSpec distil;
  distil.kind = exp::ScenarioKind::DistilComparison;
  distil.trials_per_point = 10;
  distil.base_config = pmd_config(1, 80.0, 4);
  distil.seed = 84;
  distil.distillation_rounds = 1;
  check_scenario("distil-comparison", distil);

  exp::ScenarioSpec curve;
  curve.kind = exp::ScenarioKind::PurificationCurve;
  curve.curve_rounds = 3;
  check_scenario("purification-curve", curve);

  report("C08", ok,
         ok ? "3 repetitions of every scenario produced byte-identical CSV output"
            : "non-deterministic output in:" + which);
}

void criterion_9_memory_trend() {
  const auto start = std::chrono::steady_clock::now();
  exp::ScenarioSpec spec;
  spec.kind = exp::ScenarioKind::MemorySweep;
  spec.sweep_values = {2, 6, 10, 14, 18};
  spec.trials_per_point = 200;
  spec.base_config = pmd_config(1, 100.0, 2);
  spec.seed = 90;
  const exp::ScenarioResult result = exp::run_scenario(spec);

  int violations = 0;
  bool within_std = true;
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    const double drop = result.rows[i - 1].mean_fidelity - result.rows[i].mean_fidelity;
    if (drop > 0.0) {
      ++violations;
      const double allowed =
          std::max(result.rows[i - 1].std_fidelity, result.rows[i].std_fidelity);
      if (drop > allowed) within_std = false;
    }
  }
  const double elapsed = seconds_since(start);
  char detail[240];
  std::snprintf(detail, sizeof(detail),
                "2-hop 100 km, m in {2,6,10,14,18}, 200 trials/point: means %.3f %.3f %.3f "
                "%.3f %.3f, %d adjacent decrease(s) (allow <=1 within 1 std), %.1f s "
                "(limit 300)",
                result.rows[0].mean_fidelity, result.rows[1].mean_fidelity,
                result.rows[2].mean_fidelity, result.rows[3].mean_fidelity,
                result.rows[4].mean_fidelity, violations, elapsed);
  report("C09", violations <= 1 && within_std && elapsed < 300.0, detail);
}

void criterion_10_node_shape() {
  const auto start = std::chrono::steady_clock::now();
  exp::ScenarioSpec spec;
  spec.kind = exp::ScenarioKind::NodeSweep;
  spec.sweep_values = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  spec.trials_per_point = 200;
  spec.base_config = pmd_config(0, 300.0, 4);  // total 300 km, split per point
  spec.seed = 100;
  const exp::ScenarioResult result = exp::run_scenario(spec);

  std::size_t argmin = 0;
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    if (result.rows[i].mean_fidelity < result.rows[argmin].mean_fidelity) argmin = i;
  }
  const auto se = [&](std::size_t i) {
    return result.rows[i].std_fidelity /
           std::sqrt(static_cast<double>(result.rows[i].num_successes));
  };
  const bool interior = argmin > 0 && argmin + 1 < result.rows.size();
  const double low = result.rows[argmin].mean_fidelity;
  const bool pronounced = interior &&
                          result.rows.front().mean_fidelity - low > se(0) + se(argmin) &&
                          result.rows.back().mean_fidelity - low >
                              se(result.rows.size() - 1) + se(argmin);
  const double elapsed = seconds_since(start);
  char detail[240];
  std::snprintf(detail, sizeof(detail),
                "300 km total, 2..12 nodes, destruction 0.5 at 150 km: ends %.3f / %.3f, "
                "interior extremum %.3f at %d nodes, %.1f s (limit 600)",
                result.rows.front().mean_fidelity, result.rows.back().mean_fidelity, low,
                static_cast<int>(spec.sweep_values[argmin]), elapsed);
  report("C10", pronounced && elapsed < 600.0, detail);
}

void criterion_11_ordering_comparison() {
  exp::ScenarioSpec spec;
  spec.kind = exp::ScenarioKind::OrderingSweep;
  spec.sweep_values = {10.0, 50.0, 100.0, 200.0, 300.0};
  spec.trials_per_point = 100;
  spec.base_config = pmd_config(1, 10.0, 4);
  spec.seed = 110;
  spec.distillation_rounds = 1;
  const exp::ScenarioResult result = exp::run_scenario(spec);

  const std::size_t points = spec.sweep_values.size();
  const exp::ResultRow& ps_short = result.rows[0];
  const exp::ResultRow& ps_long = result.rows[points - 1];
  const exp::ResultRow& sp_short = result.rows[points];
  const exp::ResultRow& sp_long = result.rows[2 * points - 1];

  const double pooled_short =
      std::sqrt(0.5 * (ps_short.std_fidelity * ps_short.std_fidelity +
                       sp_short.std_fidelity * sp_short.std_fidelity));
  const bool short_ok = std::abs(ps_short.mean_fidelity - sp_short.mean_fidelity) <=
                        std::max(pooled_short, 1e-12);
  const bool long_fidelity_ok = ps_long.mean_fidelity >= sp_long.mean_fidelity;
  const bool long_success_ok = ps_long.clean_fraction <= sp_long.clean_fraction;
  char detail[280];
  std::snprintf(detail, sizeof(detail),
                "paired seeds, 100 trials/point: short |%.4f - %.4f| <= %.4f; long PS %.4f "
                ">= SP %.4f with purification success %.3f <= %.3f",
                ps_short.mean_fidelity, sp_short.mean_fidelity, pooled_short,
                ps_long.mean_fidelity, sp_long.mean_fidelity, ps_long.clean_fraction,
                sp_long.clean_fraction);
  report("C11", short_ok && long_fidelity_ok && long_success_ok, detail);
}

void criterion_12_pmd_sampling() {
  net::LinkSpec link;
  link.noise = net::NoiseModelKind::PmdDepolarization;
  link.length_km = 150.0;
  link.pmd.tau_coh_ps = 1.6;
  link.pmd.coefficient_ps_per_sqrt_km = 1.6 / std::sqrt(150.0);  // mean equals threshold
  link.pmd.relative_std = 1.0;

  // Normal-CDF oracle for the clamped draw: for a positive threshold the
  // clamp at zero never moves mass across it.
  const double mean = link.pmd.coefficient_ps_per_sqrt_km * std::sqrt(link.length_km);
  const double stddev = link.pmd.relative_std * mean;
  const double analytic =
      0.5 * std::erfc((link.pmd.tau_coh_ps - mean) / (stddev * std::sqrt(2.0)));

  engine::RngStream rng(1200);
  const int draws = 1'000'000;
  int destroyed = 0;
  for (int i = 0; i < draws; ++i) {
    if (net::sample_channel_depolarization(link, rng)) ++destroyed;
  }
  const double freq = static_cast<double>(destroyed) / draws;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "1e6 threshold draws at mean = tau_coh: frequency %.5f vs analytic %.5f "
                "(tol 0.002)",
                freq, analytic);
  report("C12", std::abs(freq - analytic) <= 0.002, detail);
}

}  // namespace

int main() {
  criterion_1_dejmps_oracle();
  criterion_2_swap_oracle();
  criterion_3_spot_value();
  criterion_4_two_rounds();
  criterion_5_gain_region();
  criterion_6_noiseless_identity();
  criterion_7_calculus_agreement();
  criterion_8_determinism();
  criterion_9_memory_trend();
  criterion_10_node_shape();
  criterion_11_ordering_comparison();
  criterion_12_pmd_sampling();
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
