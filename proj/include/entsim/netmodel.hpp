#pragma once

#include <any>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "entsim/bell.hpp"
#include "entsim/engine.hpp"

// Declarative network description plus the live entities (nodes, memory
// slots, EPR sources, channels) bound to one engine instance.
namespace entsim::net {

using engine::EntityId;
using engine::SimTime;

/// Event kinds published by the network layer.
enum : engine::EventKind {
  kSourceEmit = 1,
  kPairArrival = 2,
  kClassicalDelivery = 3,
};

/// Signal propagation in fiber at 200000 km/s: 5000 ns per km.
inline constexpr double kNsPerKm = 5000.0;

inline SimTime propagation_delay_ns(double length_km) {
  return static_cast<SimTime>(std::llround(length_km * kNsPerKm));
}

enum class NodeRole { EndNode, Switch };

enum class NoiseModelKind { None, PmdDepolarization, LengthSquaredDepolarization };

struct PmdDepolarizationParams {
  double tau_coh_ps = 1.6;                 // coherence-time threshold
  double coefficient_ps_per_sqrt_km = 0.0; // mean dispersion time scaling vs length
  double relative_std = 1.0;               // std as a fraction of the mean
};

struct LengthSquaredDepolarizationParams {
  double p_in = 0.0;             // photon loss on fiber entry
  double eta_db_per_km2 = 0.0;   // unit channel attenuation
};

struct NodeSpec {
  NodeRole role = NodeRole::EndNode;
  int num_memory_positions = 2;
  int num_links = 1;
  int request_buffer_size = 1;  // end nodes only
  std::string name;
};

struct LinkSpec {
  double length_km = 0.0;
  double source_delay_ns = 0.0;
  NoiseModelKind noise = NoiseModelKind::None;
  PmdDepolarizationParams pmd;
  LengthSquaredDepolarizationParams length_squared;

  SimTime classical_delay_ns() const { return propagation_delay_ns(length_km); }
  SimTime quantum_delay_ns() const { return propagation_delay_ns(length_km); }
};

struct NetworkTopology {
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> edges;
  std::vector<double> edge_weight;  // expected fidelity of pairs created on the edge
};

/// Simulation input. JSON object with exactly these fields (unknown fields
/// are rejected): num_switches, distances_km[], num_memory_positions,
/// source_delay_ns, noise_model (+ noise_params), memory_decay_rate_per_ns,
/// coherence_time_ns, seed, runtime_ns.
struct NetworkConfig {
  int num_switches = 0;
  std::vector<double> distances_km;
  int num_memory_positions = 2;
  double source_delay_ns = 1.0;
  NoiseModelKind noise_model = NoiseModelKind::None;
  PmdDepolarizationParams pmd;
  LengthSquaredDepolarizationParams length_squared;
  double memory_decay_rate_per_ns = 0.0;
  SimTime coherence_time_ns = 0;
  std::uint64_t seed = 0;
  SimTime runtime_ns = 1'000'000'000;
};

NetworkConfig parse_network_config(const std::string& json_text);
NetworkConfig load_network_config(const std::string& path);
std::string to_json(const NetworkConfig& config);

/// Probability that the pair carried over the link arrives fully
/// depolarized, per the link's noise model.
double destruction_probability(const LinkSpec& link);

/// Length-squared depolarization probability
/// 1 - (1 - p_in) 10^(-L^2 eta / 10); link must use that model.
double length_squared_depolarization_probability(const LinkSpec& link);

/// Dispersion-threshold channel sample: draws the dispersion time as a
/// normal with mean coefficient*sqrt(L) and std relative_std*mean, clamped
/// at zero, and reports destruction when it reaches the coherence
/// threshold. Link must use the dispersion model.
bool sample_channel_depolarization(const LinkSpec& link, engine::RngStream& rng);

enum class Side { Left = 0, Right = 1 };

/// One live Bell pair (physical, or virtual after swaps). The lambda vector
/// excludes storage decay not yet applied: each side decays lazily over
/// [*_stored_at, consumption time].
struct PairRecord {
  int id = -1;
  bell::BellState lambda = bell::perfect_state();
  int origin_link = -1;  // -1 once the pair spans several links
  int origin_conn = -1;
  int left_node = -1;
  int left_pos = -1;
  int right_node = -1;
  int right_pos = -1;
  SimTime left_stored_at = 0;
  SimTime right_stored_at = 0;
  SimTime left_deadline = 0;
  SimTime right_deadline = 0;
  int left_usage = -1;  // index into usage log
  int right_usage = -1;
  bool pending = false;  // locked while a purification outcome is in flight
  bool active = false;

  bool usable_at(SimTime now) const {
    return active && !pending && now <= left_deadline && now <= right_deadline;
  }
};

/// Lifetime of one pair state segment, for replaying the exact decay
/// intervals a delivered state went through.
struct PairUsage {
  int link = -1;
  int conn = -1;
  bell::BellState initial = bell::perfect_state();
  SimTime stored_at = 0;
  SimTime consumed_left = -1;
  SimTime consumed_right = -1;
};

struct ClassicalMessage {
  int destination_node = -1;
  std::any payload;
  std::string detail;  // trace text
};

class Network {
 public:
  Network(engine::Simulator& sim, const NetworkConfig& config);

  const NetworkTopology& topology() const { return topology_; }
  const NetworkConfig& config() const { return config_; }
  int num_nodes() const { return static_cast<int>(topology_.nodes.size()); }
  int num_links() const { return static_cast<int>(topology_.edges.size()); }
  int connections_per_link() const { return connections_per_link_; }

  /// Global ids of the quantum connections serving one link, in slot order.
  const std::vector<int>& link_connections(int link) const;
  int connection_link(int conn) const;
  SimTime classical_delay_ns(int link) const;

  /// Starts every EPR source; first emissions happen after one source delay.
  void start_sources();

  const PairRecord& pair(int id) const { return pairs_.at(id); }
  /// Pair currently held by a connection's slots, if any.
  std::optional<int> connection_pair(int conn) const;

  bell::BellState lambda_decayed_to(const PairRecord& p, SimTime now) const;
  double estimated_fidelity(const PairRecord& p, SimTime now) const;

  /// Swap at the shared node: consumes the inner halves (applying their
  /// storage decay), composes the outer pair, frees the inner slots.
  /// Returns the id of the new spanning pair.
  int swap_merge(int left_pair, int right_pair, SimTime now);

  /// Applies a successful purification outcome: the kept pair takes the
  /// conditional state with both storage clocks restarted at `now`.
  void apply_purification(int kept_pair, const bell::BellState& post_state, SimTime now);

  /// Marks the kept-pair halves as consumed at `now` for the usage log
  /// (purification gates act on them at that moment).
  void touch_for_purification(int pair_id, SimTime now);

  void set_pending(int pair_id, bool pending);

  /// Releases a pair outright (expiry, purification failure, or delivery).
  /// Slots are freed and their sources resume generation.
  void release_pair(int pair_id, SimTime now);

  /// Reads the delivered pair: applies both end decays at `now`, consumes
  /// the pair, returns the final state.
  bell::BellState consume_delivered(int pair_id, SimTime now);

  /// Classical hop between adjacent nodes over the link's fiber delay.
  void send_classical(int link, Side from_side, ClassicalMessage message);

  const std::vector<PairUsage>& usage_log() const { return usages_; }
  int pairs_generated() const { return pairs_generated_; }
  int pairs_destroyed_by_channel() const { return pairs_destroyed_; }

  EntityId node_entity(int node) const { return node_entities_.at(node); }
  double memory_decay_rate() const { return config_.memory_decay_rate_per_ns; }

  /// Named substream off the trial's master seed.
  engine::RngStream rng_stream(std::string_view name) const { return rng_pool_.stream(name); }

  static std::string event_kind_name(engine::EventKind kind);

 private:
  struct Connection {
    int id = -1;
    int link = -1;
    int index_in_link = -1;
    int left_node = -1;
    int left_pos = -1;
    int right_node = -1;
    int right_pos = -1;
    EntityId entity = 0;
    engine::RngStream rng{1};
    enum class Phase { Idle, Generating, Holding } phase = Phase::Idle;
    int held_pair = -1;
  };

  void begin_generation(int conn);
  void on_emit(int conn);
  void on_arrival(int conn, bool destroyed);
  void free_slot(int node, int pos);
  int& slot(int node, int pos);

  engine::Simulator& sim_;
  NetworkConfig config_;
  NetworkTopology topology_;
  engine::RngPool rng_pool_;
  int connections_per_link_ = 0;
  std::vector<Connection> connections_;
  std::vector<std::vector<int>> link_conns_;
  std::vector<std::vector<int>> slots_;  // per node, position -> pair id or -1
  std::vector<PairRecord> pairs_;
  std::vector<PairUsage> usages_;
  std::vector<EntityId> node_entities_;
  std::vector<EntityId> cconn_entities_;
  int pairs_generated_ = 0;
  int pairs_destroyed_ = 0;
};

}  // namespace entsim::net
