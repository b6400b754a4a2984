#include "entsim/netmodel.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace entsim::net {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) {
  throw std::invalid_argument("config: " + message);
}

void reject_unknown_fields(const json& object, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (const auto& item : object.items()) {
    if (!allowed.contains(item.key())) {
      config_error("unknown field '" + item.key() + "' in " + where);
    }
  }
}

double require_number(const json& object, const std::string& key) {
  if (!object.contains(key)) config_error("missing field '" + key + "'");
  if (!object[key].is_number()) config_error("field '" + key + "' must be a number");
  return object[key].get<double>();
}

double normal_upper_tail(double threshold, double mean, double stddev) {
  if (stddev <= 0.0) return mean >= threshold ? 1.0 : 0.0;
  return 0.5 * std::erfc((threshold - mean) / (stddev * std::sqrt(2.0)));
}

}  // namespace

NetworkConfig parse_network_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) config_error("top level must be an object");
  reject_unknown_fields(root,
                        {"num_switches", "distances_km", "num_memory_positions",
                         "source_delay_ns", "noise_model", "noise_params",
                         "memory_decay_rate_per_ns", "coherence_time_ns", "seed", "runtime_ns"},
                        "network config");

  NetworkConfig config;
  config.num_switches = static_cast<int>(require_number(root, "num_switches"));
  if (config.num_switches < 0) config_error("num_switches must be non-negative");

  if (!root.contains("distances_km") || !root["distances_km"].is_array()) {
    config_error("distances_km must be an array");
  }
  for (const auto& d : root["distances_km"]) {
    if (!d.is_number()) config_error("distances_km entries must be numbers");
    config.distances_km.push_back(d.get<double>());
  }
  if (static_cast<int>(config.distances_km.size()) != config.num_switches + 1) {
    config_error("distances_km needs exactly num_switches + 1 entries");
  }
  for (double d : config.distances_km) {
    if (!(d > 0.0)) config_error("distances must be positive");
  }

  config.num_memory_positions = static_cast<int>(require_number(root, "num_memory_positions"));
  if (config.num_memory_positions < 2 || config.num_memory_positions % 2 != 0) {
    config_error("num_memory_positions must be even and at least 2");
  }

  config.source_delay_ns = require_number(root, "source_delay_ns");
  if (config.source_delay_ns < 0.0) config_error("source_delay_ns must be non-negative");

  if (!root.contains("noise_model") || !root["noise_model"].is_string()) {
    config_error("noise_model must be a string");
  }
  const std::string model = root["noise_model"].get<std::string>();
  if (model == "none") {
    config.noise_model = NoiseModelKind::None;
    if (root.contains("noise_params")) config_error("noise_params not allowed for model 'none'");
  } else if (model == "pmd") {
    config.noise_model = NoiseModelKind::PmdDepolarization;
    if (!root.contains("noise_params") || !root["noise_params"].is_object()) {
      config_error("noise_params object required for model 'pmd'");
    }
    const json& params = root["noise_params"];
    reject_unknown_fields(params, {"tau_coh_ps", "pmd_coefficient_ps_per_sqrt_km", "relative_std"},
                          "noise_params");
    config.pmd.coefficient_ps_per_sqrt_km =
        require_number(params, "pmd_coefficient_ps_per_sqrt_km");
    config.pmd.tau_coh_ps =
        params.contains("tau_coh_ps") ? require_number(params, "tau_coh_ps") : 1.6;
    config.pmd.relative_std =
        params.contains("relative_std") ? require_number(params, "relative_std") : 1.0;
    if (!(config.pmd.tau_coh_ps > 0.0) || !(config.pmd.coefficient_ps_per_sqrt_km > 0.0) ||
        !(config.pmd.relative_std > 0.0)) {
      config_error("pmd parameters must be positive");
    }
  } else if (model == "length_squared") {
    config.noise_model = NoiseModelKind::LengthSquaredDepolarization;
    if (!root.contains("noise_params") || !root["noise_params"].is_object()) {
      config_error("noise_params object required for model 'length_squared'");
    }
    const json& params = root["noise_params"];
    reject_unknown_fields(params, {"p_in", "eta_db_per_km2"}, "noise_params");
    config.length_squared.p_in = require_number(params, "p_in");
    config.length_squared.eta_db_per_km2 = require_number(params, "eta_db_per_km2");
    if (config.length_squared.p_in < 0.0 || config.length_squared.p_in > 1.0 ||
        config.length_squared.eta_db_per_km2 < 0.0) {
      config_error("length_squared parameters out of range");
    }
  } else {
    config_error("noise_model must be 'none', 'pmd' or 'length_squared'");
  }

  config.memory_decay_rate_per_ns = require_number(root, "memory_decay_rate_per_ns");
  if (config.memory_decay_rate_per_ns < 0.0) {
    config_error("memory_decay_rate_per_ns must be non-negative");
  }

  config.coherence_time_ns = static_cast<SimTime>(require_number(root, "coherence_time_ns"));
  if (config.coherence_time_ns <= 0) config_error("coherence_time_ns must be positive");

  if (!root.contains("seed") || !root["seed"].is_number_unsigned()) {
    config_error("seed must be an unsigned integer");
  }
  config.seed = root["seed"].get<std::uint64_t>();

  config.runtime_ns = static_cast<SimTime>(require_number(root, "runtime_ns"));
  if (config.runtime_ns <= 0) config_error("runtime_ns must be positive");
  return config;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_network_config(buffer.str());
}

std::string to_json(const NetworkConfig& config) {
  json root;
  root["num_switches"] = config.num_switches;
  root["distances_km"] = config.distances_km;
  root["num_memory_positions"] = config.num_memory_positions;
  root["source_delay_ns"] = config.source_delay_ns;
  switch (config.noise_model) {
    case NoiseModelKind::None:
      root["noise_model"] = "none";
      break;
    case NoiseModelKind::PmdDepolarization:
      root["noise_model"] = "pmd";
      root["noise_params"] = {
          {"tau_coh_ps", config.pmd.tau_coh_ps},
          {"pmd_coefficient_ps_per_sqrt_km", config.pmd.coefficient_ps_per_sqrt_km},
          {"relative_std", config.pmd.relative_std}};
      break;
    case NoiseModelKind::LengthSquaredDepolarization:
      root["noise_model"] = "length_squared";
      root["noise_params"] = {{"p_in", config.length_squared.p_in},
                              {"eta_db_per_km2", config.length_squared.eta_db_per_km2}};
      break;
  }
  root["memory_decay_rate_per_ns"] = config.memory_decay_rate_per_ns;
  root["coherence_time_ns"] = config.coherence_time_ns;
  root["seed"] = config.seed;
  root["runtime_ns"] = config.runtime_ns;
  return root.dump(2);
}

double length_squared_depolarization_probability(const LinkSpec& link) {
  if (link.noise != NoiseModelKind::LengthSquaredDepolarization) {
    throw std::logic_error("netmodel: link does not use the length-squared model");
  }
  const double exponent =
      link.length_km * link.length_km * link.length_squared.eta_db_per_km2 / 10.0;
  return 1.0 - (1.0 - link.length_squared.p_in) * std::pow(10.0, -exponent);
}

double destruction_probability(const LinkSpec& link) {
  switch (link.noise) {
    case NoiseModelKind::None:
      return 0.0;
    case NoiseModelKind::LengthSquaredDepolarization:
      return length_squared_depolarization_probability(link);
    case NoiseModelKind::PmdDepolarization: {
      const double mean = link.pmd.coefficient_ps_per_sqrt_km * std::sqrt(link.length_km);
      const double stddev = link.pmd.relative_std * mean;
      if (mean <= 0.0) return link.pmd.tau_coh_ps <= 0.0 ? 1.0 : 0.0;
      // Clamping the draw at zero leaves the upper tail unchanged for a
      // positive threshold.
      return normal_upper_tail(link.pmd.tau_coh_ps, mean, stddev);
    }
  }
  return 0.0;
}

bool sample_channel_depolarization(const LinkSpec& link, engine::RngStream& rng) {
  if (link.noise != NoiseModelKind::PmdDepolarization) {
    throw std::logic_error("netmodel: link does not use the dispersion model");
  }
  const double mean = link.pmd.coefficient_ps_per_sqrt_km * std::sqrt(link.length_km);
  const double stddev = link.pmd.relative_std * mean;
  const double dispersion_ps = std::max(0.0, rng.normal(mean, stddev));
  return dispersion_ps >= link.pmd.tau_coh_ps;
}

Network::Network(engine::Simulator& sim, const NetworkConfig& config)
    : sim_(sim), config_(config), rng_pool_(config.seed) {
  const int num_nodes = config.num_switches + 2;
  if (static_cast<int>(config.distances_km.size()) != num_nodes - 1) {
    throw std::invalid_argument("netmodel: distances list does not match the node count");
  }
  if (config.num_memory_positions % 2 != 0 || config.num_memory_positions < 2) {
    throw std::invalid_argument("netmodel: memory positions must be even and at least 2");
  }
  for (double d : config.distances_km) {
    if (!(d > 0.0)) throw std::invalid_argument("netmodel: distances must be positive");
  }

  connections_per_link_ = config.num_memory_positions / 2;

  for (int node = 0; node < num_nodes; ++node) {
    NodeSpec spec;
    spec.role = (node == 0 || node == num_nodes - 1) ? NodeRole::EndNode : NodeRole::Switch;
    spec.num_memory_positions = config.num_memory_positions;
    spec.num_links = (spec.role == NodeRole::EndNode) ? 1 : 2;
    spec.name = node == 0               ? "alice"
                : node == num_nodes - 1 ? "bob"
                                        : "switch" + std::to_string(node);
    topology_.nodes.push_back(spec);
    node_entities_.push_back(sim_.register_entity(spec.name));
    slots_.emplace_back(config.num_memory_positions, -1);
  }

  for (int link = 0; link < num_nodes - 1; ++link) {
    LinkSpec spec;
    spec.length_km = config.distances_km[link];
    spec.source_delay_ns = config.source_delay_ns;
    spec.noise = config.noise_model;
    spec.pmd = config.pmd;
    spec.length_squared = config.length_squared;
    topology_.edges.push_back(spec);
    topology_.edge_weight.push_back(1.0 - 0.75 * destruction_probability(spec));
    cconn_entities_.push_back(sim_.register_entity("cconn." + std::to_string(link)));

    // Connection j binds the left node's forward (even) position 2j to the
    // right node's backward (odd) position 2j + 1.
    link_conns_.emplace_back();
    for (int j = 0; j < connections_per_link_; ++j) {
      Connection conn;
      conn.id = static_cast<int>(connections_.size());
      conn.link = link;
      conn.index_in_link = j;
      conn.left_node = link;
      conn.left_pos = 2 * j;
      conn.right_node = link + 1;
      conn.right_pos = 2 * j + 1;
      const std::string name = "qconn." + std::to_string(link) + "." + std::to_string(j);
      conn.entity = sim_.register_entity(name);
      conn.rng = rng_pool_.stream(name);
      link_conns_.back().push_back(conn.id);
      connections_.push_back(std::move(conn));
    }
  }
}

const std::vector<int>& Network::link_connections(int link) const {
  return link_conns_.at(link);
}

int Network::connection_link(int conn) const { return connections_.at(conn).link; }

SimTime Network::classical_delay_ns(int link) const {
  return topology_.edges.at(link).classical_delay_ns();
}

int& Network::slot(int node, int pos) { return slots_.at(node).at(pos); }

void Network::start_sources() {
  for (std::size_t conn = 0; conn < connections_.size(); ++conn) {
    begin_generation(static_cast<int>(conn));
  }
}

void Network::begin_generation(int conn_id) {
  Connection& conn = connections_[conn_id];
  conn.phase = Connection::Phase::Generating;
  const SimTime emit_at =
      sim_.now() + static_cast<SimTime>(std::llround(config_.source_delay_ns));
  sim_.schedule(emit_at, {kSourceEmit, static_cast<std::uint64_t>(conn_id)}, conn.entity, {},
                [this, conn_id](const engine::Event&) { on_emit(conn_id); });
}

void Network::on_emit(int conn_id) {
  Connection& conn = connections_[conn_id];
  const LinkSpec& link = topology_.edges[conn.link];
  bool destroyed = false;
  switch (link.noise) {
    case NoiseModelKind::None:
      break;
    case NoiseModelKind::PmdDepolarization:
      destroyed = sample_channel_depolarization(link, conn.rng);
      break;
    case NoiseModelKind::LengthSquaredDepolarization:
      destroyed = conn.rng.uniform01() < length_squared_depolarization_probability(link);
      break;
  }
  const SimTime arrive_at = sim_.now() + link.quantum_delay_ns();
  sim_.schedule(
      arrive_at, {kPairArrival, static_cast<std::uint64_t>(conn_id)}, conn.entity, destroyed,
      [this, conn_id, destroyed](const engine::Event&) { on_arrival(conn_id, destroyed); },
      destroyed ? "destroyed" : "intact");
}

void Network::on_arrival(int conn_id, bool destroyed) {
  Connection& conn = connections_[conn_id];
  if (slot(conn.left_node, conn.left_pos) != -1 || slot(conn.right_node, conn.right_pos) != -1) {
    throw std::logic_error("netmodel: arrival into an occupied slot");
  }
  PairRecord pair;
  pair.id = static_cast<int>(pairs_.size());
  pair.lambda = destroyed ? bell::maximally_mixed_state() : bell::perfect_state();
  pair.origin_link = conn.link;
  pair.origin_conn = conn_id;
  pair.left_node = conn.left_node;
  pair.left_pos = conn.left_pos;
  pair.right_node = conn.right_node;
  pair.right_pos = conn.right_pos;
  pair.left_stored_at = pair.right_stored_at = sim_.now();
  pair.left_deadline = pair.right_deadline = sim_.now() + config_.coherence_time_ns;
  pair.active = true;

  PairUsage usage;
  usage.link = conn.link;
  usage.conn = conn_id;
  usage.initial = pair.lambda;
  usage.stored_at = sim_.now();
  pair.left_usage = pair.right_usage = static_cast<int>(usages_.size());
  usages_.push_back(usage);

  slot(conn.left_node, conn.left_pos) = pair.id;
  slot(conn.right_node, conn.right_pos) = pair.id;
  conn.phase = Connection::Phase::Holding;
  conn.held_pair = pair.id;
  pairs_.push_back(pair);
  ++pairs_generated_;
  if (destroyed) ++pairs_destroyed_;
}

std::optional<int> Network::connection_pair(int conn_id) const {
  const Connection& conn = connections_.at(conn_id);
  if (conn.phase != Connection::Phase::Holding || conn.held_pair < 0) return std::nullopt;
  // The held pair may have been merged away; report only a live physical pair.
  const PairRecord& p = pairs_.at(conn.held_pair);
  return p.active ? std::optional<int>(conn.held_pair) : std::nullopt;
}

bell::BellState Network::lambda_decayed_to(const PairRecord& p, SimTime now) const {
  bell::BellState s = p.lambda;
  const double rate = config_.memory_decay_rate_per_ns;
  s = bell::apply_memory_decay(s, {rate, static_cast<double>(now - p.left_stored_at)});
  s = bell::apply_memory_decay(s, {rate, static_cast<double>(now - p.right_stored_at)});
  return s;
}

double Network::estimated_fidelity(const PairRecord& p, SimTime now) const {
  return bell::fidelity_to_phi_plus(lambda_decayed_to(p, now));
}

int Network::swap_merge(int left_pair, int right_pair, SimTime now) {
  PairRecord& a = pairs_.at(left_pair);
  PairRecord& b = pairs_.at(right_pair);
  if (!a.active || !b.active) throw std::logic_error("netmodel: swap on a consumed pair");
  if (a.right_node != b.left_node) throw std::logic_error("netmodel: pairs do not share a node");

  const double rate = config_.memory_decay_rate_per_ns;
  const bell::BellState left_state =
      bell::apply_memory_decay(a.lambda, {rate, static_cast<double>(now - a.right_stored_at)});
  const bell::BellState right_state =
      bell::apply_memory_decay(b.lambda, {rate, static_cast<double>(now - b.left_stored_at)});

  usages_.at(a.right_usage).consumed_right = now;
  usages_.at(b.left_usage).consumed_left = now;

  PairRecord merged;
  merged.id = static_cast<int>(pairs_.size());
  merged.lambda = bell::swap_compose(left_state, right_state);
  merged.left_node = a.left_node;
  merged.left_pos = a.left_pos;
  merged.right_node = b.right_node;
  merged.right_pos = b.right_pos;
  merged.left_stored_at = a.left_stored_at;
  merged.right_stored_at = b.right_stored_at;
  merged.left_deadline = a.left_deadline;
  merged.right_deadline = b.right_deadline;
  merged.left_usage = a.left_usage;
  merged.right_usage = b.right_usage;
  merged.active = true;

  // The inner halves are measured away; the outer slots now reference the
  // merged pair. Inner slots free up and their sources resume.
  const int inner_left_node = a.right_node, inner_left_pos = a.right_pos;
  const int inner_right_node = b.left_node, inner_right_pos = b.left_pos;
  a.active = false;
  b.active = false;
  slot(merged.left_node, merged.left_pos) = merged.id;
  slot(merged.right_node, merged.right_pos) = merged.id;
  const int merged_id = merged.id;
  pairs_.push_back(std::move(merged));  // may invalidate a and b
  free_slot(inner_left_node, inner_left_pos);
  free_slot(inner_right_node, inner_right_pos);
  return merged_id;
}

void Network::apply_purification(int kept_pair, const bell::BellState& post_state, SimTime now) {
  PairRecord& p = pairs_.at(kept_pair);
  if (!p.active) throw std::logic_error("netmodel: purification on a consumed pair");
  p.lambda = post_state;
  p.left_stored_at = p.right_stored_at = now;

  PairUsage usage;
  usage.link = p.origin_link;
  usage.conn = p.origin_conn;
  usage.initial = post_state;
  usage.stored_at = now;
  p.left_usage = p.right_usage = static_cast<int>(usages_.size());
  usages_.push_back(usage);
}

void Network::touch_for_purification(int pair_id, SimTime now) {
  PairRecord& p = pairs_.at(pair_id);
  usages_.at(p.left_usage).consumed_left = now;
  usages_.at(p.right_usage).consumed_right = now;
}

void Network::set_pending(int pair_id, bool pending) { pairs_.at(pair_id).pending = pending; }

void Network::release_pair(int pair_id, SimTime) {
  PairRecord& p = pairs_.at(pair_id);
  if (!p.active) return;
  p.active = false;
  // Clear before freeing so the connection sees both slots empty.
  slot(p.left_node, p.left_pos) = -1;
  slot(p.right_node, p.right_pos) = -1;
  free_slot(p.left_node, p.left_pos);
  free_slot(p.right_node, p.right_pos);
}

bell::BellState Network::consume_delivered(int pair_id, SimTime now) {
  PairRecord& p = pairs_.at(pair_id);
  if (!p.active) throw std::logic_error("netmodel: delivered pair is not active");
  const bell::BellState s = lambda_decayed_to(p, now);
  usages_.at(p.left_usage).consumed_left = now;
  usages_.at(p.right_usage).consumed_right = now;
  release_pair(pair_id, now);
  return s;
}

void Network::free_slot(int node, int pos) {
  slot(node, pos) = -1;
  for (Connection& conn : connections_) {
    if ((conn.left_node == node && conn.left_pos == pos) ||
        (conn.right_node == node && conn.right_pos == pos)) {
      if (conn.phase == Connection::Phase::Holding &&
          slot(conn.left_node, conn.left_pos) == -1 &&
          slot(conn.right_node, conn.right_pos) == -1) {
        conn.held_pair = -1;
        begin_generation(conn.id);
      }
      return;
    }
  }
}

void Network::send_classical(int link, Side, ClassicalMessage message) {
  const SimTime deliver_at = sim_.now() + classical_delay_ns(link);
  const int destination = message.destination_node;
  sim_.schedule(deliver_at, {kClassicalDelivery, static_cast<std::uint64_t>(destination)},
                cconn_entities_.at(link), std::move(message.payload), nullptr,
                std::move(message.detail));
}

std::string Network::event_kind_name(engine::EventKind kind) {
  switch (kind) {
    case kSourceEmit:
      return "source_emit";
    case kPairArrival:
      return "pair_arrival";
    case kClassicalDelivery:
      return "classical_delivery";
    default:
      return "kind" + std::to_string(kind);
  }
}

}  // namespace entsim::net
